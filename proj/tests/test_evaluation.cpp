#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "screener/encode.hpp"
#include "screener/evaluation.hpp"
#include "screener/synthetic.hpp"
#include "matchers.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace screener;

namespace {

struct Scored {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<double> weights;
};

// Random score sets with deliberate ties and non-uniform weights.
Scored random_scored(std::uint64_t seed, std::size_t n, bool ties, bool weighted) {
    Rng rng(seed);
    Scored s;
    for (std::size_t i = 0; i < n; ++i) {
        double v = rng.uniform_double();
        if (ties) v = std::floor(v * 8.0) / 8.0;
        s.scores.push_back(v);
        s.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        s.weights.push_back(weighted ? 0.25 + rng.uniform_double() : 1.0);
    }
    s.labels[0] = 0;
    s.labels[n - 1] = 1;
    return s;
}

FeatureMatrix synthetic_matrix(int n_samples, int n_questions, int n_informative,
                               std::uint64_t seed, double noise = 0.0) {
    SyntheticSpec spec;
    spec.n_questions = n_questions;
    spec.n_informative = n_informative;
    spec.n_samples = n_samples;
    spec.noise_rate = noise;
    spec.seed = seed;
    return encode_features(generate_synthetic(spec).data, adir_like_spec(n_questions));
}

}  // namespace

TEST_CASE("weight balancing equalizes every age-label cell", "[evaluation]") {
    const std::vector<int> ages = {20, 20, 60, 60, 60, 60};
    const std::vector<std::uint8_t> labels = {1, 0, 1, 1, 0, 0};
    const auto scheme = balance_weights(ages, labels, {48});

    REQUIRE(scheme.cells.size() == 4);
    // target per cell = 6 samples / 4 cells = 1.5 total weight each
    CHECK(scheme.weights == std::vector<double>{1.5, 1.5, 0.75, 0.75, 0.75, 0.75});
    for (const auto& cell : scheme.cells) {
        CHECK(cell.count * cell.per_sample_weight == Catch::Approx(1.5));
    }
    double total = 0.0;
    for (const double w : scheme.weights) total += w;
    CHECK(total == Catch::Approx(6.0));

    // Without age boundaries only the labels define cells.
    const auto label_only = balance_weights(ages, labels, {});
    REQUIRE(label_only.cells.size() == 2);
    CHECK(label_only.weights[0] == Catch::Approx(1.0));  // 3 positives, 3 negatives

    try {
        balance_weights({20, 20}, {1, 1}, {48});
        FAIL("expected weighting error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::weighting);
        CHECK(e.details().contains("age_group"));
    }
}

TEST_CASE("dataset overload matches the raw-vector weighting", "[evaluation]") {
    SyntheticSpec spec;
    spec.n_questions = 4;
    spec.n_informative = 0;
    spec.n_samples = 60;
    spec.seed = 3;
    const auto made = generate_synthetic(spec);
    const auto a = balance_weights(made.data);
    std::vector<int> ages;
    std::vector<std::uint8_t> labels;
    for (const auto& sheet : made.data.sheets) {
        ages.push_back(sheet.age_months);
        labels.push_back(sheet.label == Label::positive ? 1 : 0);
    }
    CHECK(a.weights == balance_weights(ages, labels).weights);
}

TEST_CASE("stratified folds partition each class evenly", "[evaluation]") {
    Rng rng(5);
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 83; ++i) labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    const int n_folds = 5;
    const auto folds = stratified_folds(labels, n_folds, 11);

    REQUIRE(folds.size() == 5);
    std::set<std::uint32_t> seen;
    std::size_t n_pos = 0;
    for (const auto l : labels) n_pos += l;
    for (const auto& fold : folds) {
        CHECK(std::is_sorted(fold.begin(), fold.end()));
        std::size_t fold_pos = 0;
        for (const auto i : fold) {
            CHECK(seen.insert(i).second);  // disjoint
            fold_pos += labels[i];
        }
        CHECK(fold_pos >= n_pos / n_folds);
        CHECK(fold_pos <= n_pos / n_folds + 1);
    }
    CHECK(seen.size() == labels.size());

    const auto again = stratified_folds(labels, n_folds, 11);
    CHECK(again == folds);
    CHECK(stratified_folds(labels, n_folds, 12) != folds);

    CHECK_THROWS_MATCHES(stratified_folds({1, 1, 0, 0}, 3, 1), Error,
                         ErrorKindIs(ErrorKind::fold));
    CHECK_THROWS_MATCHES(stratified_folds(labels, 1, 1), Error,
                         ErrorKindIs(ErrorKind::parameter));
}

TEST_CASE("roc curve matches a hand-built example", "[evaluation]") {
    const std::vector<double> scores = {0.9, 0.8, 0.4, 0.2};
    const std::vector<std::uint8_t> labels = {1, 0, 1, 0};
    const std::vector<double> weights = {1, 1, 1, 1};
    const auto curve = roc(scores, labels, weights);

    CHECK(curve.auc == Catch::Approx(0.75));
    REQUIRE(curve.points.size() == 5);
    CHECK(std::isinf(curve.points[0].threshold));
    CHECK(curve.points[0].sensitivity == 0.0);
    CHECK(curve.points[0].specificity == 1.0);
    CHECK(curve.points[1].threshold == 0.9);
    CHECK(curve.points[1].sensitivity == Catch::Approx(0.5));
    CHECK(curve.points[1].specificity == 1.0);
    CHECK(curve.points[2].specificity == Catch::Approx(0.5));
    CHECK(curve.points[3].sensitivity == 1.0);
    CHECK(curve.points[4].sensitivity == 1.0);
    CHECK(curve.points[4].specificity == 0.0);
}

TEST_CASE("trapezoidal auc equals weighted pair concordance", "[evaluation]") {
    for (std::uint64_t trial = 0; trial < 30; ++trial) {
        const auto s = random_scored(900 + trial, 40 + trial, trial % 2 == 0, trial % 3 != 0);
        const auto curve = roc(s.scores, s.labels, s.weights);
        const double brute = oracle::pair_concordance_auc(s.scores, s.labels, s.weights);
        INFO("trial " << trial);
        CHECK(std::abs(curve.auc - brute) <= 1e-12);
    }
}

TEST_CASE("roc rejects unusable inputs", "[evaluation]") {
    CHECK_THROWS_MATCHES(roc({0.5, 0.6}, {1, 1}, {1, 1}), Error,
                         ErrorKindIs(ErrorKind::evaluation));
    CHECK_THROWS_MATCHES(roc({0.5}, {1, 0}, {1, 1}), Error, ErrorKindIs(ErrorKind::contract));
}

TEST_CASE("threshold tuning picks the largest qualifying threshold", "[evaluation]") {
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
        const auto s = random_scored(1400 + trial, 30 + trial, true, trial % 2 == 0);
        const auto curve = roc(s.scores, s.labels, s.weights);
        for (const double target : {0.6, 0.8, 1.0}) {
            const auto tuned = tune_threshold(curve, target);
            const double swept = oracle::sweep_threshold(s.scores, s.labels, s.weights, target);
            INFO("trial " << trial << " target " << target);
            CHECK(tuned.threshold == swept);
            CHECK(tuned.sensitivity >= target);
            const auto check = metrics_at_threshold(s.scores, s.labels, s.weights, tuned.threshold);
            CHECK(check.sensitivity == Catch::Approx(tuned.sensitivity));
            CHECK(check.specificity == Catch::Approx(tuned.specificity));
        }
    }
    const auto curve = roc({0.1, 0.9}, {0, 1}, {1, 1});
    CHECK_THROWS_MATCHES(tune_threshold(curve, 0.0), Error, ErrorKindIs(ErrorKind::parameter));
    CHECK_THROWS_MATCHES(tune_threshold(curve, 1.5), Error, ErrorKindIs(ErrorKind::parameter));
}

TEST_CASE("threshold metrics count weighted outcomes", "[evaluation]") {
    const std::vector<double> scores = {0.9, 0.7, 0.4, 0.1};
    const std::vector<std::uint8_t> labels = {1, 0, 1, 0};
    const std::vector<double> weights = {2, 1, 1, 4};
    const auto m = metrics_at_threshold(scores, labels, weights, 0.5);
    CHECK(m.tp == 2.0);
    CHECK(m.fp == 1.0);
    CHECK(m.fn == 1.0);
    CHECK(m.tn == 4.0);
    CHECK(m.sensitivity == Catch::Approx(2.0 / 3.0));
    CHECK(m.specificity == Catch::Approx(4.0 / 5.0));
    CHECK(m.accuracy == Catch::Approx(6.0 / 8.0));
    CHECK(m.balanced_accuracy == Catch::Approx((2.0 / 3.0 + 4.0 / 5.0) / 2.0));
}

TEST_CASE("quantiles interpolate and weighted quantiles step", "[evaluation]") {
    CHECK(quantile({5, 1, 3}, 0.0) == 1.0);
    CHECK(quantile({5, 1, 3}, 0.5) == 3.0);
    CHECK(quantile({5, 1, 3}, 1.0) == 5.0);
    CHECK(quantile({5, 1, 3}, 0.25) == Catch::Approx(2.0));
    CHECK_THROWS_MATCHES(quantile({}, 0.5), Error, ErrorKindIs(ErrorKind::contract));

    const std::vector<std::pair<double, double>> vw = {{1, 1}, {2, 1}, {3, 2}};
    CHECK(weighted_quantile(vw, 0.25) == 1.0);
    CHECK(weighted_quantile(vw, 0.5) == 2.0);
    CHECK(weighted_quantile(vw, 0.75) == 3.0);
    CHECK(weighted_quantile(vw, 1.0) == 3.0);

    // Against a brute-force reading: smallest value with cumulative weight >= q.
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::pair<double, double>> sample;
        for (int i = 0; i < 20; ++i) {
            sample.push_back({std::floor(rng.uniform_double() * 6.0), 0.5 + rng.uniform_double()});
        }
        for (const double q : {0.1, 0.5, 0.9}) {
            auto sorted = sample;
            std::sort(sorted.begin(), sorted.end());
            double total = 0.0;
            for (const auto& [v, w] : sorted) total += w;
            double acc = 0.0, expect = sorted.back().first;
            for (const auto& [v, w] : sorted) {
                acc += w;
                if (acc >= q * total) {
                    expect = v;
                    break;
                }
            }
            CHECK(weighted_quantile(sample, q) == expect);
        }
    }
}

TEST_CASE("bootstrapped cv reports pooled out-of-fold performance", "[evaluation]") {
    const auto m = synthetic_matrix(120, 8, 3, 41);
    CVConfig cfg;
    cfg.n_folds = 4;
    cfg.n_bootstrap_rounds = 6;
    cfg.seed = 2;
    ForestParams params;
    params.n_trees = 30;
    params.seed = 7;

    const auto summary = bootstrapped_cv(m, cfg, forest_cv_trainer(params));
    CHECK(summary.rounds_requested == 6);
    CHECK(summary.rounds_completed == 6);
    CHECK(summary.failures.empty());
    CHECK(summary.auc.per_round.size() == 6);
    CHECK(summary.thresholds.size() == 6);
    CHECK(summary.auc.mean > 0.9);
    CHECK(summary.auc.ci_low <= summary.auc.mean);
    CHECK(summary.auc.mean <= summary.auc.ci_high);
    CHECK(summary.sensitivity.mean >= 0.8 - 1e-12);  // tuned to the target

    const auto again = bootstrapped_cv(m, cfg, forest_cv_trainer(params));
    CHECK(again.auc.per_round == summary.auc.per_round);
}

TEST_CASE("cv tolerates isolated round failures but aborts on systemic ones", "[evaluation]") {
    const auto m = synthetic_matrix(60, 4, 2, 42);
    CVConfig cfg;
    cfg.n_folds = 3;
    cfg.seed = 9;

    // Label-echo trainer that fails on every fold seed of round 0.
    std::set<std::uint64_t> round0;
    for (std::size_t f = 0; f < 3; ++f) round0.insert(derive_seed(cfg.seed, 0, f + 1));
    const CvTrainer flaky = [&](const FeatureMatrix& fm, const std::vector<std::uint32_t>&,
                                const std::vector<std::uint32_t>& test_rows,
                                std::uint64_t fit_seed) {
        if (round0.count(fit_seed)) {
            throw Error(ErrorKind::training, "synthetic failure");
        }
        std::vector<double> scores;
        for (const auto r : test_rows) scores.push_back(fm.labels[r] ? 0.9 : 0.1);
        return scores;
    };

    cfg.n_bootstrap_rounds = 20;  // one bad round out of twenty: tolerated
    const auto summary = bootstrapped_cv(m, cfg, flaky);
    CHECK(summary.rounds_completed == 19);
    REQUIRE(summary.failures.size() == 1);
    CHECK(summary.failures[0].find("synthetic failure") != std::string::npos);
    CHECK(summary.auc.mean == 1.0);

    cfg.n_bootstrap_rounds = 5;  // one bad round out of five: too many
    try {
        bootstrapped_cv(m, cfg, flaky);
        FAIL("expected evaluation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::evaluation);
        CHECK(e.details().at("failed") == 1);
    }
}

TEST_CASE("cv restricted to a row subset never scores outside it", "[evaluation]") {
    const auto m = synthetic_matrix(90, 4, 2, 43);
    std::vector<std::uint32_t> subset;
    for (std::uint32_t r = 0; r < 60; ++r) subset.push_back(r);

    CVConfig cfg;
    cfg.n_folds = 3;
    cfg.n_bootstrap_rounds = 2;
    std::set<std::uint32_t> touched;
    const CvTrainer spy = [&](const FeatureMatrix& fm, const std::vector<std::uint32_t>& train_rows,
                              const std::vector<std::uint32_t>& test_rows, std::uint64_t) {
        touched.insert(train_rows.begin(), train_rows.end());
        touched.insert(test_rows.begin(), test_rows.end());
        std::vector<double> scores;
        for (const auto r : test_rows) scores.push_back(fm.labels[r] ? 1.0 : 0.0);
        return scores;
    };
    const auto summary = bootstrapped_cv(m, cfg, spy, subset);
    CHECK(summary.rounds_completed == 2);
    for (const auto r : touched) CHECK(r < 60);
}

TEST_CASE("a trainer returning the wrong score count is rejected", "[evaluation]") {
    const auto m = synthetic_matrix(60, 4, 2, 44);
    CVConfig cfg;
    cfg.n_folds = 3;
    cfg.n_bootstrap_rounds = 1;
    const CvTrainer broken = [](const FeatureMatrix&, const std::vector<std::uint32_t>&,
                                const std::vector<std::uint32_t>&, std::uint64_t) {
        return std::vector<double>{0.5};
    };
    CHECK_THROWS_MATCHES(bootstrapped_cv(m, cfg, broken), Error,
                         ErrorKindIs(ErrorKind::evaluation));
}

TEST_CASE("grid search ranks candidates by mean auc with stable ties", "[evaluation]") {
    const auto m = synthetic_matrix(80, 6, 3, 45);
    CVConfig cfg;
    cfg.n_folds = 3;
    cfg.n_bootstrap_rounds = 2;
    cfg.seed = 1;

    std::vector<ForestParams> grid;
    for (const int trees : {2, 10, 25}) {
        ForestParams p;
        p.n_trees = trees;
        p.seed = 5;
        grid.push_back(p);
    }
    const auto result = grid_search(m, grid, cfg);
    REQUIRE(result.leaderboard.size() == 3);
    CHECK(std::is_sorted(result.leaderboard.begin(), result.leaderboard.end(),
                         [](const GridEntry& a, const GridEntry& b) {
                             return a.summary.auc.mean > b.summary.auc.mean;
                         }));
    CHECK(result.best.key() == result.leaderboard.front().params.key());
    CHECK(result.best_summary.auc.mean == result.leaderboard.front().summary.auc.mean);

    CHECK_THROWS_MATCHES(grid_search(m, {}, cfg), Error, ErrorKindIs(ErrorKind::parameter));
}

TEST_CASE("roc csv export keeps full double precision", "[evaluation]") {
    testutil::TempDir dir;
    RocCurve curve;
    curve.points.push_back({1.0 / 3.0, 2.0 / 3.0, 1.0 / 7.0});
    roc_to_csv(curve, dir.file("roc.csv"));
    const auto text = testutil::slurp(dir.file("roc.csv"));
    CHECK(text.find("0.33333333333333331") != std::string::npos);
    CHECK(text.find("0.66666666666666663") != std::string::npos);
    CHECK(text.find("0.14285714285714285") != std::string::npos);
}
