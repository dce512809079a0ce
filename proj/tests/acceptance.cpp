// End-to-end acceptance checks, one per shipped guarantee. Each check prints
// a single PASS/FAIL line; run with a number (1-10) for one check or with no
// arguments for the full sweep. The exit code is the number of failures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "screener/dataset.hpp"
#include "screener/encode.hpp"
#include "screener/encoding_spec.hpp"
#include "screener/evaluation.hpp"
#include "screener/forest.hpp"
#include "screener/logistic.hpp"
#include "screener/pipeline.hpp"
#include "screener/selection.hpp"
#include "screener/synthetic.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace screener;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream out;
    out.precision(digits);
    out << std::fixed << v;
    return out.str();
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::size_t common = 0;
    for (const auto& x : sa) common += sb.count(x);
    const std::size_t unions = sa.size() + sb.size() - common;
    return unions == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(unions);
}

Dataset planted_dataset(int n_samples, int n_questions, int n_informative, std::uint64_t seed,
                        double noise, double shift = 0.0,
                        Instrument instrument = Instrument::adir_like) {
    SyntheticSpec spec;
    spec.n_questions = n_questions;
    spec.n_informative = n_informative;
    spec.n_samples = n_samples;
    spec.noise_rate = noise;
    spec.age_signal_shift = shift;
    spec.seed = seed;
    spec.instrument = instrument;
    return generate_synthetic(spec).data;
}

// --- 1: cumulative severity encoding, checked code by code ---

Outcome check_severity_mapping() {
    QuestionCoding coding;
    coding.mode = EncodingMode::severity;
    coding.chain = {0, 1, 2, 3};
    coding.equality = {7};
    coding.null_codes = {8, 9};

    const auto features = detail::question_features(37, coding);
    const std::vector<std::string> expected_names = {"q37==0", "q37>=1", "q37>=2", "q37>=3",
                                                     "q37==7"};
    if (features.size() != expected_names.size()) {
        return {false, "expected 5 feature columns, got " + std::to_string(features.size())};
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (feature_name(features[i]) != expected_names[i]) {
            return {false, "column " + std::to_string(i) + " is " + feature_name(features[i])};
        }
    }

    const std::map<int, std::vector<float>> expected = {
        {0, {1, 0, 0, 0, 0}}, {1, {0, 1, 0, 0, 0}}, {2, {0, 1, 1, 0, 0}},
        {3, {0, 1, 1, 1, 0}}, {7, {0, 0, 0, 0, 1}}, {8, {0, 0, 0, 0, 0}},
        {9, {0, 0, 0, 0, 0}}};

    EncodingPlan plan;
    plan.spec.questions[37] = coding;
    plan.features = features;
    for (const auto& d : features) plan.feature_names.push_back(feature_name(d));

    for (const auto& [code, row] : expected) {
        const auto screened = encode_for_screening(plan, {{37, code}}, 30, Gender::unknown);
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (detail::eval_question_feature(features[i], coding, code) != row[i]) {
                return {false, "code " + std::to_string(code) + " direct value mismatch at " +
                                   expected_names[i]};
            }
            if (screened[i] != row[i]) {
                return {false, "code " + std::to_string(code) + " screening-path mismatch at " +
                                   expected_names[i]};
            }
        }
    }
    return {true, "all 7 answer codes produce the exact expected feature vectors"};
}

// --- 2: seed-to-seed stability of bootstrapped feature selection ---

Outcome check_selection_stability() {
    const auto data = planted_dataset(2000, 155, 15, 404, 0.3);
    FeatureMatrix m = encode_features(data, adir_like_spec(155));
    m.weights = balance_weights(data, {kSiloBoundaryMonths}).weights;

    ForestParams fp;
    fp.n_trees = 250;
    fp.max_depth = 10;

    SelectionConfig sc;  // defaults: 100 bootstraps, top 20, pool 30, final 20

    std::vector<std::vector<std::string>> robust_sets;
    for (const std::uint64_t seed : {1u, 2u}) {
        SelectionConfig run_cfg = sc;
        run_cfg.seed = seed;
        ForestParams run_fp = fp;
        run_fp.seed = derive_seed(seed, 0x5E1EC7);
        robust_sets.push_back(robust_select(m, run_cfg, run_fp).selected);
    }
    const double robust_j = jaccard(robust_sets[0], robust_sets[1]);

    std::vector<std::vector<std::string>> naive_sets;
    for (const std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        ForestParams run_fp = fp;
        run_fp.seed = derive_seed(seed, 0x5E1EC7);
        naive_sets.push_back(naive_select(m, sc.final_k, run_fp));
    }
    double naive_sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < naive_sets.size(); ++i) {
        for (std::size_t j = i + 1; j < naive_sets.size(); ++j) {
            naive_sum += jaccard(naive_sets[i], naive_sets[j]);
            ++pairs;
        }
    }
    const double naive_j = naive_sum / pairs;

    const bool pass = robust_j >= 0.8 && naive_j < robust_j;
    return {pass, "robust Jaccard " + fmt(robust_j) + " (needs >= 0.8), naive mean " +
                      fmt(naive_j) + " (needs < robust)"};
}

// --- 3: stacked training stages never cost accuracy ---

Outcome check_variant_ladder() {
    const auto data = planted_dataset(900, 60, 12, 42, 0.55, 0.8);
    const auto spec = adir_like_spec(60);

    VariantConfig cfg;
    cfg.selection.n_bootstrap = 30;
    cfg.forest.n_trees = 60;
    cfg.forest.max_depth = 12;
    cfg.cv.n_folds = 5;
    cfg.cv.n_bootstrap_rounds = 6;
    cfg.seed = 7;

    std::vector<double> aucs;
    std::string trace;
    for (const auto v : {Variant::baseline, Variant::robust, Variant::siloed,
                         Variant::severity, Variant::aggregate}) {
        cfg.variant = v;
        const auto trained = train_variant(data, spec, cfg);
        aucs.push_back(trained.overall_auc);
        if (!trace.empty()) trace += " -> ";
        trace += std::string(to_string(v)) + " " + fmt(trained.overall_auc);
    }
    bool pass = true;
    for (std::size_t i = 1; i < aucs.size(); ++i) {
        if (aucs[i] < aucs[i - 1] - 0.02) pass = false;
    }
    return {pass, trace + " (each step may drop at most 0.02)"};
}

// --- 4: refusing the uncertain middle buys conclusive accuracy ---

Outcome check_inconclusive_lift() {
    const auto data = planted_dataset(4000, 40, 6, 505, 0.65);
    const auto split = split_holdout(data, 0.45, 9);

    bool pass = true;
    std::string detail;
    for (const double cap : {0.25, 0.30}) {
        ScreenerConfig cfg;
        cfg.spec = adir_like_spec(40);
        cfg.robust = false;
        cfg.selection.final_k = 20;
        cfg.forest.n_trees = 80;
        cfg.forest.max_depth = 12;
        cfg.cv.n_folds = 5;
        cfg.cv.n_bootstrap_rounds = 4;
        cfg.band_rate = cap;
        cfg.seed = 3;
        const auto trained = train_screener(split.train, cfg);

        std::vector<double> scores(split.holdout.size());
        std::vector<double> weights(split.holdout.size(), 1.0);
        for (std::size_t i = 0; i < split.holdout.size(); ++i) {
            const auto& sheet = split.holdout.sheets[i];
            scores[i] = score_subject(trained.artifact, sheet.answers, sheet.age_months,
                                      sheet.gender);
        }
        const auto labels = split.holdout.labels();
        const auto banded = band_metrics(scores, labels, weights, trained.artifact.band);
        const auto binary =
            metrics_at_threshold(scores, labels, weights, trained.artifact.threshold);

        const bool lift = banded.conclusive_accuracy > binary.accuracy;
        const bool rate_ok = std::abs(banded.inconclusive_rate - cap) <= 0.02;
        pass = pass && lift && rate_ok;
        if (!detail.empty()) detail += "; ";
        detail += "cap " + fmt(cap, 2) + ": conclusive " + fmt(banded.conclusive_accuracy) +
                  " vs binary " + fmt(binary.accuracy) + ", rate " +
                  fmt(banded.inconclusive_rate);
    }
    return {pass, detail};
}

// --- 5: injected training sets make absence uninformative ---

Outcome check_injection_balance() {
    const auto data = planted_dataset(400, 30, 8, 606, 0.2, 0.0, Instrument::ados_module1_like);
    FeatureMatrix m = encode_features(data, ados_like_spec(30));
    m.weights = balance_weights(data, {kSiloBoundaryMonths}).weights;

    InjectionConfig cfg;
    cfg.seed = 5;
    const auto out = inject_missing(m, cfg);

    std::size_t balanced = 0, skipped = 0, stumps_checked = 0;
    for (const auto& audit : out.report.features) {
        if (audit.skipped) {
            ++skipped;
            continue;
        }
        const std::size_t col = out.matrix.column_index(audit.feature);
        double zero_pos = 0.0, zero_neg = 0.0;
        for (std::size_t r = 0; r < out.matrix.rows(); ++r) {
            if (out.matrix.at(r, col) != 0.0f) continue;
            (out.matrix.labels[r] ? zero_pos : zero_neg) += out.matrix.weights[r];
        }
        const double share = zero_pos / (zero_pos + zero_neg);
        const double purity = std::max(share, 1.0 - share);
        if (share < 0.45 - 1e-9 || share > 0.55 + 1e-9 || purity > 0.55 + 1e-9) {
            return {false, audit.feature + " zero-pool positive share " + fmt(share)};
        }
        ++balanced;

        // A stump restricted to this single feature must not find a pure
        // zero branch either.
        if (stumps_checked < 5) {
            ++stumps_checked;
            ForestParams stump;
            stump.n_trees = 1;
            stump.max_depth = 1;
            stump.bootstrap = false;
            stump.feature_rule = SplitFeatureRule::fraction;
            stump.feature_fraction = 1.0;
            const auto model =
                train_forest(subset_columns_by_name(out.matrix, {audit.feature}), stump);
            const auto& nodes = model.trees[0].nodes;
            if (!nodes[0].is_leaf()) {
                const auto& zero_leaf = nodes[nodes[0].left];
                const double p = std::max(zero_leaf.p_pos(), 1.0 - zero_leaf.p_pos());
                if (p > 0.55 + 1e-9) {
                    return {false, audit.feature + " zero-branch stump purity " + fmt(p)};
                }
            }
        }
    }
    const bool pass = balanced > 0 && balanced >= skipped;
    return {pass, std::to_string(balanced) + " features balanced into [0.45, 0.55], " +
                      std::to_string(skipped) + " skipped, " + std::to_string(stumps_checked) +
                      " stump purities checked"};
}

// --- 6: fusing two instruments never loses to the better one ---

Outcome check_fusion_dominance() {
    SyntheticSpec q_spec;
    q_spec.n_questions = 40;
    q_spec.n_informative = 6;
    q_spec.n_samples = 1000;
    q_spec.noise_rate = 0.6;
    q_spec.seed = 808;
    SyntheticSpec v_spec;
    v_spec.n_questions = 20;
    v_spec.n_informative = 5;
    v_spec.noise_rate = 0.4;
    v_spec.instrument = Instrument::ados_module1_like;
    const auto [questionnaire, video] = generate_synthetic_pair(q_spec, v_spec);

    CombinedConfig cfg;
    cfg.questionnaire_spec = adir_like_spec(40);
    cfg.video_spec = ados_like_spec(20);
    cfg.questionnaire_selection.n_bootstrap = 20;
    cfg.questionnaire_selection.per_iteration_top_k = 12;
    cfg.questionnaire_selection.candidate_pool = 16;
    cfg.questionnaire_selection.final_k = 12;
    cfg.video_selection.n_bootstrap = 20;
    cfg.video_selection.per_iteration_top_k = 8;
    cfg.video_selection.candidate_pool = 12;
    cfg.video_selection.final_k = 8;
    cfg.forest.n_trees = 50;
    cfg.forest.max_depth = 12;
    cfg.cv.n_folds = 5;
    cfg.cv.n_bootstrap_rounds = 4;
    cfg.seed = 12;

    const auto combined = train_combined(questionnaire.data, video.data, cfg);
    bool pass = true;
    std::string detail;
    for (const auto& [name, cs] : combined.silos) {
        const double qa = cs.metadata.at("questionnaire_auc").get<double>();
        const double va = cs.metadata.at("video_auc").get<double>();
        const double fa = cs.metadata.at("fused_auc").get<double>();
        pass = pass && fa >= std::max(qa, va) - 0.01;
        if (!detail.empty()) detail += "; ";
        detail += name + ": fused " + fmt(fa) + " vs questionnaire " + fmt(qa) + ", video " +
                  fmt(va);
    }
    return {pass, detail + " (fused may trail the best input by at most 0.01)"};
}

// --- 7: analytic results agree with brute force ---

Outcome check_numerics() {
    // (a) logistic gradient vs central finite differences.
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        Rng rng(derive_seed(900, trial));
        FeatureMatrix m;
        const std::size_t n = 30, p = 6;
        for (std::size_t j = 0; j < p; ++j) {
            m.feature_names.push_back("x" + std::to_string(j));
            m.descriptors.push_back({FeatureKind::fusion_input, -1, static_cast<int>(j)});
            m.integer_valued.push_back(0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                m.values.push_back(static_cast<float>(rng.uniform_double() * 4.0 - 2.0));
            }
            m.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
            m.weights.push_back(0.25 + rng.uniform_double());
        }
        std::vector<std::uint32_t> rows(n);
        for (std::uint32_t i = 0; i < n; ++i) rows[i] = i;
        std::vector<double> theta(p + 1);
        for (auto& t : theta) t = rng.uniform_double() * 2.0 - 1.0;
        const double l2 = trial % 2 == 0 ? 0.0 : 0.1;

        const auto grad = logistic_gradient(m, rows, theta, l2);
        const auto fd = oracle::finite_difference_gradient(
            [&](const std::vector<double>& t) { return logistic_objective(m, rows, t, l2); },
            theta);
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double scale = std::max({1.0, std::abs(grad[j]), std::abs(fd[j])});
            if (std::abs(grad[j] - fd[j]) / scale > 1e-6) {
                return {false, "gradient component " + std::to_string(j) +
                                   " differs from finite differences by " +
                                   fmt(std::abs(grad[j] - fd[j]) / scale, 9)};
            }
        }
    }

    // (b) weighted AUC vs exhaustive pair concordance.
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(derive_seed(901, trial));
        std::vector<double> scores, weights;
        std::vector<std::uint8_t> labels;
        for (int i = 0; i < 60; ++i) {
            scores.push_back(std::floor(rng.uniform_double() * 8.0) / 8.0);
            labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
            weights.push_back(0.25 + rng.uniform_double());
        }
        labels[0] = 0;
        labels[1] = 1;
        const double fast = roc(scores, labels, weights).auc;
        const double slow = oracle::pair_concordance_auc(scores, labels, weights);
        if (std::abs(fast - slow) > 1e-9) {
            return {false, "AUC " + fmt(fast, 12) + " vs pair concordance " + fmt(slow, 12)};
        }
    }

    // (c) integer weights behave exactly like duplicated rows.
    for (const bool bootstrap : {false, true}) {
        Rng rng(derive_seed(902, bootstrap ? 1 : 0));
        FeatureMatrix weighted;
        for (std::size_t j = 0; j < 4; ++j) {
            weighted.feature_names.push_back("x" + std::to_string(j));
            weighted.descriptors.push_back({FeatureKind::code_eq, static_cast<int>(j) + 1, 1});
            weighted.integer_valued.push_back(1);
        }
        FeatureMatrix duplicated = weighted;
        for (int i = 0; i < 40; ++i) {
            std::vector<float> row;
            for (int j = 0; j < 4; ++j) {
                row.push_back(static_cast<float>(rng.uniform_int(0, 4)));
            }
            const std::uint8_t label =
                i < 2 ? static_cast<std::uint8_t>(i) : (rng.bernoulli(0.5) ? 1 : 0);
            const int copies = rng.uniform_int(1, 3);
            weighted.values.insert(weighted.values.end(), row.begin(), row.end());
            weighted.labels.push_back(label);
            weighted.weights.push_back(static_cast<double>(copies));
            for (int c = 0; c < copies; ++c) {
                duplicated.values.insert(duplicated.values.end(), row.begin(), row.end());
                duplicated.labels.push_back(label);
                duplicated.weights.push_back(1.0);
            }
        }
        ForestParams fp;
        fp.n_trees = 15;
        fp.bootstrap = bootstrap;
        fp.seed = 77;
        const auto a = to_json(train_forest(weighted, fp));
        const auto b = to_json(train_forest(duplicated, fp));
        if (a != b) {
            return {false, std::string("weight-duplication mismatch with bootstrap ") +
                               (bootstrap ? "on" : "off")};
        }
    }
    return {true, "gradient vs finite differences <= 1e-6, AUC vs pair count <= 1e-9, "
                  "duplication exact"};
}

// --- 8: the learning curve levels off, and stays flat without signal ---

Outcome check_progressive_sampling() {
    const auto planted = planted_dataset(1500, 60, 8, 909, 0.55);
    FeatureMatrix m = encode_features(planted, adir_like_spec(60));
    m.weights = balance_weights(planted, {kSiloBoundaryMonths}).weights;

    ForestParams fp;
    fp.n_trees = 60;
    fp.max_depth = 12;
    fp.seed = 4;
    CVConfig cv;
    cv.n_folds = 5;
    cv.n_bootstrap_rounds = 4;
    const auto curve = progressive_sampling(m, {0.1, 0.325, 0.55, 0.775, 1.0}, cv,
                                            forest_cv_trainer(fp), 15);
    if (curve.points.size() != 5) {
        return {false, "expected 5 curve points, got " + std::to_string(curve.points.size())};
    }
    const double last = curve.points[4].auc_mean;
    const double prev = curve.points[3].auc_mean;
    const bool plateau = std::abs(last - prev) < 0.02 && last > 0.8;

    const auto null_data = planted_dataset(800, 40, 0, 910, 0.0);
    FeatureMatrix null_m = encode_features(null_data, adir_like_spec(40));
    null_m.weights = balance_weights(null_data, {kSiloBoundaryMonths}).weights;
    const auto null_curve =
        progressive_sampling(null_m, {0.25, 0.5, 1.0}, cv, forest_cv_trainer(fp), 16);
    double null_low = 1.0, null_high = 0.0;
    for (const auto& point : null_curve.points) {
        null_low = std::min(null_low, point.auc_mean);
        null_high = std::max(null_high, point.auc_mean);
    }
    const bool flat = null_low >= 0.44 && null_high <= 0.56;

    std::string planted_trace;
    for (const auto& point : curve.points) {
        if (!planted_trace.empty()) planted_trace += " -> ";
        planted_trace += fmt(point.auc_mean);
    }
    return {plateau && flat,
            "planted curve " + planted_trace + " (last step < 0.02); null curve spans [" +
                fmt(null_low) + ", " + fmt(null_high) + "] around 0.5"};
}

// --- 9: the evaluate command's tuned threshold matches a full sweep ---

Outcome check_threshold_tuning() {
    const std::string cli = SCREENER_CLI_PATH;
    testutil::TempDir tmp;
    std::string out;

    if (testutil::run(cli + " generate --out " + tmp.file("gen") +
                          " --n-questions 12 --n-informative 4 --n-samples 260 "
                          "--noise 0.25 --seed 31",
                      out) != 0) {
        return {false, "generate failed: " + out};
    }
    if (testutil::run(cli + " train --out " + tmp.file("train") + " --data " +
                          tmp.file("gen/data.csv") + " --encoding " +
                          tmp.file("gen/encoding.json") +
                          " --variant robust --seed 5 --n-trees 30 --folds 4 --rounds 2 "
                          "--selection-bootstraps 8 --selection-top-k 6 "
                          "--selection-candidate-pool 8 --final-k 6",
                      out) != 0) {
        return {false, "train failed: " + out};
    }
    if (testutil::run(cli + " evaluate --out " + tmp.file("eval") + " --data " +
                          tmp.file("gen/data.csv") + " --artifact " +
                          tmp.file("train/screener_all.json") + " --target-sensitivity 0.8",
                      out) != 0) {
        return {false, "evaluate failed: " + out};
    }

    const auto metrics = nlohmann::json::parse(testutil::slurp(tmp.file("eval/metrics.json")));
    const double reported = metrics.at("tuned").at("threshold").get<double>();
    const double sensitivity = metrics.at("tuned").at("sensitivity").get<double>();

    // Recompute scores the same way and sweep every candidate threshold.
    const auto artifact = artifact_from_json(
        nlohmann::json::parse(testutil::slurp(tmp.file("train/screener_all.json"))));
    const auto data = load_csv_strict(tmp.file("gen/data.csv"), Instrument::adir_like,
                                      load_encoding_spec(tmp.file("gen/encoding.json")));
    std::vector<double> scores(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        scores[i] = score_subject(artifact, data.sheets[i].answers, data.sheets[i].age_months,
                                  data.sheets[i].gender);
    }
    const auto labels = data.labels();
    const auto weights = balance_weights(data, {kSiloBoundaryMonths}).weights;
    const double swept = oracle::sweep_threshold(scores, labels, weights, 0.8);

    const bool pass = reported == swept && sensitivity >= 0.8;
    return {pass, "evaluate reported threshold " + fmt(reported, 6) + ", exhaustive sweep " +
                      fmt(swept, 6) + ", sensitivity " + fmt(sensitivity)};
}

// --- 10: every command is byte-stable across re-runs and thread counts ---

Outcome check_determinism() {
    const std::string cli = SCREENER_CLI_PATH;
    testutil::TempDir tmp;
    std::string out;

    // Shared inputs for the per-command runs.
    if (testutil::run(cli + " generate --out " + tmp.file("gen") +
                          " --n-questions 8 --n-informative 3 --n-samples 90 --noise 0.2 "
                          "--seed 3",
                      out) != 0 ||
        testutil::run(cli + " generate --out " + tmp.file("genv") +
                          " --n-questions 8 --n-informative 3 --n-samples 100 --noise 0.2 "
                          "--video-questions 6 --video-informative 2 --video-noise 0.2 "
                          "--seed 4",
                      out) != 0) {
        return {false, "input generation failed: " + out};
    }
    const std::string data = tmp.file("gen/data.csv");
    const std::string encoding = tmp.file("gen/encoding.json");
    testutil::spit(tmp.file("scores.csv"),
                   "score,label\n0.1,negative\n0.2,negative\n0.35,positive\n0.4,negative\n"
                   "0.55,positive\n0.6,negative\n0.8,positive\n0.9,positive\n");
    {
        const auto loaded = load_csv_strict(data, Instrument::adir_like,
                                            load_encoding_spec(encoding));
        nlohmann::json responses{{"age_months", loaded.sheets[0].age_months},
                                 {"gender", to_string(loaded.sheets[0].gender)},
                                 {"questionnaire", nlohmann::json::object()}};
        for (const auto& [qid, code] : loaded.sheets[0].answers) {
            responses["questionnaire"][std::to_string(qid)] = code;
        }
        testutil::spit(tmp.file("responses.json"), responses.dump());
    }

    const std::string select_args =
        " --n-trees 12 --selection-bootstraps 4 --selection-top-k 3 "
        "--selection-candidate-pool 5 --final-k 3";
    const std::string train_args = select_args + " --folds 3 --rounds 1";
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"generate",
         "generate --out {out} --n-questions 8 --n-informative 3 --n-samples 90 "
         "--noise 0.2 --seed 3"},
        {"validate", "validate --out {out} --data " + data + " --encoding " + encoding},
        {"select", "select --out {out} --data " + data + " --encoding " + encoding +
                       " --method robust --seed 2" + select_args},
        {"train", "train --out {out} --data " + data + " --encoding " + encoding +
                      " --variant inconclusive --max-inconclusive-rate 0.3 --seed 6" +
                      train_args},
        {"calibrate", "calibrate --out {out} --scores " + tmp.file("scores.csv") +
                          " --max-inconclusive-rate 0.25"},
        {"progressive", "progressive --out {out} --data " + data + " --encoding " + encoding +
                            " --fractions 0.5,1.0 --n-trees 10 --folds 3 --rounds 1 --seed 8"},
        {"combine", "combine --out {out} --questionnaire-data " + tmp.file("genv/data.csv") +
                        " --video-data " + tmp.file("genv/video.csv") +
                        " --questionnaire-encoding " + tmp.file("genv/encoding.json") +
                        " --video-encoding " + tmp.file("genv/video_encoding.json") +
                        " --video-final-k 3 --seed 9" + train_args},
    };

    const auto snapshot = [](const std::string& dir) {
        std::map<std::string, std::string> files;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            files[entry.path().filename().string()] = testutil::slurp(entry.path().string());
        }
        return files;
    };

    std::size_t files_compared = 0;
    auto run_command = [&](const std::string& name, const std::string& args) -> std::string {
        std::map<std::string, std::map<std::string, std::string>> runs;
        for (const std::string variant : {"first", "second", "threaded"}) {
            const std::string dir = tmp.file(name + "_" + variant);
            std::string command = args;
            command.replace(command.find("{out}"), 5, dir);
            if (variant == "threaded") command = "--threads 2 " + command;
            if (testutil::run(cli + " " + command, out) != 0) {
                return name + " (" + variant + ") failed: " + out;
            }
            runs[variant] = snapshot(dir);
        }
        if (runs["first"] != runs["second"]) {
            return name + ": repeat run differs";
        }
        for (const auto& [file, bytes] : runs["first"]) {
            ++files_compared;
            if (file == "manifest.json") continue;  // records the thread count
            const auto it = runs["threaded"].find(file);
            if (it == runs["threaded"].end() || it->second != bytes) {
                return name + ": " + file + " differs under --threads 2";
            }
        }
        return "";
    };

    for (const auto& [name, args] : commands) {
        const std::string failure = run_command(name, args);
        if (!failure.empty()) return {false, failure};
    }

    // evaluate and screen consume the train/combine outputs.
    const std::string eval_args = "evaluate --out {out} --data " + data + " --artifact " +
                                  tmp.file("train_first/screener_young.json");
    const std::string screen_args = "screen --out {out} --artifact " +
                                    tmp.file("train_first/screener_young.json") +
                                    " --responses " + tmp.file("responses.json");
    for (const auto& [name, args] :
         std::vector<std::pair<std::string, std::string>>{{"evaluate", eval_args},
                                                          {"screen", screen_args}}) {
        const std::string failure = run_command(name, args);
        if (!failure.empty()) return {false, failure};
    }

    return {true, "9 commands, 3 runs each, " + std::to_string(files_compared) +
                      " files byte-compared"};
}

struct Check {
    std::string description;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::map<int, Check> checks = {
        {1, {"severity encoding maps every answer code exactly", check_severity_mapping}},
        {2, {"bootstrapped selection is seed-stable where plain ranking is not",
             check_selection_stability}},
        {3, {"stacked classifier variants never lose accuracy", check_variant_ladder}},
        {4, {"inconclusive band lifts conclusive accuracy at its rate caps",
             check_inconclusive_lift}},
        {5, {"missing-value injection leaves absence uninformative", check_injection_balance}},
        {6, {"fused screener keeps pace with its best single instrument",
             check_fusion_dominance}},
        {7, {"analytic gradients, AUC and weighting agree with brute force", check_numerics}},
        {8, {"learning curve plateaus on signal and stays flat on noise",
             check_progressive_sampling}},
        {9, {"sensitivity-targeted threshold equals an exhaustive sweep",
             check_threshold_tuning}},
        {10, {"all commands are byte-identical across re-runs and threads",
              check_determinism}},
    };

    std::vector<int> requested;
    if (argc > 1) {
        for (int i = 1; i < argc; ++i) {
            try {
                requested.push_back(std::stoi(argv[i]));
            } catch (const std::exception&) {
                std::cerr << "not a criterion number: " << argv[i] << "\n";
                return 1;
            }
            if (!checks.count(requested.back())) {
                std::cerr << "unknown criterion " << requested.back() << "\n";
                return 1;
            }
        }
    } else {
        for (const auto& [number, check] : checks) requested.push_back(number);
    }

    int failures = 0;
    for (const int number : requested) {
        const auto& check = checks.at(number);
        Outcome outcome;
        try {
            outcome = check.run();
        } catch (const Error& e) {
            outcome = {false, std::string("error: ") + e.what()};
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::cout << "criterion " << number << ": " << (outcome.pass ? "PASS" : "FAIL")
                  << " — " << check.description << " (" << outcome.detail << ")\n";
        if (!outcome.pass) ++failures;
    }
    return failures;
}
