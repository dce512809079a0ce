#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/dataset.hpp"
#include "screener/error.hpp"
#include "screener/feature_matrix.hpp"
#include "screener/forest.hpp"
#include "screener/parallel.hpp"
#include "screener/rng.hpp"

namespace screener {

// --- sample weighting ---

inline int age_group_of(int age_months, const std::vector<int>& boundaries) {
    int group = 0;
    for (const int b : boundaries) {
        if (age_months >= b) ++group;
    }
    return group;
}

struct WeightScheme {
    struct Cell {
        int age_group = 0;
        bool positive = false;
        std::size_t count = 0;
        double per_sample_weight = 0.0;
    };
    std::vector<int> age_boundaries;
    std::vector<double> weights;  // aligned with the input samples
    std::vector<Cell> cells;      // ordered by (age_group, label)
};

// Equalizes the total weight of every (age_group, label) cell while keeping
// the grand total at the sample count.
inline WeightScheme balance_weights(const std::vector<int>& ages,
                                    const std::vector<std::uint8_t>& labels,
                                    std::vector<int> age_boundaries = {kSiloBoundaryMonths}) {
    if (ages.size() != labels.size()) {
        throw Error(ErrorKind::contract, "ages and labels must align");
    }
    if (ages.empty()) throw Error(ErrorKind::weighting, "no samples to weight");
    std::sort(age_boundaries.begin(), age_boundaries.end());
    const int n_groups = static_cast<int>(age_boundaries.size()) + 1;
    const int n_cells = n_groups * 2;

    std::vector<std::size_t> counts(static_cast<std::size_t>(n_cells), 0);
    const auto cell_of = [&](std::size_t i) {
        return static_cast<std::size_t>(age_group_of(ages[i], age_boundaries) * 2 +
                                        (labels[i] ? 1 : 0));
    };
    for (std::size_t i = 0; i < ages.size(); ++i) ++counts[cell_of(i)];

    WeightScheme scheme;
    scheme.age_boundaries = age_boundaries;
    const double target = static_cast<double>(ages.size()) / n_cells;
    for (int c = 0; c < n_cells; ++c) {
        WeightScheme::Cell cell;
        cell.age_group = c / 2;
        cell.positive = (c % 2) == 1;
        cell.count = counts[static_cast<std::size_t>(c)];
        if (cell.count == 0) {
            throw Error(ErrorKind::weighting, "empty weighting cell",
                        {{"age_group", cell.age_group}, {"label", cell.positive ? 1 : 0}});
        }
        cell.per_sample_weight = target / static_cast<double>(cell.count);
        scheme.cells.push_back(cell);
    }
    scheme.weights.resize(ages.size());
    for (std::size_t i = 0; i < ages.size(); ++i) {
        scheme.weights[i] = scheme.cells[cell_of(i)].per_sample_weight;
    }
    return scheme;
}

inline WeightScheme balance_weights(const Dataset& data,
                                    std::vector<int> age_boundaries = {kSiloBoundaryMonths}) {
    std::vector<int> ages;
    std::vector<std::uint8_t> labels;
    ages.reserve(data.sheets.size());
    for (const auto& sheet : data.sheets) {
        ages.push_back(sheet.age_months);
        labels.push_back(sheet.label == Label::positive ? 1 : 0);
    }
    return balance_weights(ages, labels, std::move(age_boundaries));
}

// --- cross-validation plumbing ---

struct CVConfig {
    int n_folds = 10;
    int n_bootstrap_rounds = 20;
    double target_sensitivity = 0.8;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_folds < 2) throw Error(ErrorKind::parameter, "n_folds must be >= 2");
        if (n_bootstrap_rounds < 1) {
            throw Error(ErrorKind::parameter, "n_bootstrap_rounds must be >= 1");
        }
        if (!(target_sensitivity > 0.0 && target_sensitivity <= 1.0)) {
            throw Error(ErrorKind::parameter, "target_sensitivity must be in (0,1]");
        }
    }
};

// Label-stratified partition: shuffle each class, deal round-robin.
inline std::vector<std::vector<std::uint32_t>> stratified_folds(
    const std::vector<std::uint8_t>& labels, int n_folds, std::uint64_t seed) {
    if (n_folds < 2) throw Error(ErrorKind::parameter, "n_folds must be >= 2");
    std::vector<std::uint32_t> pos, neg;
    for (std::uint32_t i = 0; i < labels.size(); ++i) {
        (labels[i] ? pos : neg).push_back(i);
    }
    if (pos.size() < static_cast<std::size_t>(n_folds) ||
        neg.size() < static_cast<std::size_t>(n_folds)) {
        throw Error(ErrorKind::fold, "each class needs at least n_folds members",
                    {{"n_folds", n_folds},
                     {"positives", pos.size()},
                     {"negatives", neg.size()}});
    }
    Rng rng(derive_seed(seed, 0xF01D5));
    std::vector<std::vector<std::uint32_t>> folds(static_cast<std::size_t>(n_folds));
    for (auto* cls : {&neg, &pos}) {
        rng.shuffle(*cls);
        for (std::size_t i = 0; i < cls->size(); ++i) {
            folds[i % static_cast<std::size_t>(n_folds)].push_back((*cls)[i]);
        }
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

// --- ROC / AUC ---

struct RocPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 1.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // descending threshold, from (0 sens, 1 spec)
    double auc = 0.0;
};

// Weighted sweep over distinct thresholds (positive when score >= threshold).
// Trapezoidal AUC; equal scores share a segment, so the area equals the
// weighted concordance probability exactly.
inline RocCurve roc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                    const std::vector<double>& weights) {
    if (scores.size() != labels.size() || scores.size() != weights.size()) {
        throw Error(ErrorKind::contract, "scores, labels and weights must align");
    }
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return scores[a] > scores[b];
    });

    // Class totals via the same grouped summation sequence as the sweep
    // below, so the final point lands on sensitivity exactly 1.
    double w_pos = 0.0, w_neg = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        double tp_add = 0.0, fp_add = 0.0;
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] ? tp_add : fp_add) += weights[order[i]];
            ++i;
        }
        w_pos += tp_add;
        w_neg += fp_add;
    }
    if (w_pos <= 0.0 || w_neg <= 0.0) {
        throw Error(ErrorKind::evaluation, "AUC undefined: both classes required");
    }

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
    double tp = 0.0, fp = 0.0, auc = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        double tp_add = 0.0, fp_add = 0.0;
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] ? tp_add : fp_add) += weights[order[i]];
            ++i;
        }
        const double tpr0 = tp / w_pos, fpr0 = fp / w_neg;
        tp += tp_add;
        fp += fp_add;
        const double tpr1 = tp / w_pos, fpr1 = fp / w_neg;
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
        curve.points.push_back({s, tpr1, 1.0 - fpr1});
    }
    curve.auc = auc;
    return curve;
}

struct TunedThreshold {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

// Largest threshold whose sensitivity meets the target; specificity is then
// automatically the best achievable among qualifying thresholds.
inline TunedThreshold tune_threshold(const RocCurve& curve, double target_sensitivity) {
    if (!(target_sensitivity > 0.0 && target_sensitivity <= 1.0)) {
        throw Error(ErrorKind::parameter, "target sensitivity must be in (0,1]");
    }
    for (const auto& point : curve.points) {
        if (point.sensitivity >= target_sensitivity) {
            return {point.threshold, point.sensitivity, point.specificity};
        }
    }
    throw Error(ErrorKind::tuning, "target sensitivity unreachable",
                {{"target", target_sensitivity},
                 {"max_sensitivity",
                  curve.points.empty() ? 0.0 : curve.points.back().sensitivity}});
}

struct ThresholdMetrics {
    double tp = 0.0, fp = 0.0, tn = 0.0, fn = 0.0;  // weighted
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
};

inline ThresholdMetrics metrics_at_threshold(const std::vector<double>& scores,
                                             const std::vector<std::uint8_t>& labels,
                                             const std::vector<double>& weights,
                                             double threshold) {
    ThresholdMetrics out;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        const double w = weights[i];
        if (labels[i]) {
            (predicted ? out.tp : out.fn) += w;
        } else {
            (predicted ? out.fp : out.tn) += w;
        }
    }
    const double pos = out.tp + out.fn, neg = out.tn + out.fp;
    out.sensitivity = pos > 0.0 ? out.tp / pos : 0.0;
    out.specificity = neg > 0.0 ? out.tn / neg : 0.0;
    out.accuracy = pos + neg > 0.0 ? (out.tp + out.tn) / (pos + neg) : 0.0;
    out.balanced_accuracy = (out.sensitivity + out.specificity) / 2.0;
    return out;
}

// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorKind::contract, "quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

// Smallest value whose cumulative weight reaches q of the total.
inline double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q) {
    if (value_weight.empty()) throw Error(ErrorKind::contract, "quantile of empty sample");
    std::sort(value_weight.begin(), value_weight.end());
    double total = 0.0;
    for (const auto& [v, w] : value_weight) total += w;
    double acc = 0.0;
    for (const auto& [v, w] : value_weight) {
        acc += w;
        if (acc >= q * total) return v;
    }
    return value_weight.back().first;
}

// --- bootstrapped cross-validation ---

// Trains on train_rows, returns scores aligned with test_rows.
using CvTrainer = std::function<std::vector<double>(
    const FeatureMatrix& m, const std::vector<std::uint32_t>& train_rows,
    const std::vector<std::uint32_t>& test_rows, std::uint64_t fit_seed)>;

struct MetricSummary {
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<double> per_round;
};

struct CvSummary {
    MetricSummary auc;
    MetricSummary sensitivity;
    MetricSummary specificity;
    MetricSummary balanced_accuracy;
    std::vector<double> thresholds;  // tuned per completed round
    int rounds_requested = 0;
    int rounds_completed = 0;
    std::vector<std::string> failures;
};

namespace detail {

inline MetricSummary summarize_metric(std::vector<double> per_round) {
    MetricSummary s;
    s.per_round = per_round;
    for (const double v : per_round) s.mean += v;
    s.mean /= static_cast<double>(per_round.size());
    s.ci_low = quantile(per_round, 0.025);
    s.ci_high = quantile(std::move(per_round), 0.975);
    return s;
}

}  // namespace detail

// Repeats stratified k-fold with fresh fold seeds each round, pools the
// out-of-fold scores per round, and reports mean plus 2.5/97.5 percentile
// intervals. A trainer failure skips the round; too many failures abort.
inline CvSummary bootstrapped_cv(const FeatureMatrix& m, const CVConfig& cfg,
                                 const CvTrainer& trainer,
                                 std::vector<std::uint32_t> rows = {}) {
    cfg.validate();
    if (rows.empty()) {
        rows.resize(m.rows());
        for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    std::vector<std::uint8_t> local_labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) local_labels[i] = m.labels[rows[i]];

    struct RoundOutcome {
        bool ok = false;
        double auc = 0.0, sens = 0.0, spec = 0.0, bacc = 0.0, threshold = 0.0;
        std::string failure;
    };
    std::vector<RoundOutcome> outcomes(static_cast<std::size_t>(cfg.n_bootstrap_rounds));

    parallel_for(outcomes.size(), [&](std::size_t round) {
        RoundOutcome& out = outcomes[round];
        try {
            const auto folds =
                stratified_folds(local_labels, cfg.n_folds, derive_seed(cfg.seed, round));
            std::vector<double> oof(rows.size(), 0.0);
            for (std::size_t f = 0; f < folds.size(); ++f) {
                std::vector<std::uint32_t> train_rows, test_rows;
                for (std::size_t g = 0; g < folds.size(); ++g) {
                    for (const auto local : folds[g]) {
                        (g == f ? test_rows : train_rows).push_back(rows[local]);
                    }
                }
                const auto scores =
                    trainer(m, train_rows, test_rows, derive_seed(cfg.seed, round, f + 1));
                if (scores.size() != test_rows.size()) {
                    throw Error(ErrorKind::contract, "trainer returned wrong score count");
                }
                std::size_t cursor = 0;
                for (std::size_t local = 0; local < rows.size(); ++local) {
                    if (cursor < folds[f].size() && folds[f][cursor] == local) {
                        oof[local] = scores[cursor];
                        ++cursor;
                    }
                }
            }
            std::vector<double> local_weights(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) local_weights[i] = m.weights[rows[i]];
            const auto curve = roc(oof, local_labels, local_weights);
            const auto tuned = tune_threshold(curve, cfg.target_sensitivity);
            out.auc = curve.auc;
            out.sens = tuned.sensitivity;
            out.spec = tuned.specificity;
            out.bacc = (tuned.sensitivity + tuned.specificity) / 2.0;
            out.threshold = tuned.threshold;
            out.ok = true;
        } catch (const std::exception& e) {
            out.failure = "round " + std::to_string(round) + ": " + e.what();
        }
    });

    CvSummary summary;
    summary.rounds_requested = cfg.n_bootstrap_rounds;
    std::vector<double> aucs, senss, specs, baccs;
    for (const auto& out : outcomes) {
        if (!out.ok) {
            summary.failures.push_back(out.failure);
            continue;
        }
        aucs.push_back(out.auc);
        senss.push_back(out.sens);
        specs.push_back(out.spec);
        baccs.push_back(out.bacc);
        summary.thresholds.push_back(out.threshold);
    }
    summary.rounds_completed = static_cast<int>(aucs.size());
    const double failure_fraction =
        static_cast<double>(summary.failures.size()) / cfg.n_bootstrap_rounds;
    if (failure_fraction > 0.10) {
        throw Error(ErrorKind::evaluation, "too many cross-validation failures",
                    {{"failed", summary.failures.size()},
                     {"requested", cfg.n_bootstrap_rounds},
                     {"messages", summary.failures}});
    }
    summary.auc = detail::summarize_metric(std::move(aucs));
    summary.sensitivity = detail::summarize_metric(std::move(senss));
    summary.specificity = detail::summarize_metric(std::move(specs));
    summary.balanced_accuracy = detail::summarize_metric(std::move(baccs));
    return summary;
}

inline CvTrainer forest_cv_trainer(const ForestParams& params) {
    return [params](const FeatureMatrix& m, const std::vector<std::uint32_t>& train_rows,
                    const std::vector<std::uint32_t>& test_rows, std::uint64_t fit_seed) {
        ForestParams p = params;
        p.seed = derive_seed(params.seed, fit_seed);
        const auto model = train_forest(m, p, train_rows);
        return predict_matrix(model, m, test_rows);
    };
}

// --- grid search ---

struct GridEntry {
    ForestParams params;
    CvSummary summary;
};

struct GridSearchResult {
    ForestParams best;
    CvSummary best_summary;
    std::vector<GridEntry> leaderboard;  // sorted by mean AUC desc, then params
};

// Exhaustive evaluation of every grid point by bootstrapped CV mean AUC.
inline GridSearchResult grid_search(const FeatureMatrix& m,
                                    const std::vector<ForestParams>& grid, const CVConfig& cfg,
                                    std::vector<std::uint32_t> rows = {}) {
    if (grid.empty()) throw Error(ErrorKind::parameter, "empty parameter grid");
    GridSearchResult result;
    for (const auto& params : grid) {
        params.validate();
        result.leaderboard.push_back(
            {params, bootstrapped_cv(m, cfg, forest_cv_trainer(params), rows)});
    }
    std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                     [](const GridEntry& a, const GridEntry& b) {
                         if (a.summary.auc.mean != b.summary.auc.mean) {
                             return a.summary.auc.mean > b.summary.auc.mean;
                         }
                         return a.params.key() < b.params.key();
                     });
    result.best = result.leaderboard.front().params;
    result.best_summary = result.leaderboard.front().summary;
    return result;
}

// --- exports ---

inline nlohmann::json to_json(const MetricSummary& s) {
    return nlohmann::json{
        {"mean", s.mean}, {"ci_low", s.ci_low}, {"ci_high", s.ci_high}, {"rounds", s.per_round}};
}

inline nlohmann::json to_json(const CvSummary& s) {
    return nlohmann::json{{"auc", to_json(s.auc)},
                          {"sensitivity", to_json(s.sensitivity)},
                          {"specificity", to_json(s.specificity)},
                          {"balanced_accuracy", to_json(s.balanced_accuracy)},
                          {"thresholds", s.thresholds},
                          {"rounds_requested", s.rounds_requested},
                          {"rounds_completed", s.rounds_completed},
                          {"failures", s.failures}};
}

inline nlohmann::json to_json(const ThresholdMetrics& t) {
    return nlohmann::json{{"tp", t.tp},
                          {"fp", t.fp},
                          {"tn", t.tn},
                          {"fn", t.fn},
                          {"sensitivity", t.sensitivity},
                          {"specificity", t.specificity},
                          {"accuracy", t.accuracy},
                          {"balanced_accuracy", t.balanced_accuracy}};
}

inline nlohmann::json to_json(const WeightScheme& s) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : s.cells) {
        cells.push_back({{"age_group", c.age_group},
                         {"label", c.positive ? 1 : 0},
                         {"count", c.count},
                         {"per_sample_weight", c.per_sample_weight}});
    }
    return nlohmann::json{{"age_boundaries", s.age_boundaries}, {"cells", cells}};
}

inline void roc_to_csv(const RocCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out << std::setprecision(17) << "threshold,sensitivity,specificity\n";
    for (const auto& p : curve.points) {
        out << p.threshold << ',' << p.sensitivity << ',' << p.specificity << '\n';
    }
}

inline nlohmann::json to_json(const RocCurve& curve) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : curve.points) {
        points.push_back({{"threshold", p.threshold},
                          {"sensitivity", p.sensitivity},
                          {"specificity", p.specificity}});
    }
    return nlohmann::json{{"auc", curve.auc}, {"points", points}};
}

}  // namespace screener
