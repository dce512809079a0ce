#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/dataset.hpp"
#include "screener/encode.hpp"
#include "screener/encoding_spec.hpp"
#include "screener/error.hpp"
#include "screener/evaluation.hpp"
#include "screener/feature_matrix.hpp"
#include "screener/forest.hpp"
#include "screener/logistic.hpp"
#include "screener/rng.hpp"
#include "screener/selection.hpp"

namespace screener {

// --- age silos ---

enum class Silo { young, old };

inline const char* to_string(Silo s) { return s == Silo::young ? "young" : "old"; }

inline Silo silo_from_string(const std::string& s) {
    if (s == "young") return Silo::young;
    if (s == "old") return Silo::old;
    throw Error(ErrorKind::schema, "unknown silo '" + s + "'");
}

struct SiloConfig {
    int boundary_months = kSiloBoundaryMonths;
};

inline Silo silo_of(int age_months, const SiloConfig& cfg) {
    return age_months < cfg.boundary_months ? Silo::young : Silo::old;
}

// Partition by age; both silos must be populated for training.
inline std::map<Silo, Dataset> silo_split(const Dataset& data, const SiloConfig& cfg) {
    std::map<Silo, Dataset> out;
    for (const auto silo : {Silo::young, Silo::old}) {
        out[silo].instrument = data.instrument;
        out[silo].provenance = data.provenance;
    }
    for (const auto& sheet : data.sheets) {
        out[silo_of(sheet.age_months, cfg)].sheets.push_back(sheet);
    }
    for (const auto silo : {Silo::young, Silo::old}) {
        if (out[silo].sheets.empty()) {
            throw Error(ErrorKind::training, "empty age silo",
                        {{"silo", to_string(silo)}, {"boundary_months", cfg.boundary_months}});
        }
    }
    return out;
}

// --- decision bands ---

enum class Decision { negative, inconclusive, positive };

inline const char* to_string(Decision d) {
    switch (d) {
        case Decision::negative: return "negative";
        case Decision::inconclusive: return "inconclusive";
        case Decision::positive: return "positive";
    }
    return "?";
}

// score < low -> negative, score >= high -> positive, between -> inconclusive.
// Scores at exactly `high` count positive so a zero-width band reproduces the
// binary >=-threshold rule without a stray inconclusive at the cut point.
struct DecisionBand {
    double low = 0.5;
    double high = 0.5;

    bool degenerate() const { return low == high; }
};

inline Decision band_decide(const DecisionBand& band, double score) {
    if (score < band.low) return Decision::negative;
    if (score >= band.high) return Decision::positive;
    return Decision::inconclusive;
}

struct BandMetrics {
    double inconclusive_rate = 0.0;  // weighted
    double conclusive_sensitivity = 0.0;
    double conclusive_specificity = 0.0;
    double conclusive_accuracy = 0.0;
    double conclusive_balanced_accuracy = 0.0;
};

inline BandMetrics band_metrics(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& labels,
                                const std::vector<double>& weights, const DecisionBand& band) {
    double tp = 0.0, fp = 0.0, tn = 0.0, fn = 0.0, inconclusive = 0.0, total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double w = weights[i];
        total += w;
        switch (band_decide(band, scores[i])) {
            case Decision::inconclusive:
                inconclusive += w;
                break;
            case Decision::positive:
                (labels[i] ? tp : fp) += w;
                break;
            case Decision::negative:
                (labels[i] ? fn : tn) += w;
                break;
        }
    }
    BandMetrics out;
    out.inconclusive_rate = total > 0.0 ? inconclusive / total : 0.0;
    const double pos = tp + fn, neg = tn + fp;
    out.conclusive_sensitivity = pos > 0.0 ? tp / pos : 0.0;
    out.conclusive_specificity = neg > 0.0 ? tn / neg : 0.0;
    out.conclusive_accuracy = pos + neg > 0.0 ? (tp + tn) / (pos + neg) : 0.0;
    out.conclusive_balanced_accuracy =
        (out.conclusive_sensitivity + out.conclusive_specificity) / 2.0;
    return out;
}

struct CalibratedBand {
    DecisionBand band;
    BandMetrics metrics;
    std::string warning;
};

// Grid over (low, high) pairs drawn from the 1%-step weighted score quantiles;
// maximizes conclusive balanced accuracy under the inconclusive-rate cap.
// Ties prefer the narrower band, then the lower center. Zero-width pairs are
// always feasible, so the search cannot come back empty.
inline CalibratedBand calibrate_band(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& labels,
                                     const std::vector<double>& weights,
                                     double max_inconclusive_rate) {
    if (scores.empty() || scores.size() != labels.size() || scores.size() != weights.size()) {
        throw Error(ErrorKind::contract, "scores, labels and weights must align");
    }
    if (!(max_inconclusive_rate >= 0.0 && max_inconclusive_rate <= 1.0)) {
        throw Error(ErrorKind::parameter, "max_inconclusive_rate must be in [0,1]");
    }

    std::vector<std::pair<double, double>> value_weight(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) value_weight[i] = {scores[i], weights[i]};
    std::vector<double> candidates;
    for (int q = 0; q <= 100; ++q) {
        candidates.push_back(weighted_quantile(value_weight, q / 100.0));
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // Prefix class weights over ascending scores; prefix(v) = weight of s < v.
    std::sort(value_weight.begin(), value_weight.end());
    std::vector<double> sorted_scores(scores.size());
    std::vector<double> prefix_pos(scores.size() + 1, 0.0), prefix_neg(scores.size() + 1, 0.0);
    {
        std::vector<std::uint32_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return scores[a] < scores[b];
        });
        for (std::size_t i = 0; i < order.size(); ++i) {
            sorted_scores[i] = scores[order[i]];
            prefix_pos[i + 1] = prefix_pos[i] + (labels[order[i]] ? weights[order[i]] : 0.0);
            prefix_neg[i + 1] = prefix_neg[i] + (labels[order[i]] ? 0.0 : weights[order[i]]);
        }
    }
    const double w_pos = prefix_pos.back(), w_neg = prefix_neg.back();
    if (w_pos <= 0.0 || w_neg <= 0.0) {
        throw Error(ErrorKind::evaluation, "band calibration requires both classes");
    }
    const double total = w_pos + w_neg;
    const auto prefix_at = [&](double v) {
        return static_cast<std::size_t>(
            std::lower_bound(sorted_scores.begin(), sorted_scores.end(), v) -
            sorted_scores.begin());
    };

    CalibratedBand best;
    double best_bacc = -1.0, best_width = 0.0, best_center = 0.0;
    for (std::size_t li = 0; li < candidates.size(); ++li) {
        const double low = candidates[li];
        const std::size_t ilow = prefix_at(low);
        for (std::size_t hi = li; hi < candidates.size(); ++hi) {
            const double high = candidates[hi];
            const std::size_t ihigh = prefix_at(high);
            const double inconclusive =
                (prefix_pos[ihigh] - prefix_pos[ilow]) + (prefix_neg[ihigh] - prefix_neg[ilow]);
            if (inconclusive / total > max_inconclusive_rate + 1e-12) continue;
            const double tp = w_pos - prefix_pos[ihigh];
            const double fn = prefix_pos[ilow];
            const double tn = prefix_neg[ilow];
            const double fp = w_neg - prefix_neg[ihigh];
            const double sens = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
            const double spec = tn + fp > 0.0 ? tn / (tn + fp) : 0.0;
            const double bacc = (sens + spec) / 2.0;
            const double width = high - low;
            const double center = (low + high) / 2.0;
            const bool better = bacc > best_bacc ||
                                (bacc == best_bacc &&
                                 (width < best_width ||
                                  (width == best_width && center < best_center)));
            if (better) {
                best_bacc = bacc;
                best_width = width;
                best_center = center;
                best.band = {low, high};
            }
        }
    }
    best.metrics = band_metrics(scores, labels, weights, best.band);
    return best;
}

// --- missing-value injection ---

struct InjectionConfig {
    double target_zero_balance = 0.5;
    double tolerance = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(target_zero_balance > 0.0 && target_zero_balance < 1.0)) {
            throw Error(ErrorKind::parameter, "target_zero_balance must be in (0,1)");
        }
        if (!(tolerance > 0.0 && tolerance < 0.5)) {
            throw Error(ErrorKind::parameter, "tolerance must be in (0,0.5)");
        }
    }
};

struct InjectionReport {
    struct FeatureAudit {
        std::string feature;
        double zero_positive_share_before = 0.0;  // -1 when no zeros existed
        double zero_positive_share_after = 0.0;
        double flipped_positive_weight = 0.0;
        double flipped_negative_weight = 0.0;
        bool skipped = false;
        std::string reason;
    };
    std::vector<FeatureAudit> features;
    std::size_t duplicates_added = 0;
};

struct InjectionResult {
    FeatureMatrix matrix;
    InjectionReport report;
};

namespace detail {

// Flip duplicates of class `cls` whose column f is still 1, in a seeded random
// order, until the flipped weight is as close as possible to `target`.
inline double greedy_flips(FeatureMatrix& m, std::size_t n_original, std::size_t f,
                           std::uint8_t cls, double target, Rng& rng,
                           std::vector<std::size_t>& flipped_rows) {
    std::vector<std::uint32_t> candidates;
    for (std::uint32_t i = 0; i < n_original; ++i) {
        const std::size_t dup = n_original + i;
        if (m.labels[dup] == cls && m.values[dup * m.cols() + f] == 1.0f) {
            candidates.push_back(static_cast<std::uint32_t>(dup));
        }
    }
    rng.shuffle(candidates);
    double flipped = 0.0;
    for (const auto row : candidates) {
        const double w = m.weights[row];
        if (std::abs(flipped + w - target) >= std::abs(flipped - target)) break;
        m.values[row * m.cols() + f] = 0.0f;
        flipped += w;
        flipped_rows.push_back(row);
    }
    return flipped;
}

}  // namespace detail

// Duplicates the whole training set, then flips presence features 1 -> 0 in
// the duplicates until each feature's zero-valued pool holds the target
// positive weight share, so absence stops predicting class. Whole-set
// duplication keeps the weighted class ratio exactly; features whose flip
// budget cannot reach the tolerance window are left untouched and logged.
inline InjectionResult inject_missing(const FeatureMatrix& m, const InjectionConfig& cfg) {
    cfg.validate();
    bool any_presence = false;
    for (const auto& d : m.descriptors) {
        switch (d.kind) {
            case FeatureKind::presence:
                any_presence = true;
                break;
            case FeatureKind::age:
            case FeatureKind::gender_male:
                break;
            default:
                throw Error(ErrorKind::contract,
                            "inject_missing requires a presence-encoded matrix; found " +
                                feature_name(d));
        }
    }
    if (!any_presence) {
        throw Error(ErrorKind::contract, "inject_missing: no presence features");
    }

    InjectionResult out;
    FeatureMatrix& aug = out.matrix;
    aug = m;
    const std::size_t n = m.rows();
    aug.values.reserve(2 * m.values.size());
    aug.values.insert(aug.values.end(), m.values.begin(), m.values.end());
    aug.weights.insert(aug.weights.end(), m.weights.begin(), m.weights.end());
    aug.labels.insert(aug.labels.end(), m.labels.begin(), m.labels.end());
    out.report.duplicates_added = n;

    const double tau = cfg.target_zero_balance;
    const double rho = tau / (1.0 - tau);
    for (std::size_t f = 0; f < m.cols(); ++f) {
        if (m.descriptors[f].kind != FeatureKind::presence) continue;
        InjectionReport::FeatureAudit audit;
        audit.feature = m.feature_names[f];

        double z0p = 0.0, z0n = 0.0, o1p = 0.0, o1n = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const bool one = m.values[r * m.cols() + f] == 1.0f;
            const double w = m.weights[r];
            if (m.labels[r]) {
                (one ? o1p : z0p) += w;
            } else {
                (one ? o1n : z0n) += w;
            }
        }
        const double z0 = z0p + z0n;
        audit.zero_positive_share_before = z0 > 0.0 ? z0p / z0 : -1.0;

        if (z0 > 0.0 && audit.zero_positive_share_before >= tau - cfg.tolerance &&
            audit.zero_positive_share_before <= tau + cfg.tolerance) {
            audit.zero_positive_share_after = audit.zero_positive_share_before;
            out.report.features.push_back(audit);
            continue;
        }

        // Targets solve (2*z0p + Fp) = rho * (2*z0n + Fn) on the doubled pools.
        double target_pos = 0.0, target_neg = 0.0;
        if (z0 > 0.0) {
            const double deficit_pos = rho * 2.0 * z0n - 2.0 * z0p;
            if (deficit_pos > 0.0) {
                target_pos = deficit_pos;
            } else {
                target_neg = 2.0 * z0p / rho - 2.0 * z0n;
            }
        } else {
            target_neg = std::min(o1n, o1p / rho) / 2.0;
            target_pos = rho * target_neg;
        }

        Rng rng(derive_seed(cfg.seed, 0x1F11, f));
        std::vector<std::size_t> flipped_rows;
        const double fp =
            target_pos > 0.0 ? detail::greedy_flips(aug, n, f, 1, target_pos, rng, flipped_rows)
                             : 0.0;
        const double fn =
            target_neg > 0.0 ? detail::greedy_flips(aug, n, f, 0, target_neg, rng, flipped_rows)
                             : 0.0;
        const double pool_pos = 2.0 * z0p + fp, pool_neg = 2.0 * z0n + fn;
        const double share =
            pool_pos + pool_neg > 0.0 ? pool_pos / (pool_pos + pool_neg) : -1.0;
        if (share < tau - cfg.tolerance || share > tau + cfg.tolerance) {
            for (const auto row : flipped_rows) aug.values[row * aug.cols() + f] = 1.0f;
            audit.skipped = true;
            audit.reason = "flip budget cannot reach the target share";
            audit.zero_positive_share_after = audit.zero_positive_share_before;
        } else {
            audit.flipped_positive_weight = fp;
            audit.flipped_negative_weight = fn;
            audit.zero_positive_share_after = share;
        }
        out.report.features.push_back(audit);
    }
    return out;
}

inline nlohmann::json to_json(const InjectionReport& report) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& a : report.features) {
        features.push_back({{"feature", a.feature},
                            {"zero_positive_share_before", a.zero_positive_share_before},
                            {"zero_positive_share_after", a.zero_positive_share_after},
                            {"flipped_positive_weight", a.flipped_positive_weight},
                            {"flipped_negative_weight", a.flipped_negative_weight},
                            {"skipped", a.skipped},
                            {"reason", a.reason}});
    }
    return nlohmann::json{{"duplicates_added", report.duplicates_added}, {"features", features}};
}

// --- deployable artifacts ---

struct ScreenerArtifact {
    std::string silo = "all";
    Instrument instrument = Instrument::adir_like;
    EncodingPlan plan;
    std::vector<int> backing_questions;
    ForestModel model;
    DecisionBand band;
    double threshold = 0.5;  // sensitivity-anchored binary threshold
    nlohmann::json metadata;
};

inline double score_subject(const ScreenerArtifact& artifact, const std::map<int, int>& responses,
                            int age_months, Gender gender) {
    const auto row = encode_for_screening(artifact.plan, responses, age_months, gender);
    return predict_score(artifact.model, row);
}

// --- single-screener training ---

struct ScreenerConfig {
    EncodingSpec spec;
    Instrument instrument = Instrument::adir_like;
    std::string silo_id = "all";
    // Weighting cells: age groups cut at these boundaries, crossed with label.
    // Within a silo there is one age group, so the list must be empty there.
    std::vector<int> weight_boundaries = {kSiloBoundaryMonths};
    bool robust = true;          // robust_select vs. naive_select
    bool use_aggregates = false;
    bool inject = false;         // presence-matrix missing-value injection
    SelectionConfig selection;
    ForestParams forest;
    CVConfig cv;
    double band_rate = 0.0;      // 0 -> degenerate band at the tuned threshold
    std::uint64_t seed = 0;
};

struct TrainedScreener {
    ScreenerArtifact artifact;
    CvSummary cv;
    SelectionReport selection_report;  // empty for naive selection
    TunedThreshold tuned;
    std::vector<double> oof_scores;    // original rows, dataset order
    std::vector<double> oof_weights;
    std::vector<std::uint8_t> oof_labels;
};

// One stratified k-fold pass; scores aligned with `rows`.
inline std::vector<double> cv_oof_scores(const FeatureMatrix& m, int n_folds,
                                         const CvTrainer& trainer, std::uint64_t seed,
                                         std::vector<std::uint32_t> rows = {}) {
    if (rows.empty()) {
        rows.resize(m.rows());
        for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    std::vector<std::uint8_t> local_labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) local_labels[i] = m.labels[rows[i]];
    const auto folds = stratified_folds(local_labels, n_folds, seed);
    std::vector<double> oof(rows.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::uint32_t> train_rows, test_rows;
        for (std::size_t g = 0; g < folds.size(); ++g) {
            for (const auto local : folds[g]) {
                (g == f ? test_rows : train_rows).push_back(rows[local]);
            }
        }
        const auto scores = trainer(m, train_rows, test_rows, derive_seed(seed, f + 1));
        for (std::size_t i = 0; i < folds[f].size(); ++i) oof[folds[f][i]] = scores[i];
    }
    return oof;
}

namespace detail {

// Restrict a spec to the questions an artifact actually consumes.
inline EncodingSpec restrict_spec(const EncodingSpec& spec, const std::vector<int>& questions) {
    EncodingSpec out;
    for (const int qid : questions) out.questions[qid] = spec.at(qid);
    return out;
}

// CV plumbing for injected matrices: folds cover original rows only, and each
// fit trains on the fold's originals plus their duplicates. Duplicates never
// land in a test fold, so near-copies cannot leak across the split.
inline CvTrainer with_duplicates(CvTrainer base, std::size_t n_original) {
    return [base = std::move(base), n_original](const FeatureMatrix& m,
                                                const std::vector<std::uint32_t>& train_rows,
                                                const std::vector<std::uint32_t>& test_rows,
                                                std::uint64_t fit_seed) {
        std::vector<std::uint32_t> extended = train_rows;
        for (const auto r : train_rows) {
            extended.push_back(static_cast<std::uint32_t>(r + n_original));
        }
        return base(m, extended, test_rows, fit_seed);
    };
}

}  // namespace detail

// Full single-instrument pipeline: encode, weight-balance, optionally inject,
// select features, optionally append aggregates, train the forest, record
// bootstrapped CV metrics, and calibrate the operating threshold/band on
// out-of-fold scores.
inline TrainedScreener train_screener(const Dataset& data, const ScreenerConfig& cfg) {
    if (data.sheets.empty()) throw Error(ErrorKind::training, "empty training dataset");
    if (cfg.inject && cfg.use_aggregates) {
        throw Error(ErrorKind::contract, "injection and aggregates cannot be combined");
    }

    FeatureMatrix matrix = encode_features(data, cfg.spec);
    const auto scheme = balance_weights(data, cfg.weight_boundaries);
    matrix.weights = scheme.weights;

    const std::size_t n_original = matrix.rows();
    InjectionReport injection;
    if (cfg.inject) {
        InjectionConfig icfg;
        icfg.seed = derive_seed(cfg.seed, 0x1F1EC7);
        auto injected = inject_missing(matrix, icfg);
        matrix = std::move(injected.matrix);
        injection = std::move(injected.report);
    }

    TrainedScreener out;
    ForestParams sel_params = cfg.forest;
    sel_params.seed = derive_seed(cfg.seed, 0x5E1EC7);
    std::vector<std::string> selected;
    if (cfg.robust) {
        SelectionConfig sel_cfg = cfg.selection;
        sel_cfg.seed = derive_seed(cfg.seed, 0xB007);
        out.selection_report = robust_select(matrix, sel_cfg, sel_params);
        selected = out.selection_report.selected;
    } else {
        selected = naive_select(matrix, cfg.selection.final_k, sel_params);
    }
    std::sort(selected.begin(), selected.end(), [&](const auto& a, const auto& b) {
        return matrix.column_index(a) < matrix.column_index(b);
    });

    FeatureMatrix work = subset_columns_by_name(matrix, selected);
    const auto backing = backing_questions(matrix, selected);
    std::vector<int> aggregate_questions;
    if (cfg.use_aggregates) {
        aggregate_questions = backing;
        append_aggregates(work, data, aggregate_questions, cfg.spec);
    }

    ForestParams fp = cfg.forest;
    fp.seed = derive_seed(cfg.seed, 0xF05237);
    auto trainer = forest_cv_trainer(fp);
    std::vector<std::uint32_t> cv_rows;
    if (cfg.inject) {
        trainer = detail::with_duplicates(std::move(trainer), n_original);
        cv_rows.resize(n_original);
        for (std::uint32_t i = 0; i < n_original; ++i) cv_rows[i] = i;
    }

    CVConfig cv = cfg.cv;
    cv.seed = derive_seed(cfg.seed, 0xCF01D);
    out.cv = bootstrapped_cv(work, cv, trainer, cv_rows);

    out.oof_scores = cv_oof_scores(work, cv.n_folds, trainer, derive_seed(cfg.seed, 0x00F),
                                   cv_rows);
    out.oof_labels.assign(work.labels.begin(),
                          work.labels.begin() + static_cast<std::ptrdiff_t>(n_original));
    out.oof_weights.assign(work.weights.begin(),
                           work.weights.begin() + static_cast<std::ptrdiff_t>(n_original));
    const auto curve = roc(out.oof_scores, out.oof_labels, out.oof_weights);
    out.tuned = tune_threshold(curve, cv.target_sensitivity);

    DecisionBand band{out.tuned.threshold, out.tuned.threshold};
    nlohmann::json band_json;
    if (cfg.band_rate > 0.0) {
        const auto calibrated =
            calibrate_band(out.oof_scores, out.oof_labels, out.oof_weights, cfg.band_rate);
        band = calibrated.band;
        band_json = {{"inconclusive_rate", calibrated.metrics.inconclusive_rate},
                     {"conclusive_balanced_accuracy",
                      calibrated.metrics.conclusive_balanced_accuracy},
                     {"conclusive_accuracy", calibrated.metrics.conclusive_accuracy},
                     {"rate_cap", cfg.band_rate}};
    }

    ScreenerArtifact& artifact = out.artifact;
    artifact.silo = cfg.silo_id;
    artifact.instrument = cfg.instrument;
    artifact.model = train_forest(work, fp);
    artifact.band = band;
    artifact.threshold = out.tuned.threshold;
    artifact.backing_questions = backing;

    std::vector<int> plan_questions = backing;
    plan_questions.insert(plan_questions.end(), aggregate_questions.begin(),
                          aggregate_questions.end());
    std::sort(plan_questions.begin(), plan_questions.end());
    plan_questions.erase(std::unique(plan_questions.begin(), plan_questions.end()),
                         plan_questions.end());
    artifact.plan.spec = detail::restrict_spec(cfg.spec, plan_questions);
    artifact.plan.features = work.descriptors;
    artifact.plan.feature_names = work.feature_names;
    artifact.plan.aggregate_questions = aggregate_questions;

    artifact.metadata = {
        {"seed", cfg.seed},
        {"forest", to_json(fp)},
        {"cv", to_json(out.cv)},
        {"tuned_threshold",
         {{"threshold", out.tuned.threshold},
          {"sensitivity", out.tuned.sensitivity},
          {"specificity", out.tuned.specificity},
          {"target_sensitivity", cv.target_sensitivity}}},
        {"weighting", to_json(scheme)},
        {"selected_features", selected},
        {"robust_selection", cfg.robust},
        {"aggregates", cfg.use_aggregates},
        {"pruned_constant", matrix.pruned_constant},
    };
    if (cfg.inject) artifact.metadata["injection"] = to_json(injection);
    if (cfg.robust) artifact.metadata["selection"] = to_json(out.selection_report);
    if (!band_json.is_null()) artifact.metadata["band_calibration"] = band_json;
    return out;
}

// --- variant ladder ---

enum class Variant { baseline, robust, siloed, severity, aggregate, inconclusive };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::robust: return "robust";
        case Variant::siloed: return "siloed";
        case Variant::severity: return "severity";
        case Variant::aggregate: return "aggregate";
        case Variant::inconclusive: return "inconclusive";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    for (const auto v : {Variant::baseline, Variant::robust, Variant::siloed, Variant::severity,
                         Variant::aggregate, Variant::inconclusive}) {
        if (s == to_string(v)) return v;
    }
    throw Error(ErrorKind::parameter, "unknown variant '" + s + "'");
}

struct VariantConfig {
    Variant variant = Variant::aggregate;
    SelectionConfig selection;
    ForestParams forest;
    CVConfig cv;
    SiloConfig silo;
    double max_inconclusive_rate = 0.25;
    std::uint64_t seed = 0;
};

struct TrainedVariant {
    Variant variant = Variant::baseline;
    std::vector<TrainedScreener> screeners;  // one, or one per silo
    double overall_auc = 0.0;                // sample-weighted mean over silos
};

// Cumulative presets: each rung keeps every prior improvement. The passed spec
// is the instrument's native (severity-mode) coding; early rungs flatten it to
// one-hot.
inline TrainedVariant train_variant(const Dataset& data, const EncodingSpec& spec,
                                    const VariantConfig& cfg) {
    const bool siloed = cfg.variant >= Variant::siloed;
    const bool use_severity = cfg.variant >= Variant::severity;
    const bool use_aggregates = cfg.variant >= Variant::aggregate;
    const bool use_band = cfg.variant >= Variant::inconclusive;
    const bool robust = cfg.variant >= Variant::robust;

    ScreenerConfig base;
    base.spec = use_severity ? spec : one_hot_baseline(spec);
    base.instrument = data.instrument;
    base.robust = robust;
    base.use_aggregates = use_aggregates;
    base.selection = cfg.selection;
    base.forest = cfg.forest;
    base.cv = cfg.cv;
    base.band_rate = use_band ? cfg.max_inconclusive_rate : 0.0;

    TrainedVariant out;
    out.variant = cfg.variant;
    if (!siloed) {
        base.seed = derive_seed(cfg.seed, 0xA11);
        out.screeners.push_back(train_screener(data, base));
        out.overall_auc = out.screeners.front().cv.auc.mean;
        return out;
    }

    const auto silos = silo_split(data, cfg.silo);
    double weighted_auc = 0.0, total = 0.0;
    for (const auto silo : {Silo::young, Silo::old}) {
        ScreenerConfig sc = base;
        sc.silo_id = to_string(silo);
        sc.weight_boundaries = {};
        sc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(silo) + 1);
        out.screeners.push_back(train_screener(silos.at(silo), sc));
        const double n = static_cast<double>(silos.at(silo).sheets.size());
        weighted_auc += n * out.screeners.back().cv.auc.mean;
        total += n;
    }
    out.overall_auc = weighted_auc / total;
    return out;
}

// --- meta-classifier inconclusive method ---

struct MetaScreener {
    ForestModel first;          // base binary screener
    ForestModel misclassifier;  // predicts "first will be wrong"
    ForestModel conclusive;     // final decision model, conclusive samples only
    double first_threshold = 0.5;
    double meta_gate = 0.5;       // misclassifier score > gate -> inconclusive
    double conclusive_threshold = 0.5;
    bool fallback = false;  // degenerate second stage -> band method instead
    CalibratedBand fallback_band;
    std::vector<std::string> warnings;
};

struct MetaDecision {
    Decision decision = Decision::inconclusive;
    double first_score = 0.0;
    double meta_score = 0.0;
    double conclusive_score = 0.0;
};

// The second classifier learns, from out-of-fold mistakes of the first,
// which subjects are unsafe to decide; the third decides the rest.
inline MetaScreener meta_inconclusive(const FeatureMatrix& m, const ForestParams& params,
                                      const CVConfig& cfg, double max_inconclusive_rate,
                                      std::uint64_t seed = 0) {
    if (!(max_inconclusive_rate > 0.0 && max_inconclusive_rate <= 1.0)) {
        throw Error(ErrorKind::parameter, "max_inconclusive_rate must be in (0,1]");
    }
    MetaScreener out;
    ForestParams fp = params;
    fp.seed = derive_seed(seed, 1);
    const auto trainer = forest_cv_trainer(fp);
    const auto oof1 = cv_oof_scores(m, cfg.n_folds, trainer, derive_seed(seed, 2));
    const auto tuned = tune_threshold(roc(oof1, m.labels, m.weights), cfg.target_sensitivity);
    out.first_threshold = tuned.threshold;
    out.first = train_forest(m, fp);

    std::vector<std::uint8_t> meta_labels(m.rows());
    std::size_t n_wrong = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const bool predicted = oof1[i] >= tuned.threshold;
        meta_labels[i] = predicted != (m.labels[i] != 0) ? 1 : 0;
        n_wrong += meta_labels[i];
    }

    const auto fall_back = [&](const std::string& why) {
        out.fallback = true;
        out.warnings.push_back(why + "; falling back to band calibration");
        out.fallback_band = calibrate_band(oof1, m.labels, m.weights, max_inconclusive_rate);
        return out;
    };
    if (n_wrong == 0 || n_wrong == m.rows()) {
        return fall_back("degenerate second-stage labels (all " +
                         std::string(n_wrong == 0 ? "correct" : "incorrect") + ")");
    }
    if (n_wrong < static_cast<std::size_t>(cfg.n_folds) ||
        m.rows() - n_wrong < static_cast<std::size_t>(cfg.n_folds)) {
        return fall_back("too few misclassified samples to cross-validate the second stage");
    }

    FeatureMatrix meta_matrix = m;
    meta_matrix.labels = meta_labels;
    ForestParams mp = params;
    mp.seed = derive_seed(seed, 3);
    const auto oof2 =
        cv_oof_scores(meta_matrix, cfg.n_folds, forest_cv_trainer(mp), derive_seed(seed, 4));
    out.misclassifier = train_forest(meta_matrix, mp);

    std::vector<std::pair<double, double>> meta_vw(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) meta_vw[i] = {oof2[i], m.weights[i]};
    out.meta_gate = weighted_quantile(meta_vw, 1.0 - max_inconclusive_rate);

    std::vector<std::uint32_t> conclusive_rows;
    for (std::uint32_t i = 0; i < m.rows(); ++i) {
        if (oof2[i] <= out.meta_gate) conclusive_rows.push_back(i);
    }
    std::size_t conc_pos = 0, conc_neg = 0;
    for (const auto r : conclusive_rows) (m.labels[r] ? conc_pos : conc_neg)++;
    if (conc_pos < static_cast<std::size_t>(cfg.n_folds) ||
        conc_neg < static_cast<std::size_t>(cfg.n_folds)) {
        return fall_back("conclusive subset too small to train the third stage");
    }

    ForestParams cp = params;
    cp.seed = derive_seed(seed, 5);
    out.conclusive = train_forest(m, cp, conclusive_rows);
    const auto oof3 = cv_oof_scores(m, cfg.n_folds, forest_cv_trainer(cp), derive_seed(seed, 6),
                                    conclusive_rows);
    std::vector<std::uint8_t> conc_labels(conclusive_rows.size());
    std::vector<double> conc_weights(conclusive_rows.size());
    for (std::size_t i = 0; i < conclusive_rows.size(); ++i) {
        conc_labels[i] = m.labels[conclusive_rows[i]];
        conc_weights[i] = m.weights[conclusive_rows[i]];
    }
    out.conclusive_threshold =
        tune_threshold(roc(oof3, conc_labels, conc_weights), cfg.target_sensitivity).threshold;
    return out;
}

inline MetaDecision meta_decide(const MetaScreener& meta, const float* row, std::size_t n) {
    MetaDecision out;
    out.first_score = predict_score(meta.first, row, n);
    if (meta.fallback) {
        out.decision = band_decide(meta.fallback_band.band, out.first_score);
        return out;
    }
    out.meta_score = predict_score(meta.misclassifier, row, n);
    if (out.meta_score > meta.meta_gate) {
        out.decision = Decision::inconclusive;
        return out;
    }
    out.conclusive_score = predict_score(meta.conclusive, row, n);
    out.decision = out.conclusive_score >= meta.conclusive_threshold ? Decision::positive
                                                                     : Decision::negative;
    return out;
}

// --- combined screener (questionnaire + video fusion) ---

struct CombinedSilo {
    ScreenerArtifact questionnaire;
    ScreenerArtifact video;
    LogisticModel fusion;  // inputs: [questionnaire_score, video_score]
    DecisionBand band;
    nlohmann::json metadata;
};

struct CombinedScreener {
    SiloConfig silo_config;
    std::map<std::string, CombinedSilo> silos;  // "young" / "old"
};

struct FusedDecision {
    Decision decision = Decision::inconclusive;
    double fused_score = 0.0;
    double questionnaire_score = 0.0;
    std::optional<double> video_score;
    bool video_fallback = false;
};

// Runtime fusion; a missing video score falls back to the questionnaire's own
// band, flagged so downstream consumers can tell.
inline FusedDecision combine(double questionnaire_score, std::optional<double> video_score,
                             const LogisticModel& fusion, const DecisionBand& band,
                             const DecisionBand& questionnaire_band) {
    FusedDecision out;
    out.questionnaire_score = questionnaire_score;
    out.video_score = video_score;
    if (!video_score) {
        out.video_fallback = true;
        out.fused_score = questionnaire_score;
        out.decision = band_decide(questionnaire_band, questionnaire_score);
        return out;
    }
    out.fused_score = predict_logistic(
        fusion, {static_cast<float>(questionnaire_score), static_cast<float>(*video_score)});
    out.decision = band_decide(band, out.fused_score);
    return out;
}

inline FusedDecision combine(double questionnaire_score, std::optional<double> video_score,
                             const CombinedSilo& silo) {
    return combine(questionnaire_score, video_score, silo.fusion, silo.band,
                   silo.questionnaire.band);
}

struct CombinedConfig {
    EncodingSpec questionnaire_spec;
    EncodingSpec video_spec;
    SelectionConfig questionnaire_selection;  // final_k 20 by default
    SelectionConfig video_selection;          // final_k 10 by default
    ForestParams forest;
    CVConfig cv;
    SiloConfig silo;
    double max_inconclusive_rate = 0.25;
    bool questionnaire_aggregates = true;
    bool video_injection = true;
    std::uint64_t seed = 0;

    CombinedConfig() { video_selection.final_k = 10; }
};

// Per silo: train both screeners, fuse their out-of-fold scores with logistic
// regression, and calibrate one combined band. Individual screener bands stay
// out of the fused path; only the combined band can declare inconclusive.
inline CombinedScreener train_combined(const Dataset& questionnaire_data,
                                       const Dataset& video_data, const CombinedConfig& cfg) {
    std::map<std::string, std::size_t> video_index;
    for (std::size_t i = 0; i < video_data.sheets.size(); ++i) {
        video_index[video_data.sheets[i].subject_id] = i;
    }

    CombinedScreener out;
    out.silo_config = cfg.silo;
    const auto q_silos = silo_split(questionnaire_data, cfg.silo);
    for (const auto silo : {Silo::young, Silo::old}) {
        const Dataset& q_all = q_silos.at(silo);
        // Fusion trains on subjects present in both datasets; unpaired
        // questionnaire subjects are dropped here and counted.
        Dataset q_paired, v_paired;
        q_paired.instrument = questionnaire_data.instrument;
        v_paired.instrument = video_data.instrument;
        std::size_t unpaired = 0;
        for (const auto& sheet : q_all.sheets) {
            const auto it = video_index.find(sheet.subject_id);
            if (it == video_index.end()) {
                ++unpaired;
                continue;
            }
            const auto& video_sheet = video_data.sheets[it->second];
            if (video_sheet.age_months != sheet.age_months ||
                video_sheet.label != sheet.label) {
                throw Error(ErrorKind::validation,
                            "subject " + sheet.subject_id +
                                " differs between questionnaire and video datasets");
            }
            q_paired.sheets.push_back(sheet);
            v_paired.sheets.push_back(video_sheet);
        }
        if (q_paired.sheets.empty()) {
            throw Error(ErrorKind::training, "no paired subjects in silo",
                        {{"silo", to_string(silo)}});
        }

        const auto silo_tag = static_cast<std::uint64_t>(silo) + 1;
        ScreenerConfig qc;
        qc.spec = cfg.questionnaire_spec;
        qc.instrument = questionnaire_data.instrument;
        qc.silo_id = to_string(silo);
        qc.weight_boundaries = {};
        qc.robust = true;
        qc.use_aggregates = cfg.questionnaire_aggregates;
        qc.selection = cfg.questionnaire_selection;
        qc.forest = cfg.forest;
        qc.cv = cfg.cv;
        qc.seed = derive_seed(cfg.seed, silo_tag, 1);
        TrainedScreener tq = train_screener(q_paired, qc);

        ScreenerConfig vc;
        vc.spec = cfg.video_spec;
        vc.instrument = video_data.instrument;
        vc.silo_id = to_string(silo);
        vc.weight_boundaries = {};
        vc.robust = true;
        vc.inject = cfg.video_injection;
        vc.selection = cfg.video_selection;
        vc.forest = cfg.forest;
        vc.cv = cfg.cv;
        vc.seed = derive_seed(cfg.seed, silo_tag, 2);
        TrainedScreener tv = train_screener(v_paired, vc);

        FeatureMatrix fusion_matrix;
        fusion_matrix.descriptors = {{FeatureKind::fusion_input, -1, 0},
                                     {FeatureKind::fusion_input, -1, 1}};
        for (const auto& d : fusion_matrix.descriptors) {
            fusion_matrix.feature_names.push_back(feature_name(d));
        }
        fusion_matrix.integer_valued = {0, 0};
        const std::size_t n = q_paired.sheets.size();
        fusion_matrix.values.resize(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            fusion_matrix.values[2 * i] = static_cast<float>(tq.oof_scores[i]);
            fusion_matrix.values[2 * i + 1] = static_cast<float>(tv.oof_scores[i]);
        }
        fusion_matrix.labels = tq.oof_labels;
        fusion_matrix.weights = tq.oof_weights;

        LogisticModel fusion = train_logistic(fusion_matrix, LogisticParams{});
        if (!fusion.converged) {
            throw Error(ErrorKind::training, "fusion model failed to converge",
                        {{"silo", to_string(silo)},
                         {"gradient_norm", fusion.gradient_norm}});
        }

        std::vector<double> fused(n);
        for (std::size_t i = 0; i < n; ++i) {
            fused[i] = predict_logistic(fusion, fusion_matrix.row_ptr(i), 2);
        }
        const auto band = calibrate_band(fused, fusion_matrix.labels, fusion_matrix.weights,
                                         cfg.max_inconclusive_rate);

        CombinedSilo cs;
        cs.questionnaire = std::move(tq.artifact);
        cs.video = std::move(tv.artifact);
        cs.fusion = std::move(fusion);
        cs.band = band.band;
        cs.metadata = {
            {"paired_subjects", n},
            {"unpaired_questionnaire_subjects", unpaired},
            {"questionnaire_auc",
             roc(tq.oof_scores, tq.oof_labels, tq.oof_weights).auc},
            {"video_auc", roc(tv.oof_scores, tv.oof_labels, tv.oof_weights).auc},
            {"fused_auc", roc(fused, fusion_matrix.labels, fusion_matrix.weights).auc},
            {"band",
             {{"low", band.band.low},
              {"high", band.band.high},
              {"inconclusive_rate", band.metrics.inconclusive_rate},
              {"conclusive_balanced_accuracy",
               band.metrics.conclusive_balanced_accuracy}}},
        };
        out.silos[to_string(silo)] = std::move(cs);
    }
    return out;
}

// --- runtime screening ---

struct ScreenRequest {
    std::map<int, int> questionnaire;
    std::optional<std::map<int, int>> video;
    int age_months = 0;
    Gender gender = Gender::unknown;
};

struct DecisionRecord {
    Decision decision = Decision::inconclusive;
    double fused_score = 0.0;
    double questionnaire_score = 0.0;
    std::optional<double> video_score;
    std::string silo;
    bool video_fallback = false;
    std::vector<std::string> warnings;
    int format_version = 1;
};

inline DecisionRecord screen(const CombinedScreener& combined, const ScreenRequest& request) {
    DecisionRecord record;
    if (request.age_months < kMinAgeMonths || request.age_months > kMaxAgeMonths) {
        record.warnings.push_back("age " + std::to_string(request.age_months) +
                                  " months outside supported range [" +
                                  std::to_string(kMinAgeMonths) + ", " +
                                  std::to_string(kMaxAgeMonths) + "]; nearest silo used");
    }
    const Silo silo = silo_of(request.age_months, combined.silo_config);
    record.silo = to_string(silo);
    const CombinedSilo& cs = combined.silos.at(record.silo);

    record.questionnaire_score =
        score_subject(cs.questionnaire, request.questionnaire, request.age_months,
                      request.gender);
    std::optional<double> video_score;
    if (request.video) {
        video_score = score_subject(cs.video, *request.video, request.age_months,
                                    request.gender);
    } else {
        record.warnings.push_back("no video responses; questionnaire-only decision");
    }
    const auto fused = combine(record.questionnaire_score, video_score, cs);
    record.decision = fused.decision;
    record.fused_score = fused.fused_score;
    record.video_score = fused.video_score;
    record.video_fallback = fused.video_fallback;
    return record;
}

// Single-instrument screening against one artifact.
inline DecisionRecord screen_single(const ScreenerArtifact& artifact,
                                    const std::map<int, int>& responses, int age_months,
                                    Gender gender) {
    DecisionRecord record;
    if (age_months < kMinAgeMonths || age_months > kMaxAgeMonths) {
        record.warnings.push_back("age outside supported range");
    }
    record.silo = artifact.silo;
    record.questionnaire_score = score_subject(artifact, responses, age_months, gender);
    record.fused_score = record.questionnaire_score;
    record.decision = band_decide(artifact.band, record.questionnaire_score);
    return record;
}

// --- serialization ---

inline nlohmann::json to_json(const FeatureDescriptor& d) {
    return nlohmann::json{
        {"kind", to_string(d.kind)}, {"question", d.question}, {"operand", d.operand}};
}

inline FeatureDescriptor feature_descriptor_from_json(const nlohmann::json& j) {
    FeatureDescriptor d;
    d.kind = feature_kind_from_string(j.at("kind").get<std::string>());
    d.question = j.at("question").get<int>();
    d.operand = j.at("operand").get<int>();
    return d;
}

inline nlohmann::json to_json(const DecisionBand& band) {
    return nlohmann::json{{"low", band.low}, {"high", band.high}};
}

inline DecisionBand band_from_json(const nlohmann::json& j) {
    return {j.at("low").get<double>(), j.at("high").get<double>()};
}

inline nlohmann::json to_json(const ScreenerArtifact& artifact) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& d : artifact.plan.features) features.push_back(to_json(d));
    return nlohmann::json{{"format_version", 1},
                          {"type", "screener_artifact"},
                          {"silo", artifact.silo},
                          {"instrument", to_string(artifact.instrument)},
                          {"encoding", to_json(artifact.plan.spec)},
                          {"features", features},
                          {"feature_names", artifact.plan.feature_names},
                          {"aggregate_questions", artifact.plan.aggregate_questions},
                          {"backing_questions", artifact.backing_questions},
                          {"model", to_json(artifact.model)},
                          {"band", to_json(artifact.band)},
                          {"threshold", artifact.threshold},
                          {"metadata", artifact.metadata}};
}

inline ScreenerArtifact artifact_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "screener_artifact") {
        throw Error(ErrorKind::schema, "not a screener artifact");
    }
    ScreenerArtifact artifact;
    artifact.silo = j.at("silo").get<std::string>();
    artifact.instrument = instrument_from_string(j.at("instrument").get<std::string>());
    artifact.plan.spec = encoding_spec_from_json(j.at("encoding"));
    for (const auto& d : j.at("features")) {
        artifact.plan.features.push_back(feature_descriptor_from_json(d));
    }
    artifact.plan.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    artifact.plan.aggregate_questions = j.at("aggregate_questions").get<std::vector<int>>();
    artifact.backing_questions = j.at("backing_questions").get<std::vector<int>>();
    artifact.model = forest_from_json(j.at("model"));
    artifact.band = band_from_json(j.at("band"));
    artifact.threshold = j.at("threshold").get<double>();
    artifact.metadata = j.at("metadata");
    return artifact;
}

inline nlohmann::json to_json(const CombinedScreener& combined) {
    nlohmann::json silos;
    for (const auto& [name, cs] : combined.silos) {
        silos[name] = {{"questionnaire", to_json(cs.questionnaire)},
                       {"video", to_json(cs.video)},
                       {"fusion", to_json(cs.fusion)},
                       {"band", to_json(cs.band)},
                       {"metadata", cs.metadata}};
    }
    return nlohmann::json{{"format_version", 1},
                          {"type", "combined_screener"},
                          {"boundary_months", combined.silo_config.boundary_months},
                          {"silos", silos}};
}

inline CombinedScreener combined_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "combined_screener") {
        throw Error(ErrorKind::schema, "not a combined screener");
    }
    CombinedScreener combined;
    combined.silo_config.boundary_months = j.at("boundary_months").get<int>();
    for (const auto& [name, cs_json] : j.at("silos").items()) {
        CombinedSilo cs;
        cs.questionnaire = artifact_from_json(cs_json.at("questionnaire"));
        cs.video = artifact_from_json(cs_json.at("video"));
        cs.fusion = logistic_from_json(cs_json.at("fusion"));
        cs.band = band_from_json(cs_json.at("band"));
        cs.metadata = cs_json.at("metadata");
        combined.silos[name] = std::move(cs);
    }
    return combined;
}

inline nlohmann::json to_json(const DecisionRecord& record) {
    nlohmann::json j{{"format_version", record.format_version},
                     {"decision", to_string(record.decision)},
                     {"fused_score", record.fused_score},
                     {"questionnaire_score", record.questionnaire_score},
                     {"silo", record.silo},
                     {"video_fallback", record.video_fallback},
                     {"warnings", record.warnings}};
    if (record.video_score) {
        j["video_score"] = *record.video_score;
    } else {
        j["video_score"] = nullptr;
    }
    return j;
}

inline nlohmann::json to_json(const MetaScreener& meta) {
    nlohmann::json j{{"format_version", 1},
                     {"type", "meta_screener"},
                     {"first", to_json(meta.first)},
                     {"first_threshold", meta.first_threshold},
                     {"fallback", meta.fallback},
                     {"warnings", meta.warnings}};
    if (meta.fallback) {
        j["fallback_band"] = to_json(meta.fallback_band.band);
    } else {
        j["misclassifier"] = to_json(meta.misclassifier);
        j["meta_gate"] = meta.meta_gate;
        j["conclusive"] = to_json(meta.conclusive);
        j["conclusive_threshold"] = meta.conclusive_threshold;
    }
    return j;
}

inline MetaScreener meta_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "meta_screener") {
        throw Error(ErrorKind::schema, "not a meta screener");
    }
    MetaScreener meta;
    meta.first = forest_from_json(j.at("first"));
    meta.first_threshold = j.at("first_threshold").get<double>();
    meta.fallback = j.at("fallback").get<bool>();
    meta.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (meta.fallback) {
        meta.fallback_band.band = band_from_json(j.at("fallback_band"));
    } else {
        meta.misclassifier = forest_from_json(j.at("misclassifier"));
        meta.meta_gate = j.at("meta_gate").get<double>();
        meta.conclusive = forest_from_json(j.at("conclusive"));
        meta.conclusive_threshold = j.at("conclusive_threshold").get<double>();
    }
    return meta;
}

}  // namespace screener
