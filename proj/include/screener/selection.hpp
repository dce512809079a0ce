#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/error.hpp"
#include "screener/evaluation.hpp"
#include "screener/feature_matrix.hpp"
#include "screener/forest.hpp"
#include "screener/parallel.hpp"
#include "screener/rng.hpp"

namespace screener {

struct SelectionConfig {
    int n_bootstrap = 100;
    double sample_fraction = 0.9;
    int per_iteration_top_k = 20;
    int candidate_pool = 30;
    int final_k = 20;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_bootstrap < 1) throw Error(ErrorKind::parameter, "n_bootstrap must be >= 1");
        if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
            throw Error(ErrorKind::parameter, "sample_fraction must be in (0,1]");
        }
        if (per_iteration_top_k < 1) {
            throw Error(ErrorKind::parameter, "per_iteration_top_k must be >= 1");
        }
        if (candidate_pool < 1) throw Error(ErrorKind::parameter, "candidate_pool must be >= 1");
        if (final_k < 1 || final_k > candidate_pool) {
            throw Error(ErrorKind::parameter, "final_k must be in [1, candidate_pool]");
        }
    }
};

inline nlohmann::json to_json(const SelectionConfig& cfg) {
    return nlohmann::json{{"n_bootstrap", cfg.n_bootstrap},
                          {"sample_fraction", cfg.sample_fraction},
                          {"per_iteration_top_k", cfg.per_iteration_top_k},
                          {"candidate_pool", cfg.candidate_pool},
                          {"final_k", cfg.final_k},
                          {"seed", cfg.seed}};
}

inline SelectionConfig selection_config_from_json(const nlohmann::json& j) {
    SelectionConfig cfg;
    cfg.n_bootstrap = j.value("n_bootstrap", cfg.n_bootstrap);
    cfg.sample_fraction = j.value("sample_fraction", cfg.sample_fraction);
    cfg.per_iteration_top_k = j.value("per_iteration_top_k", cfg.per_iteration_top_k);
    cfg.candidate_pool = j.value("candidate_pool", cfg.candidate_pool);
    cfg.final_k = j.value("final_k", cfg.final_k);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

struct SelectionReport {
    std::map<std::string, int> tally;        // top-k appearances per feature
    std::vector<std::string> candidates;     // retained pool, highest tally first
    std::vector<std::string> selected;       // final feature list
    struct IterationLog {
        int iteration = 0;
        int attempts = 1;
        std::size_t subsample_size = 0;
        std::vector<std::string> top_features;
    };
    std::vector<IterationLog> iterations;
    int redraws = 0;
    SelectionConfig config;
};

// Top-k features of a single forest fit, by importance (ties by name).
inline std::vector<std::string> naive_select(const FeatureMatrix& m, int k,
                                             const ForestParams& params) {
    if (k < 1 || static_cast<std::size_t>(k) > m.cols()) {
        throw Error(ErrorKind::parameter, "k must be in [1, feature count]",
                    {{"k", k}, {"features", m.cols()}});
    }
    const auto model = train_forest(m, params);
    const auto ranked = feature_importance(model);
    std::vector<std::string> selected;
    selected.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) selected.push_back(ranked[static_cast<std::size_t>(i)].first);
    return selected;
}

namespace detail {

// Label-stratified draw without replacement; returned rows are sorted so a
// 100% fraction reproduces the full-matrix row order exactly.
inline std::vector<std::uint32_t> stratified_subsample(const std::vector<std::uint8_t>& labels,
                                                       double fraction, std::uint64_t seed) {
    std::vector<std::uint32_t> pos, neg;
    for (std::uint32_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
    Rng rng(seed);
    std::vector<std::uint32_t> rows;
    for (auto* cls : {&neg, &pos}) {
        const auto take = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(cls->size())));
        for (const auto j : rng.sample_indices(cls->size(), std::min(take, cls->size()))) {
            rows.push_back((*cls)[j]);
        }
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

}  // namespace detail

// Two-step bootstrapped selection: tally each iteration's top features over
// label-stratified subsamples, keep the highest-tally candidate pool, then run
// one final importance pass restricted to the candidates.
inline SelectionReport robust_select(const FeatureMatrix& m, const SelectionConfig& cfg,
                                     const ForestParams& params) {
    cfg.validate();
    if (static_cast<std::size_t>(cfg.final_k) > m.cols()) {
        throw Error(ErrorKind::parameter, "final_k exceeds feature count",
                    {{"final_k", cfg.final_k}, {"features", m.cols()}});
    }
    const auto top_k = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.per_iteration_top_k), m.cols());

    SelectionReport report;
    report.config = cfg;
    report.iterations.resize(static_cast<std::size_t>(cfg.n_bootstrap));
    std::vector<int> tally(m.cols(), 0);
    std::vector<std::vector<std::uint32_t>> iteration_top(
        static_cast<std::size_t>(cfg.n_bootstrap));
    std::vector<int> attempts_used(static_cast<std::size_t>(cfg.n_bootstrap), 1);
    const int max_redraws = static_cast<int>(0.20 * cfg.n_bootstrap);

    parallel_for(static_cast<std::size_t>(cfg.n_bootstrap), [&](std::size_t iter) {
        auto& log = report.iterations[iter];
        log.iteration = static_cast<int>(iter);
        for (int attempt = 0;; ++attempt) {
            const auto rows = detail::stratified_subsample(
                m.labels, cfg.sample_fraction,
                derive_seed(cfg.seed, iter, static_cast<std::uint64_t>(attempt)));
            bool has_pos = false, has_neg = false;
            for (const auto r : rows) (m.labels[r] ? has_pos : has_neg) = true;
            if (!has_pos || !has_neg) {
                if (attempt + 1 > max_redraws) {
                    throw Error(ErrorKind::selection, "too many degenerate subsamples",
                                {{"iteration", iter}, {"attempts", attempt + 1}});
                }
                continue;
            }
            log.attempts = attempt + 1;
            log.subsample_size = rows.size();
            const auto model = train_forest(m, params, rows);
            const auto ranked = feature_importance(model);
            auto& top = iteration_top[iter];
            for (std::size_t i = 0; i < top_k; ++i) {
                top.push_back(m.column_index(ranked[i].first));
                log.top_features.push_back(ranked[i].first);
            }
            return;
        }
    });

    for (std::size_t iter = 0; iter < iteration_top.size(); ++iter) {
        report.redraws += report.iterations[iter].attempts - 1;
        for (const auto f : iteration_top[iter]) ++tally[f];
    }
    if (report.redraws > max_redraws) {
        throw Error(ErrorKind::selection, "too many degenerate subsamples",
                    {{"redraws", report.redraws}, {"allowed", max_redraws}});
    }
    for (std::size_t f = 0; f < m.cols(); ++f) {
        if (tally[f] > 0) report.tally[m.feature_names[f]] = tally[f];
    }

    // Candidate pool: highest tallies, boundary ties broken by feature name.
    std::vector<std::uint32_t> order(m.cols());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (tally[a] != tally[b]) return tally[a] > tally[b];
        return m.feature_names[a] < m.feature_names[b];
    });
    const auto pool = std::min<std::size_t>(static_cast<std::size_t>(cfg.candidate_pool),
                                            m.cols());
    std::vector<std::size_t> candidate_cols(order.begin(),
                                            order.begin() + static_cast<std::ptrdiff_t>(pool));
    std::sort(candidate_cols.begin(), candidate_cols.end());
    for (const auto f : order) {
        if (report.candidates.size() >= pool) break;
        report.candidates.push_back(m.feature_names[f]);
    }

    const auto restricted = subset_columns(m, candidate_cols);
    report.selected = naive_select(restricted, cfg.final_k, params);
    return report;
}

// Questions backing a selected feature set (demographic features back none).
inline std::vector<int> backing_questions(const FeatureMatrix& m,
                                          const std::vector<std::string>& selected) {
    std::vector<int> questions;
    for (const auto& name : selected) {
        const auto& d = m.descriptors[m.column_index(name)];
        if (d.question > 0) questions.push_back(d.question);
    }
    std::sort(questions.begin(), questions.end());
    questions.erase(std::unique(questions.begin(), questions.end()), questions.end());
    return questions;
}

inline nlohmann::json to_json(const SelectionReport& report) {
    nlohmann::json logs = nlohmann::json::array();
    for (const auto& it : report.iterations) {
        logs.push_back({{"iteration", it.iteration},
                        {"attempts", it.attempts},
                        {"subsample_size", it.subsample_size},
                        {"top_features", it.top_features}});
    }
    return nlohmann::json{{"format_version", 1},
                          {"config", to_json(report.config)},
                          {"tally", report.tally},
                          {"candidates", report.candidates},
                          {"selected", report.selected},
                          {"redraws", report.redraws},
                          {"iterations", logs}};
}

// --- progressive sampling ---

struct ProgressivePoint {
    double fraction = 0.0;
    std::size_t n_samples = 0;
    double auc_mean = 0.0;
    double auc_ci_low = 0.0;
    double auc_ci_high = 0.0;
};

struct ProgressiveCurve {
    std::vector<ProgressivePoint> points;
    std::vector<std::string> warnings;  // skipped fractions
};

// Bootstrapped-CV AUC of the supplied trainer at growing stratified
// subsamples; quantifies whether more data would still help.
inline ProgressiveCurve progressive_sampling(const FeatureMatrix& m,
                                             const std::vector<double>& fractions,
                                             const CVConfig& cfg, const CvTrainer& trainer,
                                             std::uint64_t seed = 0) {
    if (fractions.empty()) throw Error(ErrorKind::parameter, "no fractions given");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) {
            throw Error(ErrorKind::parameter, "fractions must lie in (0,1]");
        }
        if (i > 0 && fractions[i] <= fractions[i - 1]) {
            throw Error(ErrorKind::parameter, "fractions must be ascending");
        }
    }
    ProgressiveCurve curve;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const auto rows =
            detail::stratified_subsample(m.labels, fractions[i], derive_seed(seed, i));
        std::size_t n_pos = 0, n_neg = 0;
        for (const auto r : rows) (m.labels[r] ? n_pos : n_neg)++;
        if (n_pos < static_cast<std::size_t>(cfg.n_folds) ||
            n_neg < static_cast<std::size_t>(cfg.n_folds)) {
            curve.warnings.push_back("fraction " + std::to_string(fractions[i]) +
                                     " skipped: subsample too small for " +
                                     std::to_string(cfg.n_folds) + " folds");
            continue;
        }
        try {
            const auto summary = bootstrapped_cv(m, cfg, trainer, rows);
            curve.points.push_back({fractions[i], rows.size(), summary.auc.mean,
                                    summary.auc.ci_low, summary.auc.ci_high});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::fold) throw;
            curve.warnings.push_back("fraction " + std::to_string(fractions[i]) +
                                     " skipped: " + e.what());
        }
    }
    return curve;
}

inline nlohmann::json to_json(const ProgressiveCurve& curve) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : curve.points) {
        points.push_back({{"fraction", p.fraction},
                          {"n_samples", p.n_samples},
                          {"auc_mean", p.auc_mean},
                          {"auc_ci_low", p.auc_ci_low},
                          {"auc_ci_high", p.auc_ci_high}});
    }
    return nlohmann::json{{"points", points}, {"warnings", curve.warnings}};
}

inline void progressive_to_csv(const ProgressiveCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out << std::setprecision(17) << "fraction,auc,ci_low,ci_high\n";
    for (const auto& p : curve.points) {
        out << p.fraction << ',' << p.auc_mean << ',' << p.auc_ci_low << ',' << p.auc_ci_high
            << '\n';
    }
}

}  // namespace screener
