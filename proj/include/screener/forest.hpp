#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/error.hpp"
#include "screener/feature_matrix.hpp"
#include "screener/parallel.hpp"
#include "screener/rng.hpp"

namespace screener {

enum class SplitFeatureRule { sqrt_rule, fraction };

struct ForestParams {
    int n_trees = 400;
    int max_depth = 0;            // 0 = unlimited
    double min_leaf_frac = 0.01;  // min weighted leaf, as a fraction of total tree weight
    SplitFeatureRule feature_rule = SplitFeatureRule::sqrt_rule;
    double feature_fraction = 0.25;  // used when feature_rule == fraction
    bool bootstrap = true;
    std::uint64_t seed = 0;

    std::size_t features_per_split(std::size_t n_features) const {
        std::size_t m;
        if (feature_rule == SplitFeatureRule::sqrt_rule) {
            m = static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features)));
        } else {
            m = static_cast<std::size_t>(std::llround(feature_fraction * n_features));
        }
        return std::clamp<std::size_t>(m, 1, n_features);
    }

    void validate() const {
        if (n_trees < 1) throw Error(ErrorKind::parameter, "n_trees must be >= 1");
        if (max_depth < 0) throw Error(ErrorKind::parameter, "max_depth must be >= 0");
        if (!(min_leaf_frac > 0.0 && min_leaf_frac < 1.0)) {
            throw Error(ErrorKind::parameter, "min_leaf_frac must be in (0,1)");
        }
        if (feature_rule == SplitFeatureRule::fraction &&
            !(feature_fraction > 0.0 && feature_fraction <= 1.0)) {
            throw Error(ErrorKind::parameter, "feature_fraction must be in (0,1]");
        }
    }

    // Deterministic ordering for grid-search tie-breaks.
    auto key() const {
        return std::tuple(n_trees, max_depth, min_leaf_frac,
                          feature_rule == SplitFeatureRule::sqrt_rule ? 0 : 1, feature_fraction,
                          bootstrap ? 1 : 0);
    }
};

// Flat binary tree; node 0 is the root, children precede nothing (DFS order).
struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    float threshold = 0.0f;     // go left when value <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    double w_neg = 0.0;  // weighted class distribution at the leaf
    double w_pos = 0.0;

    bool is_leaf() const { return feature < 0; }

    double p_pos() const {
        const double w = w_neg + w_pos;
        return w > 0.0 ? w_pos / w : 0.5;
    }
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestModel {
    std::vector<Tree> trees;
    std::vector<std::string> feature_names;
    std::vector<std::uint8_t> integer_valued;
    std::vector<double> importances;  // per feature, normalized to sum 1
    ForestParams params;
};

namespace detail {

struct TreeSample {
    std::vector<std::uint32_t> rows;   // unique rows used by this tree
    std::vector<double> weights;       // parallel to rows
    double total_weight = 0.0;
};

// Weight-proportional bootstrap: llround(total_weight) inverse-CDF draws,
// each carrying weight 1. Integer-weight duplication then matches duplicated
// rows exactly, because the duplicated cumulative array refines this one.
inline TreeSample bootstrap_sample(const FeatureMatrix& m,
                                   const std::vector<std::uint32_t>& rows, Rng& rng) {
    std::vector<double> cumulative(rows.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        acc += m.weights[rows[i]];
        cumulative[i] = acc;
    }
    const auto draws = std::max<std::int64_t>(1, std::llround(acc));
    std::vector<double> bag(rows.size(), 0.0);
    for (std::int64_t d = 0; d < draws; ++d) {
        bag[rng.weighted_index(cumulative)] += 1.0;
    }
    TreeSample sample;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (bag[i] > 0.0) {
            sample.rows.push_back(rows[i]);
            sample.weights.push_back(bag[i]);
            sample.total_weight += bag[i];
        }
    }
    return sample;
}

struct SplitResult {
    bool found = false;
    std::int32_t feature = -1;
    float threshold = 0.0f;
    double gain = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& m, const ForestParams& params, TreeSample sample, Rng rng)
        : m_(m),
          params_(params),
          sample_(std::move(sample)),
          rng_(std::move(rng)),
          min_leaf_weight_(params.min_leaf_frac * sample_.total_weight),
          importance_(m.cols(), 0.0) {}

    Tree build() {
        Tree tree;
        order_.resize(sample_.rows.size());
        for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
        double w_pos = 0.0;
        for (std::size_t i = 0; i < sample_.rows.size(); ++i) {
            if (m_.labels[sample_.rows[i]]) w_pos += sample_.weights[i];
        }
        grow(tree, 0, static_cast<std::uint32_t>(order_.size()), sample_.total_weight, w_pos, 0);
        return tree;
    }

    const std::vector<double>& importance() const { return importance_; }

private:
    std::int32_t grow(Tree& tree, std::uint32_t begin, std::uint32_t end, double w_total,
                      double w_pos, int depth);
    SplitResult best_split(std::uint32_t begin, std::uint32_t end, double w_total, double w_pos);

    static double gini(double w_pos, double w_total) {
        if (w_total <= 0.0) return 0.0;
        const double p = w_pos / w_total;
        return 2.0 * p * (1.0 - p);
    }

    const FeatureMatrix& m_;
    const ForestParams& params_;
    TreeSample sample_;
    Rng rng_;
    double min_leaf_weight_;
    std::vector<double> importance_;
    std::vector<std::uint32_t> order_;  // permutation of sample slots, partitioned in place
};

inline SplitResult TreeBuilder::best_split(std::uint32_t begin, std::uint32_t end,
                                           double w_total, double w_pos) {
    SplitResult best;
    const double parent_gini = gini(w_pos, w_total);
    const std::size_t n_cols = m_.cols();
    // Candidates are scanned in draw order and ties keep the first winner, so
    // identical clone features split the credit evenly across seeds.
    const auto candidates = rng_.sample_indices(n_cols, params_.features_per_split(n_cols));
    for (const std::uint32_t f : candidates) {
        if (m_.integer_valued[f]) {
            // Histogram over the (small) integer range, thresholds at
            // midpoints between consecutive observed values.
            double hist_w[256] = {0.0};
            double hist_wp[256] = {0.0};
            int lo = 256, hi = -1;
            for (std::uint32_t i = begin; i < end; ++i) {
                const std::uint32_t slot = order_[i];
                const std::uint32_t row = sample_.rows[slot];
                const int v = static_cast<int>(m_.values[row * n_cols + f]);
                const double w = sample_.weights[slot];
                hist_w[v] += w;
                if (m_.labels[row]) hist_wp[v] += w;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (lo >= hi) continue;
            double wl = 0.0, wpl = 0.0;
            int prev = -1;
            for (int v = lo; v <= hi; ++v) {
                if (hist_w[v] <= 0.0) continue;
                if (prev >= 0) {
                    const double wr = w_total - wl;
                    const double wpr = w_pos - wpl;
                    if (wl >= min_leaf_weight_ && wr >= min_leaf_weight_) {
                        const double gain =
                            parent_gini -
                            (wl * gini(wpl, wl) + wr * gini(wpr, wr)) / w_total;
                        if (gain > best.gain + 1e-12) {
                            best.found = true;
                            best.feature = static_cast<std::int32_t>(f);
                            best.threshold = static_cast<float>((prev + v) / 2.0);
                            best.gain = gain;
                        }
                    }
                }
                wl += hist_w[v];
                wpl += hist_wp[v];
                prev = v;
            }
        } else {
            // Binary fast path: a single pass accumulates the value==1 side.
            double w1 = 0.0, wp1 = 0.0;
            for (std::uint32_t i = begin; i < end; ++i) {
                const std::uint32_t slot = order_[i];
                const std::uint32_t row = sample_.rows[slot];
                const double v = m_.values[row * n_cols + f];
                const double w = sample_.weights[slot] * v;
                w1 += w;
                if (m_.labels[row]) wp1 += w;
            }
            const double w0 = w_total - w1;
            const double wp0 = w_pos - wp1;
            if (w0 < min_leaf_weight_ || w1 < min_leaf_weight_) continue;
            const double gain =
                parent_gini - (w0 * gini(wp0, w0) + w1 * gini(wp1, w1)) / w_total;
            if (gain > best.gain + 1e-12) {
                best.found = true;
                best.feature = static_cast<std::int32_t>(f);
                best.threshold = 0.5f;
                best.gain = gain;
            }
        }
    }
    return best;
}

inline std::int32_t TreeBuilder::grow(Tree& tree, std::uint32_t begin, std::uint32_t end,
                                      double w_total, double w_pos, int depth) {
    const auto make_leaf = [&]() {
        TreeNode leaf;
        leaf.w_pos = w_pos;
        leaf.w_neg = w_total - w_pos;
        tree.nodes.push_back(leaf);
        return static_cast<std::int32_t>(tree.nodes.size() - 1);
    };

    const bool pure = w_pos <= 0.0 || w_pos >= w_total;
    const bool depth_capped = params_.max_depth > 0 && depth >= params_.max_depth;
    if (pure || depth_capped || w_total < 2.0 * min_leaf_weight_) return make_leaf();

    const SplitResult split = best_split(begin, end, w_total, w_pos);
    if (!split.found) return make_leaf();

    const std::size_t n_cols = m_.cols();
    const auto mid_it = std::stable_partition(
        order_.begin() + begin, order_.begin() + end, [&](std::uint32_t slot) {
            return m_.values[sample_.rows[slot] * n_cols +
                             static_cast<std::size_t>(split.feature)] <= split.threshold;
        });
    const auto mid = static_cast<std::uint32_t>(mid_it - order_.begin());

    double wl = 0.0, wpl = 0.0;
    for (std::uint32_t i = begin; i < mid; ++i) {
        const std::uint32_t slot = order_[i];
        wl += sample_.weights[slot];
        if (m_.labels[sample_.rows[slot]]) wpl += sample_.weights[slot];
    }

    importance_[static_cast<std::size_t>(split.feature)] +=
        (w_total / sample_.total_weight) * split.gain;

    TreeNode node;
    node.feature = split.feature;
    node.threshold = split.threshold;
    tree.nodes.push_back(node);
    const auto index = static_cast<std::int32_t>(tree.nodes.size() - 1);
    const auto left = grow(tree, begin, mid, wl, wpl, depth + 1);
    const auto right = grow(tree, mid, end, w_total - wl, w_pos - wpl, depth + 1);
    tree.nodes[static_cast<std::size_t>(index)].left = left;
    tree.nodes[static_cast<std::size_t>(index)].right = right;
    return index;
}

}  // namespace detail

// Trains on the given rows (all rows when empty). Deterministic for a fixed
// seed, independent of worker count: every tree derives its own RNG stream.
inline ForestModel train_forest(const FeatureMatrix& m, const ForestParams& params,
                                std::vector<std::uint32_t> rows = {}) {
    params.validate();
    if (m.cols() == 0) throw Error(ErrorKind::training, "no features to train on");
    if (rows.empty()) {
        rows.resize(m.rows());
        for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    double w_pos = 0.0, w_neg = 0.0;
    for (const auto r : rows) {
        const double w = m.weights[r];
        if (!(w > 0.0)) throw Error(ErrorKind::parameter, "sample weights must be > 0");
        (m.labels[r] ? w_pos : w_neg) += w;
    }
    if (w_pos <= 0.0 || w_neg <= 0.0) {
        throw Error(ErrorKind::training, "training data must contain both classes");
    }

    ForestModel model;
    model.params = params;
    model.feature_names = m.feature_names;
    model.integer_valued = m.integer_valued;
    model.trees.resize(static_cast<std::size_t>(params.n_trees));
    std::vector<std::vector<double>> tree_importance(
        static_cast<std::size_t>(params.n_trees));

    parallel_for(static_cast<std::size_t>(params.n_trees), [&](std::size_t t) {
        Rng rng(derive_seed(params.seed, t, 0xF07E57));
        detail::TreeSample sample;
        if (params.bootstrap) {
            sample = detail::bootstrap_sample(m, rows, rng);
        } else {
            sample.rows = rows;
            for (const auto r : rows) {
                sample.weights.push_back(m.weights[r]);
                sample.total_weight += m.weights[r];
            }
        }
        detail::TreeBuilder builder(m, params, std::move(sample), std::move(rng));
        model.trees[t] = builder.build();
        tree_importance[t] = builder.importance();
    });

    // Importance reduction in tree order, then normalization to sum 1.
    model.importances.assign(m.cols(), 0.0);
    for (const auto& imp : tree_importance) {
        for (std::size_t f = 0; f < imp.size(); ++f) model.importances[f] += imp[f];
    }
    double total = 0.0;
    for (const double v : model.importances) total += v;
    if (total > 0.0) {
        for (auto& v : model.importances) v /= total;
    }
    return model;
}

inline double predict_tree(const Tree& tree, const float* row) {
    std::size_t node = 0;
    while (!tree.nodes[node].is_leaf()) {
        const TreeNode& n = tree.nodes[node];
        node = static_cast<std::size_t>(
            row[n.feature] <= n.threshold ? n.left : n.right);
    }
    return tree.nodes[node].p_pos();
}

// Mean of the leaf positive-class probabilities across trees; always in [0,1].
inline double predict_score(const ForestModel& model, const float* row, std::size_t n_values) {
    if (n_values != model.feature_names.size()) {
        throw Error(ErrorKind::contract,
                    "feature row has " + std::to_string(n_values) + " values, model expects " +
                        std::to_string(model.feature_names.size()));
    }
    double sum = 0.0;
    for (const auto& tree : model.trees) sum += predict_tree(tree, row);
    return sum / static_cast<double>(model.trees.size());
}

inline double predict_score(const ForestModel& model, const std::vector<float>& row) {
    return predict_score(model, row.data(), row.size());
}

inline std::vector<double> predict_matrix(const ForestModel& model, const FeatureMatrix& m,
                                          const std::vector<std::uint32_t>& rows) {
    if (m.cols() != model.feature_names.size()) {
        throw Error(ErrorKind::contract, "matrix columns do not match model features");
    }
    std::vector<double> scores(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        scores[i] = predict_score(model, m.row_ptr(rows[i]), m.cols());
    }
    return scores;
}

// Importance ranking, descending, ties broken by feature name.
inline std::vector<std::pair<std::string, double>> feature_importance(const ForestModel& model) {
    std::vector<std::pair<std::string, double>> ranked;
    ranked.reserve(model.feature_names.size());
    for (std::size_t f = 0; f < model.feature_names.size(); ++f) {
        ranked.emplace_back(model.feature_names[f], model.importances[f]);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return ranked;
}

// --- serialization ---

inline const char* to_string(SplitFeatureRule rule) {
    return rule == SplitFeatureRule::sqrt_rule ? "sqrt" : "fraction";
}

inline nlohmann::json to_json(const ForestParams& p) {
    return nlohmann::json{{"n_trees", p.n_trees},
                          {"max_depth", p.max_depth},
                          {"min_leaf_frac", p.min_leaf_frac},
                          {"feature_rule", to_string(p.feature_rule)},
                          {"feature_fraction", p.feature_fraction},
                          {"bootstrap", p.bootstrap},
                          {"seed", p.seed}};
}

inline ForestParams forest_params_from_json(const nlohmann::json& j) {
    ForestParams p;
    p.n_trees = j.at("n_trees").get<int>();
    p.max_depth = j.at("max_depth").get<int>();
    p.min_leaf_frac = j.at("min_leaf_frac").get<double>();
    const std::string rule = j.at("feature_rule").get<std::string>();
    if (rule == "sqrt") {
        p.feature_rule = SplitFeatureRule::sqrt_rule;
    } else if (rule == "fraction") {
        p.feature_rule = SplitFeatureRule::fraction;
    } else {
        throw Error(ErrorKind::schema, "unknown feature rule '" + rule + "'");
    }
    p.feature_fraction = j.at("feature_fraction").get<double>();
    p.bootstrap = j.at("bootstrap").get<bool>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

namespace detail {

inline nlohmann::json node_to_json(const Tree& tree, std::size_t index) {
    const TreeNode& n = tree.nodes[index];
    if (n.is_leaf()) {
        return nlohmann::json{{"w_neg", n.w_neg}, {"w_pos", n.w_pos}};
    }
    return nlohmann::json{{"feature", n.feature},
                          {"threshold", static_cast<double>(n.threshold)},
                          {"left", node_to_json(tree, static_cast<std::size_t>(n.left))},
                          {"right", node_to_json(tree, static_cast<std::size_t>(n.right))}};
}

inline std::int32_t node_from_json(const nlohmann::json& j, Tree& tree) {
    TreeNode node;
    const auto index = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.push_back(node);
    if (j.contains("feature")) {
        const auto left = node_from_json(j.at("left"), tree);
        const auto right = node_from_json(j.at("right"), tree);
        auto& n = tree.nodes[static_cast<std::size_t>(index)];
        n.feature = j.at("feature").get<std::int32_t>();
        n.threshold = static_cast<float>(j.at("threshold").get<double>());
        n.left = left;
        n.right = right;
    } else {
        auto& n = tree.nodes[static_cast<std::size_t>(index)];
        n.w_neg = j.at("w_neg").get<double>();
        n.w_pos = j.at("w_pos").get<double>();
    }
    return index;
}

}  // namespace detail

inline nlohmann::json to_json(const ForestModel& model) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : model.trees) trees.push_back(detail::node_to_json(tree, 0));
    return nlohmann::json{{"format_version", 1},
                          {"type", "forest"},
                          {"params", to_json(model.params)},
                          {"feature_names", model.feature_names},
                          {"integer_valued", model.integer_valued},
                          {"importances", model.importances},
                          {"trees", trees}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "forest") {
        throw Error(ErrorKind::schema, "not a forest model");
    }
    ForestModel model;
    model.params = forest_params_from_json(j.at("params"));
    model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    model.integer_valued = j.at("integer_valued").get<std::vector<std::uint8_t>>();
    model.importances = j.at("importances").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) {
        Tree tree;
        detail::node_from_json(t, tree);
        model.trees.push_back(std::move(tree));
    }
    return model;
}

}  // namespace screener
