#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "screener/error.hpp"

namespace screener {

enum class FeatureKind {
    code_eq,          // q<id>==<code>
    severity_ge,      // q<id>>=<code>, cumulative over the severity chain
    presence,         // q<id>.observed
    age,              // age_months, integer column
    gender_male,      // gender.male
    agg_min_ge,       // agg.min_severity>=<level>
    agg_max_ge,       // agg.max_severity>=<level>
    agg_mean_ge,      // agg.mean_severity>=<level>
    agg_count_level,  // agg.count_level<level>, integer column
    agg_count_other,  // agg.count_other, integer column (equality-coded answers)
    fusion_input      // questionnaire_score / video_score fed to the combiner
};

struct FeatureDescriptor {
    FeatureKind kind = FeatureKind::code_eq;
    int question = 0;  // -1 for aggregate / demographic features
    int operand = 0;   // code, severity level, or unused

    bool operator==(const FeatureDescriptor&) const = default;
};

inline std::string feature_name(const FeatureDescriptor& d) {
    switch (d.kind) {
        case FeatureKind::code_eq:
            return "q" + std::to_string(d.question) + "==" + std::to_string(d.operand);
        case FeatureKind::severity_ge:
            return "q" + std::to_string(d.question) + ">=" + std::to_string(d.operand);
        case FeatureKind::presence:
            return "q" + std::to_string(d.question) + ".observed";
        case FeatureKind::age:
            return "age_months";
        case FeatureKind::gender_male:
            return "gender.male";
        case FeatureKind::agg_min_ge:
            return "agg.min_severity>=" + std::to_string(d.operand);
        case FeatureKind::agg_max_ge:
            return "agg.max_severity>=" + std::to_string(d.operand);
        case FeatureKind::agg_mean_ge:
            return "agg.mean_severity>=" + std::to_string(d.operand);
        case FeatureKind::agg_count_level:
            return "agg.count_level" + std::to_string(d.operand);
        case FeatureKind::agg_count_other:
            return "agg.count_other";
        case FeatureKind::fusion_input:
            return d.operand == 0 ? "questionnaire_score" : "video_score";
    }
    return "?";
}

inline const char* to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::code_eq: return "code_eq";
        case FeatureKind::severity_ge: return "severity_ge";
        case FeatureKind::presence: return "presence";
        case FeatureKind::age: return "age";
        case FeatureKind::gender_male: return "gender_male";
        case FeatureKind::agg_min_ge: return "agg_min_ge";
        case FeatureKind::agg_max_ge: return "agg_max_ge";
        case FeatureKind::agg_mean_ge: return "agg_mean_ge";
        case FeatureKind::agg_count_level: return "agg_count_level";
        case FeatureKind::agg_count_other: return "agg_count_other";
        case FeatureKind::fusion_input: return "fusion_input";
    }
    return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
    for (const auto kind :
         {FeatureKind::code_eq, FeatureKind::severity_ge, FeatureKind::presence,
          FeatureKind::age, FeatureKind::gender_male, FeatureKind::agg_min_ge,
          FeatureKind::agg_max_ge, FeatureKind::agg_mean_ge, FeatureKind::agg_count_level,
          FeatureKind::agg_count_other, FeatureKind::fusion_input}) {
        if (s == to_string(kind)) return kind;
    }
    throw Error(ErrorKind::schema, "unknown feature kind '" + s + "'");
}

// Raw (pre-binarization) aggregate severities, kept for inspection.
struct AggregateRaw {
    bool defined = false;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

// Encoded feature table. All columns are binary except those flagged
// integer_valued (age and the aggregate count columns).
struct FeatureMatrix {
    std::vector<std::string> feature_names;
    std::vector<FeatureDescriptor> descriptors;
    std::vector<std::uint8_t> integer_valued;
    std::vector<float> values;  // row-major
    std::vector<double> weights;
    std::vector<std::uint8_t> labels;  // 1 = positive
    std::vector<std::string> pruned_constant;
    std::vector<AggregateRaw> aggregate_raw;  // per row; empty unless aggregates appended

    std::size_t rows() const { return labels.size(); }
    std::size_t cols() const { return feature_names.size(); }

    float at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }

    const float* row_ptr(std::size_t row) const { return values.data() + row * cols(); }

    std::size_t column_index(const std::string& name) const {
        for (std::size_t c = 0; c < feature_names.size(); ++c) {
            if (feature_names[c] == name) return c;
        }
        throw Error(ErrorKind::contract, "no feature named '" + name + "'");
    }

    double total_weight() const {
        double w = 0.0;
        for (double v : weights) w += v;
        return w;
    }
};

// New matrix restricted to the given columns, in the given order.
inline FeatureMatrix subset_columns(const FeatureMatrix& m, const std::vector<std::size_t>& cols) {
    FeatureMatrix out;
    out.weights = m.weights;
    out.labels = m.labels;
    out.aggregate_raw = m.aggregate_raw;
    for (std::size_t c : cols) {
        if (c >= m.cols()) throw Error(ErrorKind::contract, "column index out of range");
        out.feature_names.push_back(m.feature_names[c]);
        out.descriptors.push_back(m.descriptors[c]);
        out.integer_valued.push_back(m.integer_valued[c]);
    }
    out.values.resize(m.rows() * cols.size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            out.values[r * cols.size() + i] = m.at(r, cols[i]);
        }
    }
    return out;
}

inline FeatureMatrix subset_columns_by_name(const FeatureMatrix& m,
                                            const std::vector<std::string>& names) {
    std::vector<std::size_t> cols;
    cols.reserve(names.size());
    for (const auto& name : names) cols.push_back(m.column_index(name));
    return subset_columns(m, cols);
}

inline FeatureMatrix subset_rows(const FeatureMatrix& m, const std::vector<std::uint32_t>& rows) {
    FeatureMatrix out;
    out.feature_names = m.feature_names;
    out.descriptors = m.descriptors;
    out.integer_valued = m.integer_valued;
    out.pruned_constant = m.pruned_constant;
    out.values.reserve(rows.size() * m.cols());
    for (std::uint32_t r : rows) {
        const float* p = m.row_ptr(r);
        out.values.insert(out.values.end(), p, p + m.cols());
        out.weights.push_back(m.weights[r]);
        out.labels.push_back(m.labels[r]);
        if (!m.aggregate_raw.empty()) out.aggregate_raw.push_back(m.aggregate_raw[r]);
    }
    return out;
}

}  // namespace screener
