#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "screener/dataset.hpp"
#include "screener/encoding_spec.hpp"
#include "screener/error.hpp"
#include "screener/feature_matrix.hpp"

namespace screener {

namespace detail {

// Canonical feature order for one question under its declared mode.
inline std::vector<FeatureDescriptor> question_features(int qid, const QuestionCoding& c) {
    std::vector<FeatureDescriptor> out;
    switch (c.mode) {
        case EncodingMode::one_hot: {
            std::vector<int> codes = c.equality;
            std::sort(codes.begin(), codes.end());
            for (int code : codes) out.push_back({FeatureKind::code_eq, qid, code});
            break;
        }
        case EncodingMode::severity: {
            // Base level keeps an equality column; higher chain codes become
            // cumulative >= columns so worse answers switch on supersets.
            out.push_back({FeatureKind::code_eq, qid, c.chain.front()});
            for (std::size_t i = 1; i < c.chain.size(); ++i) {
                out.push_back({FeatureKind::severity_ge, qid, c.chain[i]});
            }
            std::vector<int> codes = c.equality;
            std::sort(codes.begin(), codes.end());
            for (int code : codes) out.push_back({FeatureKind::code_eq, qid, code});
            break;
        }
        case EncodingMode::presence: {
            out.push_back({FeatureKind::presence, qid, 0});
            break;
        }
    }
    return out;
}

inline float eval_question_feature(const FeatureDescriptor& d, const QuestionCoding& c, int code) {
    switch (d.kind) {
        case FeatureKind::code_eq:
            return code == d.operand ? 1.0f : 0.0f;
        case FeatureKind::severity_ge: {
            const auto level = c.severity_level(code);
            const auto feature_level = c.severity_level(d.operand);
            if (!level || !feature_level) return 0.0f;  // equality / null codes: no >= features
            return *level >= *feature_level ? 1.0f : 0.0f;
        }
        case FeatureKind::presence: {
            const bool observed = std::find(c.observed_codes.begin(), c.observed_codes.end(),
                                            code) != c.observed_codes.end();
            return observed ? 1.0f : 0.0f;
        }
        default:
            throw Error(ErrorKind::contract, "not a question-level feature");
    }
}

inline void require_mode(const Dataset& data, const EncodingSpec& spec, EncodingMode mode) {
    for (const auto& [qid, coding] : spec.questions) {
        if (coding.mode != mode) {
            throw Error(ErrorKind::contract,
                        "question " + std::to_string(qid) + " is not in " +
                            std::string(to_string(mode)) + " mode");
        }
    }
    (void)data;
}

inline int answer_or_throw(const ScoreSheet& sheet, int qid, const QuestionCoding& coding) {
    const auto it = sheet.answers.find(qid);
    if (it == sheet.answers.end()) {
        throw Error(ErrorKind::validation,
                    "subject " + sheet.subject_id + ": no answer for question " +
                        std::to_string(qid),
                    {{"subject", sheet.subject_id}, {"question", qid}});
    }
    if (!coding.declares(it->second)) {
        throw Error(ErrorKind::validation,
                    "subject " + sheet.subject_id + ": question " + std::to_string(qid) +
                        " code " + std::to_string(it->second) + " not declared",
                    {{"subject", sheet.subject_id}, {"question", qid}, {"code", it->second}});
    }
    return it->second;
}

// Drops all-constant columns, recording their names.
inline void prune_constant_columns(FeatureMatrix& m) {
    if (m.rows() == 0) return;
    const std::size_t n_cols = m.cols();
    std::vector<bool> keep(n_cols, false);
    for (std::size_t c = 0; c < n_cols; ++c) {
        const float first = m.at(0, c);
        for (std::size_t r = 1; r < m.rows(); ++r) {
            if (m.at(r, c) != first) {
                keep[c] = true;
                break;
            }
        }
    }
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < n_cols; ++c) {
        if (keep[c]) {
            kept.push_back(c);
        } else {
            m.pruned_constant.push_back(m.feature_names[c]);
        }
    }
    if (kept.size() == n_cols) return;

    std::vector<float> values;
    values.reserve(m.rows() * kept.size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c : kept) values.push_back(m.at(r, c));
    }
    std::vector<std::string> names;
    std::vector<FeatureDescriptor> descriptors;
    std::vector<std::uint8_t> integer_valued;
    for (std::size_t c : kept) {
        names.push_back(m.feature_names[c]);
        descriptors.push_back(m.descriptors[c]);
        integer_valued.push_back(m.integer_valued[c]);
    }
    m.values = std::move(values);
    m.feature_names = std::move(names);
    m.descriptors = std::move(descriptors);
    m.integer_valued = std::move(integer_valued);
}

}  // namespace detail

// Shared encoding engine; per-question mode comes from the spec. Appends age
// and gender columns and prunes constants.
inline FeatureMatrix encode_features(const Dataset& data, const EncodingSpec& spec) {
    FeatureMatrix m;
    for (const auto& [qid, coding] : spec.questions) {
        for (const auto& d : detail::question_features(qid, coding)) {
            m.descriptors.push_back(d);
            m.feature_names.push_back(feature_name(d));
            m.integer_valued.push_back(0);
        }
    }
    m.descriptors.push_back({FeatureKind::age, -1, 0});
    m.feature_names.push_back(feature_name(m.descriptors.back()));
    m.integer_valued.push_back(1);
    m.descriptors.push_back({FeatureKind::gender_male, -1, 0});
    m.feature_names.push_back(feature_name(m.descriptors.back()));
    m.integer_valued.push_back(0);

    const std::size_t n_cols = m.feature_names.size();
    m.values.resize(data.sheets.size() * n_cols);
    m.weights.assign(data.sheets.size(), 1.0);
    m.labels.resize(data.sheets.size());

    std::size_t row = 0;
    for (const auto& sheet : data.sheets) {
        float* out = m.values.data() + row * n_cols;
        std::size_t col = 0;
        for (const auto& [qid, coding] : spec.questions) {
            const int code = detail::answer_or_throw(sheet, qid, coding);
            for (const auto& d : detail::question_features(qid, coding)) {
                out[col++] = detail::eval_question_feature(d, coding, code);
            }
        }
        out[col++] = static_cast<float>(sheet.age_months);
        out[col++] = sheet.gender == Gender::male ? 1.0f : 0.0f;
        m.labels[row] = sheet.label == Label::positive ? 1 : 0;
        ++row;
    }
    detail::prune_constant_columns(m);
    return m;
}

inline FeatureMatrix one_hot_encode(const Dataset& data, const EncodingSpec& spec) {
    detail::require_mode(data, spec, EncodingMode::one_hot);
    return encode_features(data, spec);
}

inline FeatureMatrix severity_encode(const Dataset& data, const EncodingSpec& spec) {
    detail::require_mode(data, spec, EncodingMode::severity);
    return encode_features(data, spec);
}

inline FeatureMatrix presence_encode(const Dataset& data, const EncodingSpec& spec) {
    detail::require_mode(data, spec, EncodingMode::presence);
    return encode_features(data, spec);
}

namespace detail {

// Chain-coded answers only; equality codes land in `other`, nulls vanish.
inline AggregateRaw aggregate_raw_for(const ScoreSheet& sheet, const std::vector<int>& questions,
                                      const EncodingSpec& spec, std::vector<int>& level_counts,
                                      int& other_count) {
    AggregateRaw raw;
    double sum = 0.0;
    int n = 0;
    for (int qid : questions) {
        const auto& coding = spec.at(qid);
        const int code = answer_or_throw(sheet, qid, coding);
        const auto level = coding.severity_level(code);
        if (level) {
            const double lv = static_cast<double>(*level);
            if (n == 0) {
                raw.min = raw.max = lv;
            } else {
                raw.min = std::min(raw.min, lv);
                raw.max = std::max(raw.max, lv);
            }
            sum += lv;
            ++n;
            if (*level < static_cast<int>(level_counts.size())) {
                ++level_counts[static_cast<std::size_t>(*level)];
            }
        } else if (std::find(coding.equality.begin(), coding.equality.end(), code) !=
                   coding.equality.end()) {
            ++other_count;
        }
        // null codes contribute nothing
    }
    if (n > 0) {
        raw.defined = true;
        raw.mean = sum / n;
    }
    return raw;
}

}  // namespace detail

// Appends aggregate severity columns computed over `questions` (all severity
// mode). Min/max/mean become >=level binaries; counts stay integer columns.
// Rows whose listed answers are all null/equality coded get undefined raws
// and all-false threshold columns.
inline void append_aggregates(FeatureMatrix& m, const Dataset& data,
                              const std::vector<int>& questions, const EncodingSpec& spec) {
    if (questions.empty()) {
        throw Error(ErrorKind::parameter, "aggregate question list is empty");
    }
    if (m.rows() != data.sheets.size()) {
        throw Error(ErrorKind::contract, "matrix rows do not match dataset");
    }
    int max_level = 0;
    for (int qid : questions) {
        const auto& coding = spec.at(qid);
        if (coding.mode != EncodingMode::severity) {
            throw Error(ErrorKind::contract,
                        "aggregate question " + std::to_string(qid) + " is not severity mode");
        }
        max_level = std::max(max_level, static_cast<int>(coding.chain.size()) - 1);
    }

    std::vector<FeatureDescriptor> extra;
    for (int k = 1; k <= max_level; ++k) extra.push_back({FeatureKind::agg_min_ge, -1, k});
    for (int k = 1; k <= max_level; ++k) extra.push_back({FeatureKind::agg_max_ge, -1, k});
    for (int k = 1; k <= max_level; ++k) extra.push_back({FeatureKind::agg_mean_ge, -1, k});
    for (int k = 0; k <= max_level; ++k) extra.push_back({FeatureKind::agg_count_level, -1, k});
    extra.push_back({FeatureKind::agg_count_other, -1, 0});

    const std::size_t old_cols = m.cols();
    const std::size_t new_cols = old_cols + extra.size();
    std::vector<float> values(m.rows() * new_cols);
    m.aggregate_raw.assign(m.rows(), AggregateRaw{});

    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::copy(m.row_ptr(r), m.row_ptr(r) + old_cols, values.begin() + r * new_cols);
        std::vector<int> level_counts(static_cast<std::size_t>(max_level) + 1, 0);
        int other_count = 0;
        const AggregateRaw raw = detail::aggregate_raw_for(data.sheets[r], questions, spec,
                                                           level_counts, other_count);
        m.aggregate_raw[r] = raw;
        float* out = values.data() + r * new_cols + old_cols;
        for (const auto& d : extra) {
            float v = 0.0f;
            switch (d.kind) {
                case FeatureKind::agg_min_ge:
                    v = raw.defined && raw.min >= d.operand ? 1.0f : 0.0f;
                    break;
                case FeatureKind::agg_max_ge:
                    v = raw.defined && raw.max >= d.operand ? 1.0f : 0.0f;
                    break;
                case FeatureKind::agg_mean_ge:
                    v = raw.defined && raw.mean >= d.operand ? 1.0f : 0.0f;
                    break;
                case FeatureKind::agg_count_level:
                    v = static_cast<float>(level_counts[static_cast<std::size_t>(d.operand)]);
                    break;
                case FeatureKind::agg_count_other:
                    v = static_cast<float>(other_count);
                    break;
                default:
                    break;
            }
            *out++ = v;
        }
    }

    m.values = std::move(values);
    for (const auto& d : extra) {
        m.descriptors.push_back(d);
        m.feature_names.push_back(feature_name(d));
        const bool integer_col =
            d.kind == FeatureKind::agg_count_level || d.kind == FeatureKind::agg_count_other;
        m.integer_valued.push_back(integer_col ? 1 : 0);
    }
    detail::prune_constant_columns(m);
}

// Everything a deployed screener needs to rebuild its exact feature row.
struct EncodingPlan {
    EncodingSpec spec;
    std::vector<FeatureDescriptor> features;   // model input order
    std::vector<std::string> feature_names;
    std::vector<int> aggregate_questions;      // empty when no aggregates

    std::vector<int> required_questions() const {
        std::set<int> qs;
        for (const auto& d : features) {
            if (d.question >= 0) qs.insert(d.question);
        }
        qs.insert(aggregate_questions.begin(), aggregate_questions.end());
        return {qs.begin(), qs.end()};
    }
};

// Runtime path: one subject's raw answers to the exact training feature row.
inline std::vector<float> encode_for_screening(const EncodingPlan& plan,
                                               const std::map<int, int>& responses,
                                               int age_months, Gender gender) {
    std::vector<int> missing;
    for (int qid : plan.required_questions()) {
        if (!responses.count(qid)) missing.push_back(qid);
    }
    if (!missing.empty()) {
        throw Error(ErrorKind::validation, "missing required responses",
                    {{"missing_questions", missing}});
    }

    AggregateRaw raw;
    std::vector<int> level_counts;
    int other_count = 0;
    if (!plan.aggregate_questions.empty()) {
        int max_level = 0;
        for (int qid : plan.aggregate_questions) {
            max_level =
                std::max(max_level, static_cast<int>(plan.spec.at(qid).chain.size()) - 1);
        }
        level_counts.assign(static_cast<std::size_t>(max_level) + 1, 0);
        ScoreSheet probe;
        probe.subject_id = "(screening)";
        probe.answers = responses;
        raw = detail::aggregate_raw_for(probe, plan.aggregate_questions, plan.spec, level_counts,
                                        other_count);
    }

    std::vector<float> row;
    row.reserve(plan.features.size());
    for (const auto& d : plan.features) {
        switch (d.kind) {
            case FeatureKind::code_eq:
            case FeatureKind::severity_ge:
            case FeatureKind::presence: {
                const auto& coding = plan.spec.at(d.question);
                const int code = responses.at(d.question);
                if (!coding.declares(code)) {
                    throw Error(ErrorKind::validation,
                                "question " + std::to_string(d.question) + ": code " +
                                    std::to_string(code) + " not declared",
                                {{"question", d.question}, {"code", code}});
                }
                row.push_back(detail::eval_question_feature(d, coding, code));
                break;
            }
            case FeatureKind::age:
                row.push_back(static_cast<float>(age_months));
                break;
            case FeatureKind::gender_male:
                row.push_back(gender == Gender::male ? 1.0f : 0.0f);
                break;
            case FeatureKind::agg_min_ge:
                row.push_back(raw.defined && raw.min >= d.operand ? 1.0f : 0.0f);
                break;
            case FeatureKind::agg_max_ge:
                row.push_back(raw.defined && raw.max >= d.operand ? 1.0f : 0.0f);
                break;
            case FeatureKind::agg_mean_ge:
                row.push_back(raw.defined && raw.mean >= d.operand ? 1.0f : 0.0f);
                break;
            case FeatureKind::agg_count_level:
                row.push_back(d.operand < static_cast<int>(level_counts.size())
                                  ? static_cast<float>(level_counts[static_cast<std::size_t>(d.operand)])
                                  : 0.0f);
                break;
            case FeatureKind::agg_count_other:
                row.push_back(static_cast<float>(other_count));
                break;
            case FeatureKind::fusion_input:
                throw Error(ErrorKind::contract,
                            "fusion inputs are produced by upstream screeners, not encoded");
        }
    }
    return row;
}

}  // namespace screener
