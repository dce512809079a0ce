#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/encoding_spec.hpp"
#include "screener/error.hpp"
#include "screener/rng.hpp"

namespace screener {

enum class Gender { male, female, unknown };
enum class Label { negative, positive };

inline const char* to_string(Gender g) {
    switch (g) {
        case Gender::male: return "male";
        case Gender::female: return "female";
        case Gender::unknown: return "unknown";
    }
    return "?";
}

inline const char* to_string(Label l) {
    return l == Label::positive ? "positive" : "negative";
}

enum class Instrument { adir_like, ados_module1_like, ados_module2_like };

inline const char* to_string(Instrument i) {
    switch (i) {
        case Instrument::adir_like: return "adir_like";
        case Instrument::ados_module1_like: return "ados_module1_like";
        case Instrument::ados_module2_like: return "ados_module2_like";
    }
    return "?";
}

inline Instrument instrument_from_string(const std::string& s) {
    if (s == "adir_like") return Instrument::adir_like;
    if (s == "ados_module1_like") return Instrument::ados_module1_like;
    if (s == "ados_module2_like") return Instrument::ados_module2_like;
    throw Error(ErrorKind::parameter, "unknown instrument '" + s + "'");
}

constexpr int kMinAgeMonths = 18;
constexpr int kMaxAgeMonths = 84;
constexpr int kSiloBoundaryMonths = 48;

// One subject's instrument record.
struct ScoreSheet {
    std::string subject_id;
    int age_months = 0;
    Gender gender = Gender::unknown;
    std::map<int, int> answers;  // question id -> answer code
    Label label = Label::negative;
};

struct Dataset {
    std::vector<ScoreSheet> sheets;
    Instrument instrument = Instrument::adir_like;
    std::string provenance;

    std::size_t size() const { return sheets.size(); }

    std::vector<std::uint8_t> labels() const {
        std::vector<std::uint8_t> out(sheets.size());
        for (std::size_t i = 0; i < sheets.size(); ++i) {
            out[i] = sheets[i].label == Label::positive ? 1 : 0;
        }
        return out;
    }
};

// One row-level ingestion problem; rows are collected, never silently dropped.
struct RowIssue {
    std::size_t row = 0;  // 1-based data row number (header excluded)
    std::string subject_id;
    std::string message;
};

struct ValidationReport {
    std::vector<RowIssue> issues;
    bool ok() const { return issues.empty(); }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& issue : issues) {
            rows.push_back({{"row", issue.row},
                            {"subject_id", issue.subject_id},
                            {"message", issue.message}});
        }
        return nlohmann::json{{"ok", ok()}, {"issues", rows}};
    }
};

// Validates one sheet against the spec; appends problems to `report`.
inline void validate_sheet(const ScoreSheet& sheet, const EncodingSpec& spec,
                           std::size_t row, ValidationReport& report) {
    if (sheet.age_months < kMinAgeMonths || sheet.age_months > kMaxAgeMonths) {
        report.issues.push_back(
            {row, sheet.subject_id,
             "age_months " + std::to_string(sheet.age_months) + " outside " +
                 std::to_string(kMinAgeMonths) + ".." + std::to_string(kMaxAgeMonths)});
    }
    for (const auto& [qid, coding] : spec.questions) {
        const auto it = sheet.answers.find(qid);
        if (it == sheet.answers.end()) {
            report.issues.push_back(
                {row, sheet.subject_id, "missing answer for question " + std::to_string(qid)});
            continue;
        }
        if (!coding.declares(it->second)) {
            report.issues.push_back(
                {row, sheet.subject_id,
                 "question " + std::to_string(qid) + ": code " + std::to_string(it->second) +
                     " not among declared codes"});
        }
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline bool parse_int(const std::string& s, int& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stoi(s, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == s.size();
}

}  // namespace detail

// CSV ingestion. Header: subject_id,age_months,gender,label,q_<id>,...
// Schema problems throw; row-level violations are returned in `report` and
// offending rows are still materialized so callers can inspect them.
inline Dataset load_csv(const std::string& path, Instrument instrument,
                        const EncodingSpec& spec, ValidationReport& report) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open dataset: " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw Error(ErrorKind::schema, path + ": empty file");
    }
    if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();
    const auto header = detail::split_csv_line(header_line);

    const std::vector<std::string> required = {"subject_id", "age_months", "gender", "label"};
    std::map<std::string, std::size_t> column_of;
    for (std::size_t i = 0; i < header.size(); ++i) column_of[header[i]] = i;
    for (const auto& name : required) {
        if (!column_of.count(name)) {
            throw Error(ErrorKind::schema, path + ": missing required column '" + name + "'",
                        {{"column", name}});
        }
    }
    std::map<int, std::size_t> question_column;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i].rfind("q_", 0) == 0) {
            int qid = 0;
            if (!detail::parse_int(header[i].substr(2), qid)) {
                throw Error(ErrorKind::schema, path + ": malformed question column '" + header[i] + "'");
            }
            question_column[qid] = i;
        }
    }
    for (const auto& [qid, coding] : spec.questions) {
        if (!question_column.count(qid)) {
            throw Error(ErrorKind::schema,
                        path + ": missing question column q_" + std::to_string(qid));
        }
    }

    Dataset data;
    data.instrument = instrument;
    data.provenance = path;

    std::set<std::string> seen_ids;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size()) {
            report.issues.push_back({row, "", "expected " + std::to_string(header.size()) +
                                                  " fields, got " + std::to_string(fields.size())});
            continue;
        }
        ScoreSheet sheet;
        sheet.subject_id = fields[column_of["subject_id"]];
        if (!seen_ids.insert(sheet.subject_id).second) {
            report.issues.push_back({row, sheet.subject_id, "duplicate subject_id"});
        }
        if (!detail::parse_int(fields[column_of["age_months"]], sheet.age_months)) {
            report.issues.push_back({row, sheet.subject_id, "non-integer age_months"});
        }
        const std::string& g = fields[column_of["gender"]];
        if (g == "male") {
            sheet.gender = Gender::male;
        } else if (g == "female") {
            sheet.gender = Gender::female;
        } else if (g == "unknown") {
            sheet.gender = Gender::unknown;
        } else {
            report.issues.push_back({row, sheet.subject_id, "unknown gender '" + g + "'"});
        }
        const std::string& l = fields[column_of["label"]];
        if (l == "positive") {
            sheet.label = Label::positive;
        } else if (l == "negative") {
            sheet.label = Label::negative;
        } else {
            report.issues.push_back({row, sheet.subject_id, "unknown label '" + l + "'"});
        }
        for (const auto& [qid, col] : question_column) {
            int code = 0;
            if (!detail::parse_int(fields[col], code)) {
                report.issues.push_back(
                    {row, sheet.subject_id,
                     "question " + std::to_string(qid) + ": non-integer code '" + fields[col] + "'"});
                continue;
            }
            sheet.answers[qid] = code;
        }
        validate_sheet(sheet, spec, row, report);
        data.sheets.push_back(std::move(sheet));
    }
    return data;
}

// Strict variant: any row issue is an error.
inline Dataset load_csv_strict(const std::string& path, Instrument instrument,
                               const EncodingSpec& spec) {
    ValidationReport report;
    Dataset data = load_csv(path, instrument, spec, report);
    if (!report.ok()) {
        throw Error(ErrorKind::validation,
                    path + ": " + std::to_string(report.issues.size()) + " invalid row value(s)",
                    report.to_json());
    }
    return data;
}

inline void write_csv(const Dataset& data, const EncodingSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write dataset: " + path);
    const auto ids = spec.question_ids();
    out << "subject_id,age_months,gender,label";
    for (int qid : ids) out << ",q_" << qid;
    out << '\n';
    for (const auto& sheet : data.sheets) {
        out << sheet.subject_id << ',' << sheet.age_months << ',' << to_string(sheet.gender)
            << ',' << to_string(sheet.label);
        for (int qid : ids) {
            const auto it = sheet.answers.find(qid);
            if (it == sheet.answers.end()) {
                throw Error(ErrorKind::contract,
                            "sheet " + sheet.subject_id + " missing question " + std::to_string(qid));
            }
            out << ',' << it->second;
        }
        out << '\n';
    }
}

struct HoldoutSplit {
    Dataset train;
    Dataset holdout;
};

// Label-stratified holdout split; per class, round(fraction * n) samples go
// to the holdout side. Original sheet order is preserved within each side.
inline HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw Error(ErrorKind::parameter, "holdout fraction must be in (0,1)");
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < data.sheets.size(); ++i) {
        (data.sheets[i].label == Label::positive ? pos : neg).push_back(i);
    }
    if (pos.size() < 2 || neg.size() < 2) {
        throw Error(ErrorKind::validation,
                    "stratified split needs >= 2 members per class (positive=" +
                        std::to_string(pos.size()) + ", negative=" + std::to_string(neg.size()) + ")");
    }
    Rng rng(derive_seed(seed, 0x5B117ULL));
    std::vector<bool> to_holdout(data.sheets.size(), false);
    for (auto* cls : {&pos, &neg}) {
        const std::size_t take = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(cls->size())));
        for (auto idx : rng.sample_indices(cls->size(), take)) {
            to_holdout[(*cls)[idx]] = true;
        }
    }
    HoldoutSplit split;
    split.train.instrument = split.holdout.instrument = data.instrument;
    split.train.provenance = data.provenance + "#train";
    split.holdout.provenance = data.provenance + "#holdout";
    for (std::size_t i = 0; i < data.sheets.size(); ++i) {
        (to_holdout[i] ? split.holdout : split.train).sheets.push_back(data.sheets[i]);
    }
    return split;
}

}  // namespace screener
