#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

namespace screener {

// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
    schema,      // malformed input file structure
    validation,  // data violates declared constraints
    parameter,   // bad configuration value
    contract,    // caller broke an API precondition
    training,    // learner could not be fitted
    evaluation,  // metric computation failed
    selection,   // feature-selection procedure failed
    weighting,   // weight balancing failed
    fold,        // cross-validation fold construction failed
    tuning,      // threshold tuning failed
    io           // filesystem / parse failure
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::schema: return "schema";
        case ErrorKind::validation: return "validation";
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::contract: return "contract";
        case ErrorKind::training: return "training";
        case ErrorKind::evaluation: return "evaluation";
        case ErrorKind::selection: return "selection";
        case ErrorKind::weighting: return "weighting";
        case ErrorKind::fold: return "fold";
        case ErrorKind::tuning: return "tuning";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Error(ErrorKind kind, const std::string& message, nlohmann::json details)
        : std::runtime_error(message), kind_(kind), details_(std::move(details)) {}

    ErrorKind kind() const { return kind_; }
    const nlohmann::json& details() const { return details_; }

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", to_string(kind_)}, {"message", what()}};
        if (!details_.is_null()) j["details"] = details_;
        return j;
    }

private:
    ErrorKind kind_;
    nlohmann::json details_;
};

}  // namespace screener
