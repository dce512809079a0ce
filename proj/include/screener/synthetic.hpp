#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "screener/dataset.hpp"
#include "screener/error.hpp"
#include "screener/rng.hpp"

namespace screener {

// Generator config. Informative questions get label-correlated severity
// distributions; when age_signal_shift > 0 a slice of them carries signal
// only below / only at-or-above the 48-month boundary.
struct SyntheticSpec {
    int n_questions = 155;
    int n_informative = 15;
    int n_samples = 1000;
    double positive_fraction = 0.5;
    double age_signal_shift = 0.0;  // fraction of informative questions made age-specific
    double noise_rate = 0.0;        // probability an informative answer reverts to baseline
    std::uint64_t seed = 1;
    Instrument instrument = Instrument::adir_like;

    void validate() const {
        if (n_questions < 1) throw Error(ErrorKind::parameter, "n_questions must be >= 1");
        if (n_informative < 0 || n_informative > n_questions) {
            throw Error(ErrorKind::parameter, "n_informative must be in [0, n_questions]");
        }
        if (n_samples < 1) throw Error(ErrorKind::parameter, "n_samples must be >= 1");
        if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
            throw Error(ErrorKind::parameter, "positive_fraction must be in (0,1)");
        }
        if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
            throw Error(ErrorKind::parameter, "noise_rate must be in [0,1)");
        }
        if (age_signal_shift < 0.0 || age_signal_shift > 1.0) {
            throw Error(ErrorKind::parameter, "age_signal_shift must be in [0,1]");
        }
    }
};

enum class SignalGroup { all_ages, young_only, old_only };

inline const char* to_string(SignalGroup g) {
    switch (g) {
        case SignalGroup::all_ages: return "all";
        case SignalGroup::young_only: return "young";
        case SignalGroup::old_only: return "old";
    }
    return "?";
}

struct PlantedQuestion {
    int question = 0;
    SignalGroup group = SignalGroup::all_ages;
};

struct GroundTruth {
    std::vector<PlantedQuestion> planted;

    bool is_planted(int question) const {
        for (const auto& p : planted) {
            if (p.question == question) return true;
        }
        return false;
    }
};

struct SyntheticDataset {
    Dataset data;
    GroundTruth truth;
};

namespace detail {

constexpr std::array<int, 7> kSyntheticCodes = {0, 1, 2, 3, 7, 8, 9};

// Answer-code distributions. Active informative questions are nearly
// separable at noise_rate 0 so a single severity stump ranks almost
// perfectly; noise blends both classes back toward the baseline.
constexpr std::array<double, 7> kBaselineProbs = {0.35, 0.25, 0.15, 0.10, 0.05, 0.05, 0.05};
constexpr std::array<double, 7> kPositiveProbs = {0.003, 0.007, 0.27, 0.70, 0.01, 0.005, 0.005};
constexpr std::array<double, 7> kNegativeProbs = {0.63, 0.32, 0.015, 0.005, 0.015, 0.01, 0.005};

inline int draw_code(Rng& rng, const std::array<double, 7>& probs) {
    const double u = rng.uniform_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return kSyntheticCodes[i];
    }
    return kSyntheticCodes.back();
}

inline GroundTruth plant_questions(const SyntheticSpec& spec) {
    Rng rng(derive_seed(spec.seed, 0x91A));
    std::vector<int> questions(static_cast<std::size_t>(spec.n_questions));
    for (int q = 0; q < spec.n_questions; ++q) questions[static_cast<std::size_t>(q)] = q + 1;
    rng.shuffle(questions);
    const int n_age_each = static_cast<int>(spec.age_signal_shift * spec.n_informative / 2.0);
    GroundTruth truth;
    for (int i = 0; i < spec.n_informative; ++i) {
        PlantedQuestion p;
        p.question = questions[static_cast<std::size_t>(i)];
        p.group = i < n_age_each             ? SignalGroup::young_only
                  : i < 2 * n_age_each       ? SignalGroup::old_only
                                             : SignalGroup::all_ages;
        truth.planted.push_back(p);
    }
    return truth;
}

// Fills answers conditioned on each sheet's label and age group.
inline void fill_answers(const SyntheticSpec& spec, const GroundTruth& truth,
                         std::vector<ScoreSheet>& sheets) {
    std::vector<bool> active_young(static_cast<std::size_t>(spec.n_questions) + 1, false);
    std::vector<bool> active_old(static_cast<std::size_t>(spec.n_questions) + 1, false);
    for (const auto& p : truth.planted) {
        const auto q = static_cast<std::size_t>(p.question);
        if (p.group != SignalGroup::old_only) active_young[q] = true;
        if (p.group != SignalGroup::young_only) active_old[q] = true;
    }
    Rng rng(derive_seed(spec.seed, 0xA35));
    for (auto& sheet : sheets) {
        const auto& active =
            sheet.age_months < kSiloBoundaryMonths ? active_young : active_old;
        for (int q = 1; q <= spec.n_questions; ++q) {
            int code;
            if (active[static_cast<std::size_t>(q)] && !rng.bernoulli(spec.noise_rate)) {
                code = draw_code(rng, sheet.label == Label::positive ? kPositiveProbs
                                                                    : kNegativeProbs);
            } else {
                code = draw_code(rng, kBaselineProbs);
            }
            sheet.answers[q] = code;
        }
    }
}

inline std::vector<ScoreSheet> draw_subjects(const SyntheticSpec& spec) {
    // Exact label counts (not Bernoulli draws) keep the generated positive
    // fraction within rounding of the request.
    const int n_pos = static_cast<int>(std::llround(spec.positive_fraction * spec.n_samples));
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(spec.n_samples), 0);
    for (int i = 0; i < n_pos && i < spec.n_samples; ++i) labels[static_cast<std::size_t>(i)] = 1;
    Rng rng(derive_seed(spec.seed, 0xDE30));
    rng.shuffle(labels);

    int id_width = 1;
    for (int n = spec.n_samples; n >= 10; n /= 10) ++id_width;

    std::vector<ScoreSheet> sheets;
    sheets.reserve(static_cast<std::size_t>(spec.n_samples));
    for (int i = 0; i < spec.n_samples; ++i) {
        ScoreSheet sheet;
        std::string num = std::to_string(i + 1);
        sheet.subject_id =
            "s" + std::string(static_cast<std::size_t>(id_width) - num.size(), '0') + num;
        sheet.age_months = rng.uniform_int(kMinAgeMonths, kMaxAgeMonths);
        sheet.gender = rng.bernoulli(0.5) ? Gender::male : Gender::female;
        sheet.label = labels[static_cast<std::size_t>(i)] ? Label::positive : Label::negative;
        sheets.push_back(std::move(sheet));
    }
    return sheets;
}

}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticDataset out;
    out.data.instrument = spec.instrument;
    out.data.provenance = "synthetic(seed=" + std::to_string(spec.seed) + ")";
    out.truth = detail::plant_questions(spec);
    out.data.sheets = detail::draw_subjects(spec);
    detail::fill_answers(spec, out.truth, out.data.sheets);
    return out;
}

// Two instruments over the same subjects: demographics and labels come from
// `first`; the second instrument draws its own planted set and answers
// conditioned on the shared labels. Feeds the questionnaire + video fusion
// experiments.
inline std::pair<SyntheticDataset, SyntheticDataset> generate_synthetic_pair(
    const SyntheticSpec& first, SyntheticSpec second) {
    SyntheticDataset a = generate_synthetic(first);

    second.n_samples = first.n_samples;
    second.positive_fraction = first.positive_fraction;
    second.seed = derive_seed(first.seed, 0xB0D7);
    second.validate();

    SyntheticDataset b;
    b.data.instrument = second.instrument;
    b.data.provenance = "synthetic-paired(seed=" + std::to_string(first.seed) + ")";
    b.truth = detail::plant_questions(second);
    b.data.sheets = a.data.sheets;
    for (auto& sheet : b.data.sheets) sheet.answers.clear();
    detail::fill_answers(second, b.truth, b.data.sheets);
    return {std::move(a), std::move(b)};
}

inline nlohmann::json to_json(const SyntheticSpec& spec) {
    return nlohmann::json{{"n_questions", spec.n_questions},
                          {"n_informative", spec.n_informative},
                          {"n_samples", spec.n_samples},
                          {"positive_fraction", spec.positive_fraction},
                          {"age_signal_shift", spec.age_signal_shift},
                          {"noise_rate", spec.noise_rate},
                          {"seed", spec.seed},
                          {"instrument", to_string(spec.instrument)}};
}

inline nlohmann::json ground_truth_to_json(const GroundTruth& truth, const SyntheticSpec& spec) {
    nlohmann::json planted = nlohmann::json::array();
    for (const auto& p : truth.planted) {
        planted.push_back({{"question", p.question}, {"group", to_string(p.group)}});
    }
    return nlohmann::json{{"planted", planted}, {"generator", to_json(spec)}};
}

inline void save_ground_truth(const GroundTruth& truth, const SyntheticSpec& spec,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write ground truth: " + path);
    out << ground_truth_to_json(truth, spec).dump(2) << '\n';
}

inline GroundTruth load_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open ground truth: " + path);
    nlohmann::json j;
    in >> j;
    GroundTruth truth;
    for (const auto& p : j.at("planted")) {
        PlantedQuestion q;
        q.question = p.at("question").get<int>();
        const std::string g = p.at("group").get<std::string>();
        q.group = g == "young" ? SignalGroup::young_only
                : g == "old"   ? SignalGroup::old_only
                               : SignalGroup::all_ages;
        truth.planted.push_back(q);
    }
    return truth;
}

}  // namespace screener
