// Command-line surface for the screening toolkit. Every command reads its
// inputs, writes all outputs under a run directory, and finishes with a
// manifest echoing the fully resolved configuration, so a run can be
// reproduced from its artifacts alone.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "screener/dataset.hpp"
#include "screener/encode.hpp"
#include "screener/encoding_spec.hpp"
#include "screener/error.hpp"
#include "screener/evaluation.hpp"
#include "screener/feature_matrix.hpp"
#include "screener/forest.hpp"
#include "screener/parallel.hpp"
#include "screener/pipeline.hpp"
#include "screener/selection.hpp"
#include "screener/synthetic.hpp"

namespace {

using nlohmann::json;
using namespace screener;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::schema: return 10;
        case ErrorKind::validation: return 11;
        case ErrorKind::parameter: return 12;
        case ErrorKind::contract: return 13;
        case ErrorKind::training: return 14;
        case ErrorKind::evaluation: return 15;
        case ErrorKind::selection: return 16;
        case ErrorKind::weighting: return 17;
        case ErrorKind::fold: return 18;
        case ErrorKind::tuning: return 19;
        case ErrorKind::io: return 20;
    }
    return 1;
}

void report_error(const json& err) { std::cerr << json{{"error", err}}.dump() << "\n"; }

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::schema, path + ": " + e.what());
    }
}

// Collects a run's outputs and writes the closing manifest.
class RunDir {
public:
    RunDir(std::string command, std::string dir) : command_(std::move(command)), dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::string path(const std::string& name) const { return dir_ + "/" + name; }

    void emit(const std::string& name, const json& j) {
        std::ofstream out(path(name));
        if (!out) throw Error(ErrorKind::io, "cannot write " + path(name));
        out << j.dump(2) << "\n";
        outputs_.push_back(name);
    }

    void note(const std::string& name) { outputs_.push_back(name); }

    void finish(const json& config, const json& inputs) {
        json manifest{{"format_version", 1},
                      {"command", command_},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", outputs_}};
        std::ofstream out(path("manifest.json"));
        if (!out) throw Error(ErrorKind::io, "cannot write manifest");
        out << manifest.dump(2) << "\n";
    }

private:
    std::string command_;
    std::string dir_;
    std::vector<std::string> outputs_;
};

// Config-file values become option defaults; explicit flags still win.
class Defaults {
public:
    explicit Defaults(json values) : values_(std::move(values)) {}

    template <typename T>
    T get(const std::string& key, T fallback) const {
        if (!values_.contains(key)) return fallback;
        try {
            return values_.at(key).get<T>();
        } catch (const json::exception&) {
            throw Error(ErrorKind::schema, "config value '" + key + "' has the wrong type");
        }
    }

private:
    json values_;
};

Defaults load_defaults(int argc, char** argv) {
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            config_path = argv[i + 1];
        } else if (arg.rfind("--config=", 0) == 0) {
            config_path = arg.substr(9);
        }
    }
    if (config_path.empty()) return Defaults(json::object());
    const json j = read_json_file(config_path);
    if (!j.is_object()) throw Error(ErrorKind::schema, config_path + ": config must be an object");
    return Defaults(j);
}

EncodingSpec builtin_spec(Instrument instrument, int n_questions) {
    return instrument == Instrument::adir_like ? adir_like_spec(n_questions)
                                               : ados_like_spec(n_questions);
}

std::vector<int> parse_boundaries(const std::string& csv) {
    std::vector<int> out;
    if (csv.empty() || csv == "none") return out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error(ErrorKind::parameter, "bad weight boundary '" + item + "'");
        }
    }
    return out;
}

std::map<int, int> parse_responses(const json& j, const std::string& section) {
    if (!j.is_object()) {
        throw Error(ErrorKind::schema, section + ": expected an object of question -> code");
    }
    std::map<int, int> out;
    for (const auto& [key, value] : j.items()) {
        int qid = 0;
        try {
            qid = std::stoi(key);
        } catch (const std::exception&) {
            throw Error(ErrorKind::schema, section + ": non-numeric question id '" + key + "'");
        }
        if (!value.is_number_integer()) {
            throw Error(ErrorKind::schema,
                        section + ": question " + key + " needs an integer code");
        }
        out[qid] = value.get<int>();
    }
    return out;
}

struct ScoreRows {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<double> weights;
};

// CSV with columns score,label[,weight]; labels as positive/negative or 1/0.
ScoreRows load_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open scores: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::schema, path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::map<std::string, std::size_t> col;
    {
        std::stringstream ss(line);
        std::string name;
        std::size_t i = 0;
        while (std::getline(ss, name, ',')) col[name] = i++;
    }
    for (const auto& required : {"score", "label"}) {
        if (!col.count(required)) {
            throw Error(ErrorKind::schema, path + ": missing column '" + std::string(required) + "'");
        }
    }
    ScoreRows rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < col.size()) fields.emplace_back();
        try {
            rows.scores.push_back(std::stod(fields.at(col["score"])));
            const std::string& label = fields.at(col["label"]);
            if (label == "positive" || label == "1") {
                rows.labels.push_back(1);
            } else if (label == "negative" || label == "0") {
                rows.labels.push_back(0);
            } else {
                throw Error(ErrorKind::validation,
                            path + " line " + std::to_string(line_no) + ": bad label '" + label + "'");
            }
            rows.weights.push_back(col.count("weight") ? std::stod(fields.at(col["weight"])) : 1.0);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw Error(ErrorKind::validation,
                        path + " line " + std::to_string(line_no) + ": malformed row");
        }
    }
    if (rows.scores.empty()) throw Error(ErrorKind::validation, path + ": no score rows");
    return rows;
}

// Shared option bundles, with config-file values as defaults.

struct ForestOpts {
    ForestParams params;
    std::string rule = "sqrt";

    void attach(CLI::App* cmd, const Defaults& cfg) {
        params.n_trees = cfg.get("n_trees", params.n_trees);
        params.max_depth = cfg.get("max_depth", params.max_depth);
        params.min_leaf_frac = cfg.get("min_leaf_frac", params.min_leaf_frac);
        params.feature_fraction = cfg.get("feature_fraction", params.feature_fraction);
        params.bootstrap = cfg.get("bootstrap", params.bootstrap);
        rule = cfg.get<std::string>("feature_rule", rule);
        cmd->add_option("--n-trees", params.n_trees, "trees per forest")
            ->capture_default_str();
        cmd->add_option("--max-depth", params.max_depth, "tree depth cap, 0 = unlimited")
            ->capture_default_str();
        cmd->add_option("--min-leaf-frac", params.min_leaf_frac,
                        "minimum weighted leaf size as a fraction of the root")
            ->capture_default_str();
        cmd->add_option("--feature-rule", rule, "features per split: sqrt or fraction")
            ->check(CLI::IsMember({"sqrt", "fraction"}))
            ->capture_default_str();
        cmd->add_option("--feature-fraction", params.feature_fraction,
                        "fraction of features per split when --feature-rule=fraction")
            ->capture_default_str();
        cmd->add_flag("--no-bootstrap{false}", params.bootstrap,
                      "train each tree on the full weighted sample");
    }

    ForestParams resolve() const {
        ForestParams p = params;
        p.feature_rule = rule == "sqrt" ? SplitFeatureRule::sqrt_rule : SplitFeatureRule::fraction;
        p.validate();
        return p;
    }

    json resolved_json() const { return to_json(resolve()); }
};

struct CvOpts {
    CVConfig cv;

    void attach(CLI::App* cmd, const Defaults& cfg) {
        cv.n_folds = cfg.get("folds", cv.n_folds);
        cv.n_bootstrap_rounds = cfg.get("rounds", cv.n_bootstrap_rounds);
        cv.target_sensitivity = cfg.get("target_sensitivity", cv.target_sensitivity);
        cmd->add_option("--folds", cv.n_folds, "cross-validation folds")->capture_default_str();
        cmd->add_option("--rounds", cv.n_bootstrap_rounds, "bootstrapped CV repetitions")
            ->capture_default_str();
        cmd->add_option("--target-sensitivity", cv.target_sensitivity,
                        "sensitivity anchor for threshold tuning")
            ->capture_default_str();
    }

    CVConfig resolve() const {
        CVConfig c = cv;
        c.validate();
        return c;
    }

    json resolved_json() const {
        const CVConfig c = resolve();
        return json{{"folds", c.n_folds},
                    {"rounds", c.n_bootstrap_rounds},
                    {"target_sensitivity", c.target_sensitivity}};
    }
};

struct SelectionOpts {
    SelectionConfig sel;

    void attach(CLI::App* cmd, const Defaults& cfg) {
        sel.n_bootstrap = cfg.get("selection_bootstraps", sel.n_bootstrap);
        sel.sample_fraction = cfg.get("selection_sample_fraction", sel.sample_fraction);
        sel.per_iteration_top_k = cfg.get("selection_top_k", sel.per_iteration_top_k);
        sel.candidate_pool = cfg.get("selection_candidate_pool", sel.candidate_pool);
        sel.final_k = cfg.get("selection_final_k", sel.final_k);
        cmd->add_option("--selection-bootstraps", sel.n_bootstrap,
                        "bootstrap iterations for robust selection")
            ->capture_default_str();
        cmd->add_option("--selection-sample-fraction", sel.sample_fraction,
                        "per-iteration stratified sample fraction")
            ->capture_default_str();
        cmd->add_option("--selection-top-k", sel.per_iteration_top_k,
                        "features tallied per iteration")
            ->capture_default_str();
        cmd->add_option("--selection-candidate-pool", sel.candidate_pool,
                        "candidates kept for the final pass")
            ->capture_default_str();
        cmd->add_option("--final-k", sel.final_k, "features in the final model")
            ->capture_default_str();
    }

    SelectionConfig resolve() const {
        SelectionConfig c = sel;
        c.validate();
        return c;
    }

    json resolved_json() const { return to_json(resolve()); }
};

json dataset_input(const Dataset& data, const std::string& path) {
    return json{{"path", path},
                {"instrument", to_string(data.instrument)},
                {"rows", data.sheets.size()}};
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const Defaults cfg = load_defaults(argc, argv);

        CLI::App app{"clinical screening pipeline toolkit"};
        app.require_subcommand(1);
        std::string config_path;
        app.add_option("--config", config_path, "JSON file with option defaults");
        int threads = cfg.get("threads", 1);
        app.add_option("--threads", threads, "worker threads (0 = all cores)")
            ->capture_default_str();

        // generate
        auto* generate = app.add_subcommand("generate", "synthesize a planted-signal dataset");
        std::string gen_out;
        generate->add_option("--out", gen_out, "run directory")->required();
        SyntheticSpec gen_spec;
        gen_spec.n_questions = cfg.get("n_questions", gen_spec.n_questions);
        gen_spec.n_informative = cfg.get("n_informative", gen_spec.n_informative);
        gen_spec.n_samples = cfg.get("n_samples", gen_spec.n_samples);
        gen_spec.positive_fraction = cfg.get("positive_fraction", gen_spec.positive_fraction);
        gen_spec.age_signal_shift = cfg.get("age_shift", gen_spec.age_signal_shift);
        gen_spec.noise_rate = cfg.get("noise", gen_spec.noise_rate);
        gen_spec.seed = cfg.get("seed", gen_spec.seed);
        std::string gen_instrument = cfg.get<std::string>("instrument", "adir_like");
        generate->add_option("--n-questions", gen_spec.n_questions)->capture_default_str();
        generate->add_option("--n-informative", gen_spec.n_informative)->capture_default_str();
        generate->add_option("--n-samples", gen_spec.n_samples)->capture_default_str();
        generate->add_option("--positive-fraction", gen_spec.positive_fraction)
            ->capture_default_str();
        generate->add_option("--age-shift", gen_spec.age_signal_shift,
                             "fraction of informative questions active in one silo only")
            ->capture_default_str();
        generate->add_option("--noise", gen_spec.noise_rate, "informative-answer noise rate")
            ->capture_default_str();
        generate->add_option("--seed", gen_spec.seed)->capture_default_str();
        generate->add_option("--instrument", gen_instrument)
            ->check(CLI::IsMember({"adir_like", "ados_module1_like", "ados_module2_like"}))
            ->capture_default_str();
        int gen_video_questions = cfg.get("video_questions", 0);
        int gen_video_informative = cfg.get("video_informative", 8);
        double gen_video_noise = cfg.get("video_noise", 0.0);
        generate->add_option("--video-questions", gen_video_questions,
                             "if > 0, also emit a paired presence-mode video dataset")
            ->capture_default_str();
        generate->add_option("--video-informative", gen_video_informative)->capture_default_str();
        generate->add_option("--video-noise", gen_video_noise)->capture_default_str();

        // validate
        auto* validate = app.add_subcommand("validate", "check a dataset against its encoding");
        std::string val_out, val_data, val_encoding;
        std::string val_instrument = cfg.get<std::string>("instrument", "adir_like");
        validate->add_option("--out", val_out, "run directory")->required();
        validate->add_option("--data", val_data, "dataset CSV")->required();
        validate->add_option("--encoding", val_encoding, "encoding spec JSON")->required();
        validate->add_option("--instrument", val_instrument)->capture_default_str();

        // select
        auto* select = app.add_subcommand("select", "rank and select screening features");
        std::string sel_out, sel_data, sel_encoding;
        std::string sel_method = cfg.get<std::string>("method", "robust");
        std::string sel_boundaries = cfg.get<std::string>("weight_boundaries", "48");
        std::string sel_instrument = cfg.get<std::string>("instrument", "adir_like");
        bool sel_one_hot = cfg.get("one_hot", false);
        std::uint64_t sel_seed = cfg.get<std::uint64_t>("seed", 0);
        select->add_option("--out", sel_out, "run directory")->required();
        select->add_option("--data", sel_data, "dataset CSV")->required();
        select->add_option("--encoding", sel_encoding, "encoding spec JSON")->required();
        select->add_option("--method", sel_method)
            ->check(CLI::IsMember({"robust", "naive"}))
            ->capture_default_str();
        select->add_option("--instrument", sel_instrument)->capture_default_str();
        select->add_option("--weight-boundaries", sel_boundaries,
                           "age cell boundaries in months, comma separated; 'none' for label-only")
            ->capture_default_str();
        select->add_flag("--one-hot", sel_one_hot, "flatten the encoding to one-hot first");
        select->add_option("--seed", sel_seed)->capture_default_str();
        ForestOpts sel_forest;
        sel_forest.attach(select, cfg);
        SelectionOpts sel_selection;
        sel_selection.attach(select, cfg);

        // train
        auto* train = app.add_subcommand("train", "train a screener variant");
        std::string train_out, train_data, train_encoding;
        std::string train_variant_name = cfg.get<std::string>("variant", "aggregate");
        std::string train_instrument = cfg.get<std::string>("instrument", "adir_like");
        double train_band_rate = cfg.get("max_inconclusive_rate", 0.25);
        int train_boundary = cfg.get("boundary_months", kSiloBoundaryMonths);
        std::uint64_t train_seed = cfg.get<std::uint64_t>("seed", 0);
        train->add_option("--out", train_out, "run directory")->required();
        train->add_option("--data", train_data, "dataset CSV")->required();
        train->add_option("--encoding", train_encoding, "encoding spec JSON")->required();
        train->add_option("--variant", train_variant_name)
            ->check(CLI::IsMember({"baseline", "robust", "siloed", "severity", "aggregate",
                                   "inconclusive"}))
            ->capture_default_str();
        train->add_option("--instrument", train_instrument)->capture_default_str();
        train->add_option("--max-inconclusive-rate", train_band_rate,
                          "inconclusive-band cap for the 'inconclusive' variant")
            ->capture_default_str();
        train->add_option("--boundary-months", train_boundary, "age-silo boundary")
            ->capture_default_str();
        train->add_option("--seed", train_seed)->capture_default_str();
        ForestOpts train_forest;
        train_forest.attach(train, cfg);
        CvOpts train_cv;
        train_cv.attach(train, cfg);
        SelectionOpts train_selection;
        train_selection.attach(train, cfg);

        // calibrate
        auto* calibrate = app.add_subcommand("calibrate", "fit an inconclusive band to scores");
        std::string cal_out, cal_scores;
        double cal_rate = cfg.get("max_inconclusive_rate", 0.25);
        calibrate->add_option("--out", cal_out, "run directory")->required();
        calibrate->add_option("--scores", cal_scores, "CSV with score,label[,weight] columns")
            ->required();
        calibrate->add_option("--max-inconclusive-rate", cal_rate)->capture_default_str();

        // evaluate
        auto* evaluate = app.add_subcommand("evaluate", "score a dataset with a trained artifact");
        std::string eval_out, eval_data, eval_artifact;
        std::string eval_boundaries = cfg.get<std::string>("weight_boundaries", "auto");
        double eval_target = cfg.get("target_sensitivity", 0.8);
        evaluate->add_option("--out", eval_out, "run directory")->required();
        evaluate->add_option("--data", eval_data, "dataset CSV")->required();
        evaluate->add_option("--artifact", eval_artifact, "trained screener JSON")->required();
        evaluate->add_option("--target-sensitivity", eval_target)->capture_default_str();
        evaluate->add_option("--weight-boundaries", eval_boundaries,
                             "age cell boundaries; 'auto' follows the artifact's silo")
            ->capture_default_str();

        // progressive
        auto* progressive =
            app.add_subcommand("progressive", "learning curve over training-set fractions");
        std::string prog_out, prog_data, prog_encoding;
        std::string prog_instrument = cfg.get<std::string>("instrument", "adir_like");
        std::string prog_boundaries = cfg.get<std::string>("weight_boundaries", "48");
        std::vector<double> prog_fractions =
            cfg.get("fractions", std::vector<double>{0.1, 0.325, 0.55, 0.775, 1.0});
        bool prog_one_hot = cfg.get("one_hot", false);
        std::uint64_t prog_seed = cfg.get<std::uint64_t>("seed", 0);
        progressive->add_option("--out", prog_out, "run directory")->required();
        progressive->add_option("--data", prog_data, "dataset CSV")->required();
        progressive->add_option("--encoding", prog_encoding, "encoding spec JSON")->required();
        progressive->add_option("--fractions", prog_fractions)
            ->delimiter(',')
            ->capture_default_str();
        progressive->add_option("--instrument", prog_instrument)->capture_default_str();
        progressive->add_option("--weight-boundaries", prog_boundaries)->capture_default_str();
        progressive->add_flag("--one-hot", prog_one_hot,
                              "flatten the encoding to one-hot first");
        progressive->add_option("--seed", prog_seed)->capture_default_str();
        ForestOpts prog_forest;
        prog_forest.attach(progressive, cfg);
        CvOpts prog_cv;
        prog_cv.attach(progressive, cfg);

        // screen
        auto* screen_cmd = app.add_subcommand("screen", "score one subject's responses");
        std::string scr_out, scr_artifact, scr_bundle, scr_responses;
        screen_cmd->add_option("--out", scr_out, "run directory (optional)");
        auto* scr_artifact_opt =
            screen_cmd->add_option("--artifact", scr_artifact, "single screener JSON");
        screen_cmd->add_option("--bundle", scr_bundle, "combined screener JSON")
            ->excludes(scr_artifact_opt);
        screen_cmd->add_option("--responses", scr_responses, "subject responses JSON")->required();

        // combine
        auto* combine_cmd =
            app.add_subcommand("combine", "train the fused questionnaire + video screener");
        std::string comb_out, comb_qdata, comb_vdata, comb_qenc, comb_venc;
        std::string comb_qinstrument = cfg.get<std::string>("instrument", "adir_like");
        std::string comb_vinstrument = cfg.get<std::string>("video_instrument", "ados_module1_like");
        double comb_rate = cfg.get("max_inconclusive_rate", 0.25);
        int comb_boundary = cfg.get("boundary_months", kSiloBoundaryMonths);
        int comb_video_final_k = cfg.get("video_final_k", 10);
        bool comb_no_aggregates = cfg.get("no_aggregates", false);
        bool comb_no_injection = cfg.get("no_injection", false);
        std::uint64_t comb_seed = cfg.get<std::uint64_t>("seed", 0);
        combine_cmd->add_option("--out", comb_out, "run directory")->required();
        combine_cmd->add_option("--questionnaire-data", comb_qdata)->required();
        combine_cmd->add_option("--video-data", comb_vdata)->required();
        combine_cmd->add_option("--questionnaire-encoding", comb_qenc)->required();
        combine_cmd->add_option("--video-encoding", comb_venc)->required();
        combine_cmd->add_option("--instrument", comb_qinstrument)->capture_default_str();
        combine_cmd->add_option("--video-instrument", comb_vinstrument)->capture_default_str();
        combine_cmd->add_option("--max-inconclusive-rate", comb_rate)->capture_default_str();
        combine_cmd->add_option("--boundary-months", comb_boundary)->capture_default_str();
        combine_cmd->add_option("--video-final-k", comb_video_final_k)->capture_default_str();
        combine_cmd->add_flag("--no-aggregates", comb_no_aggregates,
                              "skip aggregate features on the questionnaire side");
        combine_cmd->add_flag("--no-injection", comb_no_injection,
                              "skip missing-value injection on the video side");
        combine_cmd->add_option("--seed", comb_seed)->capture_default_str();
        ForestOpts comb_forest;
        comb_forest.attach(combine_cmd, cfg);
        CvOpts comb_cv;
        comb_cv.attach(combine_cmd, cfg);
        SelectionOpts comb_selection;
        comb_selection.attach(combine_cmd, cfg);

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            report_error({{"kind", "parameter"}, {"message", e.what()}});
            return exit_code_for(ErrorKind::parameter);
        }
        set_thread_count(threads);

        if (*generate) {
            gen_spec.instrument = instrument_from_string(gen_instrument);
            gen_spec.validate();
            RunDir run("generate", gen_out);
            json config = to_json(gen_spec);
            config["threads"] = threads;
            const EncodingSpec spec = builtin_spec(gen_spec.instrument, gen_spec.n_questions);
            if (gen_video_questions > 0) {
                SyntheticSpec video = gen_spec;
                video.n_questions = gen_video_questions;
                video.n_informative = gen_video_informative;
                video.noise_rate = gen_video_noise;
                video.instrument = Instrument::ados_module1_like;
                video.age_signal_shift = 0.0;
                auto [q, v] = generate_synthetic_pair(gen_spec, video);
                write_csv(q.data, spec, run.path("data.csv"));
                run.note("data.csv");
                save_ground_truth(q.truth, gen_spec, run.path("ground_truth.json"));
                run.note("ground_truth.json");
                save_encoding_spec(spec, run.path("encoding.json"));
                run.note("encoding.json");
                const EncodingSpec vspec = ados_like_spec(video.n_questions);
                write_csv(v.data, vspec, run.path("video.csv"));
                run.note("video.csv");
                save_ground_truth(v.truth, video, run.path("video_ground_truth.json"));
                run.note("video_ground_truth.json");
                save_encoding_spec(vspec, run.path("video_encoding.json"));
                run.note("video_encoding.json");
                config["video"] = to_json(video);
            } else {
                auto synth = generate_synthetic(gen_spec);
                write_csv(synth.data, spec, run.path("data.csv"));
                run.note("data.csv");
                save_ground_truth(synth.truth, gen_spec, run.path("ground_truth.json"));
                run.note("ground_truth.json");
                save_encoding_spec(spec, run.path("encoding.json"));
                run.note("encoding.json");
            }
            run.finish(config, json::object());
            return 0;
        }

        if (*validate) {
            RunDir run("validate", val_out);
            const EncodingSpec spec = load_encoding_spec(val_encoding);
            ValidationReport report;
            const Dataset data =
                load_csv(val_data, instrument_from_string(val_instrument), spec, report);
            run.emit("validation.json", report.to_json());
            run.finish(json{{"instrument", val_instrument}, {"threads", threads}},
                       json{{"data", dataset_input(data, val_data)}, {"encoding", val_encoding}});
            if (!report.ok()) {
                report_error({{"kind", "validation"},
                              {"message", std::to_string(report.issues.size()) +
                                              " invalid row value(s)"},
                              {"details", report.to_json()}});
                return exit_code_for(ErrorKind::validation);
            }
            return 0;
        }

        if (*select) {
            RunDir run("select", sel_out);
            EncodingSpec spec = load_encoding_spec(sel_encoding);
            if (sel_one_hot) spec = one_hot_baseline(spec);
            const Dataset data =
                load_csv_strict(sel_data, instrument_from_string(sel_instrument), spec);
            FeatureMatrix m = encode_features(data, spec);
            m.weights = balance_weights(data, parse_boundaries(sel_boundaries)).weights;
            const ForestParams fp = [&] {
                ForestParams p = sel_forest.resolve();
                p.seed = derive_seed(sel_seed, 0x5E1EC7);
                return p;
            }();
            json result;
            if (sel_method == "robust") {
                SelectionConfig sc = sel_selection.resolve();
                sc.seed = derive_seed(sel_seed, 0xB007);
                result = to_json(robust_select(m, sc, fp));
            } else {
                result = json{{"selected", naive_select(m, sel_selection.resolve().final_k, fp)}};
            }
            run.emit("selection.json", result);
            run.finish(json{{"method", sel_method},
                            {"one_hot", sel_one_hot},
                            {"weight_boundaries", sel_boundaries},
                            {"seed", sel_seed},
                            {"forest", sel_forest.resolved_json()},
                            {"selection", sel_selection.resolved_json()},
                            {"threads", threads}},
                       json{{"data", dataset_input(data, sel_data)}, {"encoding", sel_encoding}});
            return 0;
        }

        if (*train) {
            RunDir run("train", train_out);
            const EncodingSpec spec = load_encoding_spec(train_encoding);
            const Dataset data =
                load_csv_strict(train_data, instrument_from_string(train_instrument), spec);
            VariantConfig vc;
            vc.variant = variant_from_string(train_variant_name);
            vc.selection = train_selection.resolve();
            vc.forest = train_forest.resolve();
            vc.cv = train_cv.resolve();
            vc.silo.boundary_months = train_boundary;
            vc.max_inconclusive_rate = train_band_rate;
            vc.seed = train_seed;
            const TrainedVariant trained = train_variant(data, spec, vc);
            json screeners = json::array();
            for (const auto& ts : trained.screeners) {
                const std::string name = "screener_" + ts.artifact.silo + ".json";
                run.emit(name, to_json(ts.artifact));
                screeners.push_back({{"silo", ts.artifact.silo},
                                     {"file", name},
                                     {"cv", to_json(ts.cv)},
                                     {"threshold", ts.artifact.threshold},
                                     {"band", to_json(ts.artifact.band)}});
            }
            run.emit("metrics.json", json{{"variant", to_string(trained.variant)},
                                          {"overall_auc", trained.overall_auc},
                                          {"screeners", screeners}});
            run.finish(json{{"variant", train_variant_name},
                            {"max_inconclusive_rate", train_band_rate},
                            {"boundary_months", train_boundary},
                            {"seed", train_seed},
                            {"forest", train_forest.resolved_json()},
                            {"cv", train_cv.resolved_json()},
                            {"selection", train_selection.resolved_json()},
                            {"threads", threads}},
                       json{{"data", dataset_input(data, train_data)},
                            {"encoding", train_encoding}});
            return 0;
        }

        if (*calibrate) {
            RunDir run("calibrate", cal_out);
            const ScoreRows rows = load_scores_csv(cal_scores);
            const CalibratedBand band =
                calibrate_band(rows.scores, rows.labels, rows.weights, cal_rate);
            json j{{"band", to_json(band.band)},
                   {"metrics",
                    {{"inconclusive_rate", band.metrics.inconclusive_rate},
                     {"conclusive_sensitivity", band.metrics.conclusive_sensitivity},
                     {"conclusive_specificity", band.metrics.conclusive_specificity},
                     {"conclusive_accuracy", band.metrics.conclusive_accuracy},
                     {"conclusive_balanced_accuracy", band.metrics.conclusive_balanced_accuracy}}},
                   {"max_inconclusive_rate", cal_rate}};
            if (!band.warning.empty()) j["warning"] = band.warning;
            run.emit("band.json", j);
            run.finish(json{{"max_inconclusive_rate", cal_rate}, {"threads", threads}},
                       json{{"scores", cal_scores}, {"rows", rows.scores.size()}});
            return 0;
        }

        if (*evaluate) {
            RunDir run("evaluate", eval_out);
            const ScreenerArtifact artifact = artifact_from_json(read_json_file(eval_artifact));
            ValidationReport report;
            const Dataset data =
                load_csv(eval_data, artifact.instrument, artifact.plan.spec, report);
            if (!report.ok()) {
                throw Error(ErrorKind::validation,
                            eval_data + ": " + std::to_string(report.issues.size()) +
                                " invalid row value(s)",
                            report.to_json());
            }
            std::vector<int> boundaries;
            if (eval_boundaries == "auto") {
                if (artifact.silo == "all") boundaries = {kSiloBoundaryMonths};
            } else {
                boundaries = parse_boundaries(eval_boundaries);
            }
            const WeightScheme scheme = balance_weights(data, boundaries);
            std::vector<double> scores(data.sheets.size());
            std::vector<std::uint8_t> labels(data.sheets.size());
            for (std::size_t i = 0; i < data.sheets.size(); ++i) {
                const auto& sheet = data.sheets[i];
                scores[i] =
                    score_subject(artifact, sheet.answers, sheet.age_months, sheet.gender);
                labels[i] = sheet.label == Label::positive ? 1 : 0;
            }
            const RocCurve curve = roc(scores, labels, scheme.weights);
            const TunedThreshold tuned = tune_threshold(curve, eval_target);
            const ThresholdMetrics at_tuned =
                metrics_at_threshold(scores, labels, scheme.weights, tuned.threshold);
            const ThresholdMetrics at_artifact =
                metrics_at_threshold(scores, labels, scheme.weights, artifact.threshold);
            json metrics{{"auc", curve.auc},
                         {"target_sensitivity", eval_target},
                         {"tuned",
                          {{"threshold", tuned.threshold},
                           {"sensitivity", tuned.sensitivity},
                           {"specificity", tuned.specificity},
                           {"metrics", to_json(at_tuned)}}},
                         {"artifact_threshold",
                          {{"threshold", artifact.threshold}, {"metrics", to_json(at_artifact)}}}};
            if (!artifact.band.degenerate()) {
                const BandMetrics bm = band_metrics(scores, labels, scheme.weights, artifact.band);
                metrics["band"] = {
                    {"low", artifact.band.low},
                    {"high", artifact.band.high},
                    {"inconclusive_rate", bm.inconclusive_rate},
                    {"conclusive_sensitivity", bm.conclusive_sensitivity},
                    {"conclusive_specificity", bm.conclusive_specificity},
                    {"conclusive_accuracy", bm.conclusive_accuracy},
                    {"conclusive_balanced_accuracy", bm.conclusive_balanced_accuracy}};
            }
            run.emit("metrics.json", metrics);
            roc_to_csv(curve, run.path("roc.csv"));
            run.note("roc.csv");
            {
                std::ofstream out(run.path("scores.csv"));
                if (!out) throw Error(ErrorKind::io, "cannot write scores.csv");
                out << std::setprecision(17) << "subject_id,label,weight,score\n";
                for (std::size_t i = 0; i < data.sheets.size(); ++i) {
                    out << data.sheets[i].subject_id << ','
                        << (labels[i] ? "positive" : "negative") << ',' << scheme.weights[i]
                        << ',' << scores[i] << '\n';
                }
                run.note("scores.csv");
            }
            run.finish(json{{"target_sensitivity", eval_target},
                            {"weight_boundaries", eval_boundaries},
                            {"threads", threads}},
                       json{{"data", dataset_input(data, eval_data)},
                            {"artifact", eval_artifact}});
            return 0;
        }

        if (*progressive) {
            RunDir run("progressive", prog_out);
            EncodingSpec spec = load_encoding_spec(prog_encoding);
            if (prog_one_hot) spec = one_hot_baseline(spec);
            const Dataset data =
                load_csv_strict(prog_data, instrument_from_string(prog_instrument), spec);
            FeatureMatrix m = encode_features(data, spec);
            m.weights = balance_weights(data, parse_boundaries(prog_boundaries)).weights;
            CVConfig cv = prog_cv.resolve();
            cv.seed = derive_seed(prog_seed, 0xCF01D);
            ForestParams fp = prog_forest.resolve();
            fp.seed = derive_seed(prog_seed, 0xF05237);
            const ProgressiveCurve curve = progressive_sampling(
                m, prog_fractions, cv, forest_cv_trainer(fp), derive_seed(prog_seed, 0x52A17));
            run.emit("progressive.json", to_json(curve));
            progressive_to_csv(curve, run.path("progressive.csv"));
            run.note("progressive.csv");
            run.finish(json{{"fractions", prog_fractions},
                            {"one_hot", prog_one_hot},
                            {"weight_boundaries", prog_boundaries},
                            {"seed", prog_seed},
                            {"forest", prog_forest.resolved_json()},
                            {"cv", prog_cv.resolved_json()},
                            {"threads", threads}},
                       json{{"data", dataset_input(data, prog_data)},
                            {"encoding", prog_encoding}});
            return 0;
        }

        if (*screen_cmd) {
            if (scr_bundle.empty() && scr_artifact.empty()) {
                throw Error(ErrorKind::parameter, "screen needs --artifact or --bundle");
            }
            const json request = read_json_file(scr_responses);
            if (!request.contains("age_months") || !request.at("age_months").is_number_integer()) {
                throw Error(ErrorKind::schema, scr_responses + ": integer age_months required");
            }
            const int age = request.at("age_months").get<int>();
            Gender gender = Gender::unknown;
            if (request.contains("gender")) {
                const std::string g = request.at("gender").get<std::string>();
                if (g == "male") {
                    gender = Gender::male;
                } else if (g == "female") {
                    gender = Gender::female;
                } else if (g != "unknown") {
                    throw Error(ErrorKind::schema, "unknown gender '" + g + "'");
                }
            }
            if (!request.contains("questionnaire")) {
                throw Error(ErrorKind::schema, scr_responses + ": 'questionnaire' section required");
            }
            const auto questionnaire =
                parse_responses(request.at("questionnaire"), "questionnaire");

            DecisionRecord record;
            if (!scr_bundle.empty()) {
                const CombinedScreener combined =
                    combined_from_json(read_json_file(scr_bundle));
                ScreenRequest req;
                req.questionnaire = questionnaire;
                req.age_months = age;
                req.gender = gender;
                if (request.contains("video") && !request.at("video").is_null()) {
                    req.video = parse_responses(request.at("video"), "video");
                }
                record = screen(combined, req);
            } else {
                const ScreenerArtifact artifact =
                    artifact_from_json(read_json_file(scr_artifact));
                record = screen_single(artifact, questionnaire, age, gender);
            }
            const json decision = to_json(record);
            std::cout << decision.dump(2) << "\n";
            if (!scr_out.empty()) {
                RunDir run("screen", scr_out);
                run.emit("decision.json", decision);
                run.finish(json::object(),
                           json{{"responses", scr_responses},
                                {"artifact", scr_artifact.empty() ? scr_bundle : scr_artifact}});
            }
            return 0;
        }

        if (*combine_cmd) {
            RunDir run("combine", comb_out);
            CombinedConfig cc;
            cc.questionnaire_spec = load_encoding_spec(comb_qenc);
            cc.video_spec = load_encoding_spec(comb_venc);
            cc.questionnaire_selection = comb_selection.resolve();
            cc.video_selection = comb_selection.resolve();
            cc.video_selection.final_k = comb_video_final_k;
            cc.forest = comb_forest.resolve();
            cc.cv = comb_cv.resolve();
            cc.silo.boundary_months = comb_boundary;
            cc.max_inconclusive_rate = comb_rate;
            cc.questionnaire_aggregates = !comb_no_aggregates;
            cc.video_injection = !comb_no_injection;
            cc.seed = comb_seed;
            const Dataset qdata = load_csv_strict(
                comb_qdata, instrument_from_string(comb_qinstrument), cc.questionnaire_spec);
            const Dataset vdata = load_csv_strict(
                comb_vdata, instrument_from_string(comb_vinstrument), cc.video_spec);
            const CombinedScreener combined = train_combined(qdata, vdata, cc);
            run.emit("combined.json", to_json(combined));
            json metrics;
            for (const auto& [name, cs] : combined.silos) metrics[name] = cs.metadata;
            run.emit("metrics.json", metrics);
            run.finish(json{{"max_inconclusive_rate", comb_rate},
                            {"boundary_months", comb_boundary},
                            {"video_final_k", comb_video_final_k},
                            {"questionnaire_aggregates", cc.questionnaire_aggregates},
                            {"video_injection", cc.video_injection},
                            {"seed", comb_seed},
                            {"forest", comb_forest.resolved_json()},
                            {"cv", comb_cv.resolved_json()},
                            {"selection", comb_selection.resolved_json()},
                            {"threads", threads}},
                       json{{"questionnaire_data", dataset_input(qdata, comb_qdata)},
                            {"video_data", dataset_input(vdata, comb_vdata)},
                            {"questionnaire_encoding", comb_qenc},
                            {"video_encoding", comb_venc}});
            return 0;
        }

        return 0;
    } catch (const Error& e) {
        report_error(e.to_json());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        report_error({{"kind", "internal"}, {"message", e.what()}});
        return 1;
    }
}
