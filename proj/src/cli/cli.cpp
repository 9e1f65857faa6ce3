#include "percep_tl/cli/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "percep_tl/data/annotations.hpp"
#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/data/dataset.hpp"
#include "percep_tl/data/psi.hpp"
#include "percep_tl/data/synthetic.hpp"
#include "percep_tl/data/trials.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/metrics/metrics.hpp"
#include "percep_tl/models/model.hpp"
#include "percep_tl/pipeline/experiment.hpp"
#include "percep_tl/pipeline/train.hpp"

namespace percep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A domain failure that carries the individual problems for --errors-json.
struct ValidationFailure : Error {
    std::vector<json> problems;
    ValidationFailure(const std::string& what, std::vector<json> p) : Error(what), problems(std::move(p)) {}
};

struct Options {
    bool errors_json = false;
    bool no_timestamps = false;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::size_t jobs = 1;
    std::string config;
    std::string out;

    // gen-data
    std::string kind;
    std::string name;
    std::size_t classes = 0;
    std::size_t samples_per_class = 0;
    std::size_t feature_dim = 0;
    std::size_t image_size = 0;
    std::size_t frames = 0;
    double separation = -1.0;
    double hard_fraction = -1.0;

    // shared inputs
    std::string dataset;
    std::string annotations;
    std::string trials;
    std::string checkpoint;
    std::string psi;
    std::string in;

    // simulate-annotator
    double rt_min = 400.0;
    double rt_max = 2000.0;
    double noise_sd = 100.0;
    double error_slope = 0.3;
    std::size_t annotators = 1;
    std::string trial_kind = "match6";

    // gen-trials
    std::size_t count = 0;

    // import-annotations
    bool include_incorrect = false;
    std::string aggregation = "mean";
    std::string ceiling = "global_max";
    double fixed_ceiling = 0.0;
};

fs::path output_root(const Options& o, const std::string& fallback) {
    if (!o.out.empty()) return o.out;
    if (const char* env = std::getenv("PERCEP_TL_OUT"); env && *env) return env;
    return fallback;
}

data::TrialKind trial_kind(const std::string& text) {
    const auto k = data::parse_trial_kind(text);
    if (!k) throw ConfigError("unknown trial kind '" + text + "'");
    return *k;
}

int gen_data(const Options& o, std::ostream& out) {
    json source = json::object();
    if (!o.config.empty()) source = data::read_json_file(o.config);
    if (!o.kind.empty()) {
        if (o.kind == "sequences") {
            source["generator"] = "sequences";
        } else {
            source["generator"] = "synthetic";
            source["spec"]["kind"] = o.kind;
        }
    }
    json& spec = source["spec"];
    if (spec.is_null()) spec = json::object();
    const bool sequences = source.value("generator", std::string("synthetic")) == "sequences";
    if (!o.name.empty()) spec["name"] = o.name;
    if (sequences) {
        if (o.samples_per_class) spec["samples_per_motion"] = o.samples_per_class;
        if (o.image_size) spec["image_size"] = o.image_size;
        if (o.frames) spec["frames"] = o.frames;
    } else {
        if (o.classes) spec["class_count"] = o.classes;
        if (o.samples_per_class) spec["samples_per_class"] = o.samples_per_class;
        if (o.feature_dim) spec["feature_dim"] = o.feature_dim;
        if (o.image_size) spec["image_size"] = o.image_size;
        if (o.separation >= 0.0) spec["class_separation"] = o.separation;
        if (o.hard_fraction >= 0.0) spec["hard_fraction"] = o.hard_fraction;
    }
    data::Dataset ds;
    if (sequences) {
        ds = data::gen_synthetic_sequences(data::sequence_spec_from_json(spec), o.seed);
    } else {
        ds = data::gen_synthetic_dataset(data::synthetic_spec_from_json(spec), o.seed);
    }
    const fs::path dir = output_root(o, ds.manifest.name);
    data::save_dataset(dir, ds);
    out << "wrote dataset '" << ds.manifest.name << "' (" << ds.size() << " samples) to " << dir.string() << "\n";
    return kExitOk;
}

int simulate(const Options& o, std::ostream& out) {
    if (o.dataset.empty()) throw ConfigError("simulate-annotator needs --dataset");
    const auto ds = data::load_dataset(o.dataset);
    data::AnnotatorParams p;
    p.rt_min_ms = o.rt_min;
    p.rt_max_ms = o.rt_max;
    p.noise_sd_ms = o.noise_sd;
    p.error_slope = o.error_slope;
    p.annotators = o.annotators;
    p.trial_kind = trial_kind(o.trial_kind);
    const auto difficulty = ds.difficulty();
    const auto records = data::simulate_annotator(ds.manifest, difficulty, p, o.seed);
    const fs::path path = output_root(o, "annotations.jsonl");
    data::write_annotations(path, records);
    out << "wrote " << records.size() << " annotation records to " << path.string() << "\n";
    return kExitOk;
}

int gen_trials(const Options& o, std::ostream& out) {
    if (o.dataset.empty()) throw ConfigError("gen-trials needs --dataset");
    if (o.count == 0) throw ConfigError("gen-trials needs --count > 0");
    const auto manifest = data::manifest_from_json(data::read_json_file(fs::path(o.dataset) / "manifest.json"));
    const auto trials = data::generate_trials(manifest, trial_kind(o.kind.empty() ? "match6" : o.kind), o.count, o.seed);
    const fs::path path = output_root(o, "trials.json");
    data::save_trial_manifest(path, trials);
    out << "wrote " << trials.trials.size() << " trials to " << path.string() << "\n";
    return kExitOk;
}

int import_annotations(const Options& o, std::ostream& out) {
    if (o.annotations.empty()) throw ConfigError("import-annotations needs --annotations");
    const auto records = data::load_annotations(o.annotations);
    data::PsiPolicy policy;
    if (!o.config.empty()) {
        policy = data::psi_policy_from_json(data::read_json_file(o.config));
    } else {
        policy.correct_only = !o.include_incorrect;
        policy.fixed_ceiling_ms = o.fixed_ceiling;
        json doc = {{"correct_only", policy.correct_only},
                    {"aggregation", o.aggregation},
                    {"ceiling", o.ceiling},
                    {"fixed_ceiling_ms", o.fixed_ceiling}};
        policy = data::psi_policy_from_json(doc);
    }
    if (!o.dataset.empty()) {
        const auto manifest = data::manifest_from_json(data::read_json_file(fs::path(o.dataset) / "manifest.json"));
        std::map<std::string, std::size_t> labels;
        for (const auto& s : manifest.samples) labels[s.sample_id] = s.class_label;
        for (std::size_t i = 0; i < records.size(); ++i) {
            auto it = labels.find(records[i].sample_id);
            if (it == labels.end()) {
                throw FormatError("record " + std::to_string(i + 1) + ": sample '" + records[i].sample_id +
                                  "' is not in dataset '" + manifest.name + "'");
            }
        }
    }
    const auto table = data::compute_psi(records, policy);
    const fs::path path = output_root(o, "psi.json");
    data::save_psi_table(path, table);
    out << "wrote ψ for " << table.psi.size() << " samples to " << path.string() << "\n";
    return kExitOk;
}

int train(const Options& o, std::ostream& out) {
    if (o.config.empty() || o.dataset.empty()) throw ConfigError("train needs --config and --dataset");
    const json doc = data::read_json_file(o.config);
    const auto ds = data::load_dataset(o.dataset);
    auto stage = pipeline::stage_config_from_json(doc.value("stage", json::object()));
    stage.seed = o.seed;
    models::ModelCheckpoint model;
    if (!o.checkpoint.empty()) {
        model = models::load_checkpoint(o.checkpoint);
        if (model.spec.class_count != ds.manifest.class_count) {
            model = models::replace_head(model, ds.manifest.class_count, o.seed);
        }
    } else {
        auto spec = models::model_spec_from_json(doc.at("model"));
        if (spec.input_shape.empty()) spec.input_shape = ds.manifest.sample_shape;
        if (!doc.at("model").contains("class_count")) spec.class_count = ds.manifest.class_count;
        model = models::build_model(spec, o.seed);
    }
    std::optional<data::PsiTable> psi;
    if (!o.psi.empty()) psi = data::load_psi_table(o.psi);
    auto result = pipeline::train_stage(model, stage, ds, psi ? &*psi : nullptr);
    if (doc.contains("stage_tag")) models::advance_stage(result.model.meta, models::parse_stage(doc["stage_tag"].get<std::string>()));
    const fs::path path = output_root(o, "checkpoint.json");
    models::save_checkpoint(path, result.model);
    std::string curves = "epoch,split,loss,accuracy\n";
    for (const auto& p : result.curves) {
        std::ostringstream line;
        line.precision(17);
        line << p.epoch << "," << p.split << "," << p.loss << "," << p.accuracy << "\n";
        curves += line.str();
    }
    data::write_text_file(fs::path(path).replace_extension(".curves.csv"), curves);
    const auto test = pipeline::evaluate(result.model, ds, data::Split::test, stage.objective, &stage);
    out << "wrote checkpoint to " << path.string() << "; test top1 " << test.top1 << "\n";
    return kExitOk;
}

int run(const Options& o, std::ostream& out) {
    if (o.config.empty()) throw ConfigError("run needs --config");
    auto cfg = pipeline::load_experiment_config(o.config);
    if (o.seed_set) cfg.seeds = {o.seed};
    cfg.out_dir = output_root(o, cfg.out_dir.empty() ? std::string("runs") : cfg.out_dir.string());
    pipeline::RunOptions opts;
    opts.jobs = o.jobs;
    opts.timestamps = !o.no_timestamps;
    opts.base_dir = fs::path(o.config).parent_path();
    const auto report = pipeline::run_percep_tl(cfg, opts);
    out << "wrote report to " << (cfg.out_dir / cfg.experiment).string() << "\n";
    out << metrics::render_diff_table(report.transfer_diff);
    for (const auto& f : report.failures) out << "seed " << f.seed << " failed: " << f.reason << "\n";
    return report.partial() ? kExitFailure : kExitOk;
}

int report(const Options& o, std::ostream& out) {
    if (o.in.empty()) throw ConfigError("report needs --in (an experiment output directory)");
    const auto r = metrics::load_report(o.in);
    out << "experiment " << r.experiment << " (" << r.seeds.size() << " seeds"
        << (r.partial() ? ", partial" : "") << ")\n";
    for (const auto& s : r.summary) {
        char line[256];
        std::snprintf(line, sizeof line, "%-20s %-14s mean %.4f  se %s  n %zu\n", s.arm.c_str(),
                      s.result.name.c_str(), s.result.mean,
                      s.result.standard_error ? std::to_string(*s.result.standard_error).c_str() : "-",
                      s.result.n_seeds);
        out << line;
    }
    out << metrics::render_diff_table(r.transfer_diff);
    if (!o.out.empty()) metrics::emit_report(r, o.out);
    return kExitOk;
}

std::vector<json> annotation_problems(const fs::path& path, std::size_t& count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open annotation file " + path.string());
    std::vector<json> problems;
    std::string line;
    std::size_t line_no = 0;
    count = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            data::parse_annotation(line, line_no);
            ++count;
        } catch (const FormatError& e) {
            problems.push_back({{"line", line_no}, {"message", e.what()}});
        }
    }
    return problems;
}

int validate(const Options& o, std::ostream& out) {
    const int given = !o.config.empty() + !o.annotations.empty() + !o.trials.empty() + !o.dataset.empty();
    if (given != 1) {
        throw ConfigError("validate needs exactly one of --config, --annotations, --trials, --dataset");
    }
    std::string summary;
    if (!o.annotations.empty()) {
        std::size_t count = 0;
        auto problems = annotation_problems(o.annotations, count);
        if (!problems.empty()) {
            const std::string what = o.annotations + ": " + std::to_string(problems.size()) + " invalid record(s)";
            throw ValidationFailure(what, std::move(problems));
        }
        summary = o.annotations + ": " + std::to_string(count) + " valid annotation records";
    } else if (!o.trials.empty()) {
        const auto t = data::load_trial_manifest(o.trials);
        summary = o.trials + ": " + std::to_string(t.trials.size()) + " valid trials";
    } else if (!o.dataset.empty()) {
        const auto ds = data::load_dataset(o.dataset);
        summary = o.dataset + ": dataset '" + ds.manifest.name + "' with " + std::to_string(ds.size()) + " samples";
    } else {
        const auto cfg = pipeline::load_experiment_config(o.config);
        summary = o.config + ": experiment '" + cfg.experiment + "' with " + std::to_string(cfg.seeds.size()) +
                  " seeds";
    }
    if (o.errors_json) {
        out << json{{"ok", true}, {"errors", json::array()}}.dump() << "\n";
    } else {
        out << "ok: " << summary << "\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Psychophysically regularized transfer-learning experiments", "percep-tl"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("--errors-json", o.errors_json, "Print failures as a JSON document on stdout");

    auto seed_opt = [&](CLI::App* sc) {
        sc->add_option("--seed", o.seed, "Seed for all randomness")->each([&](const std::string&) { o.seed_set = true; });
    };
    auto out_opt = [&](CLI::App* sc, const std::string& help) { sc->add_option("--out", o.out, help); };

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", o.config, "Dataset source JSON ({generator, spec})");
    gen->add_option("--kind", o.kind, "vector, image or sequences");
    gen->add_option("--name", o.name, "Dataset name");
    gen->add_option("--classes", o.classes, "Number of classes");
    gen->add_option("--samples-per-class", o.samples_per_class, "Samples per class (per motion for sequences)");
    gen->add_option("--feature-dim", o.feature_dim, "Feature dimension (vector)");
    gen->add_option("--image-size", o.image_size, "Image side (image, sequences)");
    gen->add_option("--frames", o.frames, "Frames per sequence");
    gen->add_option("--separation", o.separation, "Class separation");
    gen->add_option("--hard-fraction", o.hard_fraction, "Fraction of hard samples per class");
    seed_opt(gen);
    out_opt(gen, "Output directory");

    auto* sim = app.add_subcommand("simulate-annotator", "Simulate reaction-time annotations for a dataset");
    sim->add_option("--dataset", o.dataset, "Dataset directory")->required();
    sim->add_option("--rt-min", o.rt_min, "Reaction time of the easiest sample (ms)");
    sim->add_option("--rt-max", o.rt_max, "Reaction time of the hardest sample (ms)");
    sim->add_option("--noise-sd", o.noise_sd, "Reaction time noise (ms)");
    sim->add_option("--error-slope", o.error_slope, "Error probability per unit difficulty");
    sim->add_option("--annotators", o.annotators, "Number of simulated annotators");
    sim->add_option("--trial-kind", o.trial_kind, "match6, afc2 or transcription");
    seed_opt(sim);
    out_opt(sim, "Output JSONL file");

    auto* trials = app.add_subcommand("gen-trials", "Export a trial manifest for the annotation app");
    trials->add_option("--dataset", o.dataset, "Dataset directory")->required();
    trials->add_option("--kind", o.kind, "match6, afc2 or transcription");
    trials->add_option("--count", o.count, "Number of trials")->required();
    seed_opt(trials);
    out_opt(trials, "Output JSON file");

    auto* imp = app.add_subcommand("import-annotations", "Compute a ψ table from annotation records");
    imp->add_option("--annotations", o.annotations, "Annotation JSONL file")->required();
    imp->add_option("--dataset", o.dataset, "Dataset directory to check sample ids against");
    imp->add_option("--config", o.config, "ψ policy JSON");
    imp->add_flag("--include-incorrect", o.include_incorrect, "Use reaction times of incorrect responses too");
    imp->add_option("--aggregation", o.aggregation, "mean or median");
    imp->add_option("--ceiling", o.ceiling, "global_max, per_class_max, per_sample_max or fixed");
    imp->add_option("--fixed-ceiling", o.fixed_ceiling, "Ceiling for --ceiling fixed (ms)");
    out_opt(imp, "Output ψ table JSON");

    auto* tr = app.add_subcommand("train", "Train one stage");
    tr->add_option("--config", o.config, "JSON with 'model' (spec) and 'stage' settings")->required();
    tr->add_option("--dataset", o.dataset, "Dataset directory")->required();
    tr->add_option("--checkpoint", o.checkpoint, "Start from this checkpoint instead of a fresh model");
    tr->add_option("--psi", o.psi, "ψ table JSON");
    seed_opt(tr);
    out_opt(tr, "Output checkpoint JSON");

    auto* rn = app.add_subcommand("run", "Run a full experiment config");
    rn->add_option("--config", o.config, "Experiment config JSON")->required();
    rn->add_option("--jobs", o.jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);
    rn->add_flag("--no-timestamps", o.no_timestamps, "Omit the generation time from the report");
    seed_opt(rn);
    out_opt(rn, "Output root (default: $PERCEP_TL_OUT, then the config's out_dir, then ./runs)");

    auto* rep = app.add_subcommand("report", "Summarize an experiment report");
    rep->add_option("--in", o.in, "Experiment output directory holding report.json")->required();
    out_opt(rep, "Re-emit the report and tables into this directory");

    auto* val = app.add_subcommand("validate", "Check a config, annotation, trial or dataset file");
    auto* target = val->add_option_group("target", "File to check (exactly one)");
    target->add_option("--config", o.config, "Experiment config JSON");
    target->add_option("--annotations", o.annotations, "Annotation JSONL file");
    target->add_option("--trials", o.trials, "Trial manifest JSON");
    target->add_option("--dataset", o.dataset, "Dataset directory");
    target->require_option(1);

    for (auto* sc : {gen, sim, trials, imp, tr, rn, rep, val}) sc->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    const std::map<const CLI::App*, std::function<int(const Options&, std::ostream&)>> handlers{
        {gen, gen_data}, {sim, simulate}, {trials, gen_trials}, {imp, import_annotations},
        {tr, train},     {rn, run},       {rep, report},       {val, validate}};
    const CLI::App* chosen = app.get_subcommands().front();
    try {
        return handlers.at(chosen)(o, out);
    } catch (const std::exception& e) {
        std::vector<json> problems;
        if (const auto* v = dynamic_cast<const ValidationFailure*>(&e)) {
            problems = v->problems;
        } else {
            json p = {{"message", e.what()}};
            if (const auto* f = dynamic_cast<const FormatError*>(&e); f && f->line() > 0) p["line"] = f->line();
            problems.push_back(std::move(p));
        }
        if (o.errors_json) {
            out << json{{"ok", false}, {"errors", problems}}.dump() << "\n";
        }
        err << "error: " << e.what() << "\n";
        for (const auto& p : problems) {
            if (p.contains("line")) err << "  " << p["message"].get<std::string>() << "\n";
        }
        return kExitFailure;
    }
}

}  // namespace percep::cli
