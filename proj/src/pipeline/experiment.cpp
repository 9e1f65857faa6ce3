#include "percep_tl/pipeline/experiment.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>

#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/data/annotations.hpp"
#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSourceTop1 = "source_top1";
constexpr const char* kTargetTop1 = "target_top1";

DatasetSource dataset_source_from_json(const json& doc) {
    DatasetSource s;
    if (doc.contains("path")) {
        s.kind = DatasetSource::Kind::path;
        s.path = doc["path"].get<std::string>();
    } else {
        const auto gen = doc.value("generator", std::string("synthetic"));
        const json spec = doc.value("spec", json::object());
        if (gen == "synthetic") {
            s.kind = DatasetSource::Kind::synthetic;
            s.synthetic = data::synthetic_spec_from_json(spec);
        } else if (gen == "sequences") {
            s.kind = DatasetSource::Kind::sequences;
            s.sequences = data::sequence_spec_from_json(spec);
        } else {
            throw ConfigError("dataset: unknown generator '" + gen + "'");
        }
    }
    if (doc.contains("seed")) s.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("view_shape")) s.view_shape = doc["view_shape"].get<ad::Shape>();
    return s;
}

json to_json(const DatasetSource& s) {
    json doc;
    switch (s.kind) {
        case DatasetSource::Kind::path: doc["path"] = s.path.string(); break;
        case DatasetSource::Kind::synthetic:
            doc["generator"] = "synthetic";
            doc["spec"] = data::to_json(s.synthetic);
            break;
        case DatasetSource::Kind::sequences:
            doc["generator"] = "sequences";
            doc["spec"] = data::to_json(s.sequences);
            break;
    }
    if (s.seed) doc["seed"] = *s.seed;
    if (s.view_shape) doc["view_shape"] = *s.view_shape;
    return doc;
}

StageConfig stage_from_json(const json& doc, bool transfer) {
    json d = doc;
    if (transfer && !d.contains("trainable")) d["trainable"] = "head_only";
    return stage_config_from_json(d);
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("experiment '" + experiment + "': seeds list is empty");
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size()) throw ConfigError("experiment '" + experiment + "': duplicate seeds");
    auto need = [&](const std::string& name, const std::string& where) {
        if (!datasets.count(name)) {
            throw ConfigError(where + " refers to unknown dataset '" + name + "'");
        }
    };
    if (plan.pretrain) {
        need(plan.pretrain->dataset, "pretrain stage");
        plan.pretrain->validate();
    }
    need(plan.source.dataset, "source stage");
    plan.source.validate();
    if (plan.psi_finetune) {
        need(plan.psi_finetune->dataset, "psi_finetune stage");
        plan.psi_finetune->validate();
    }
    if (plan.transfer) {
        need(plan.transfer->dataset, "transfer stage");
        plan.transfer->validate();
    }
    if (annotations) need(annotations->dataset, "annotations");
    const StageConfig& arm_stage = plan.psi_finetune ? *plan.psi_finetune : plan.source;
    std::set<std::string> names;
    for (const auto& a : arms) {
        if (a.name.empty()) throw ConfigError("arm with empty name");
        if (a.name == "scratch" || a.name == "negative_transfer") {
            throw ConfigError("arm name '" + a.name + "' is reserved for baselines");
        }
        if (!names.insert(a.name).second) throw ConfigError("duplicate arm '" + a.name + "'");
        StageConfig probe = arm_stage;
        probe.loss = a.loss;
        probe.validate();
    }
    auto uses_psi = [&](const StageConfig& s) { return s.loss.psi_enabled; };
    bool psi_needed = uses_psi(arm_stage) && arms.empty();
    for (const auto& a : arms) psi_needed = psi_needed || a.loss.psi_enabled;
    if (plan.pretrain && uses_psi(*plan.pretrain)) psi_needed = true;
    if (plan.transfer && uses_psi(*plan.transfer)) {
        throw ConfigError("ψ regularization is not available in the transfer stage (no target annotations)");
    }
    if (psi_needed) {
        if (!annotations) throw ConfigError("ψ regularization enabled but no annotations configured");
        if (annotations->dataset != arm_stage.dataset) {
            throw ConfigError("annotations are for dataset '" + annotations->dataset + "' but ψ is applied on '" +
                              arm_stage.dataset + "'");
        }
    }
    if ((scratch_baseline || negative_transfer) && !plan.transfer) {
        throw ConfigError("baselines need a transfer stage");
    }
    if (negative_transfer) need(negative_transfer->dataset, "negative_transfer");
}

ExperimentConfig experiment_config_from_json(const json& doc) {
    data::require_format_version(doc, "experiment config");
    ExperimentConfig c;
    try {
        c.experiment = doc.value("experiment", c.experiment);
        if (doc.contains("seeds")) c.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
        for (const auto& [name, d] : doc.at("datasets").items()) c.datasets[name] = dataset_source_from_json(d);
        if (doc.contains("annotations")) {
            const auto& a = doc["annotations"];
            AnnotationSource src;
            src.dataset = a.at("dataset").get<std::string>();
            if (a.contains("simulate")) src.simulate = data::annotator_params_from_json(a["simulate"]);
            if (a.contains("path")) src.path = a["path"].get<std::string>();
            if (a.contains("seed")) src.seed = a["seed"].get<std::uint64_t>();
            if (!src.simulate && src.path.empty()) throw ConfigError("annotations need 'simulate' or 'path'");
            c.annotations = std::move(src);
        }
        if (doc.contains("psi_policy")) c.psi_policy = data::psi_policy_from_json(doc["psi_policy"]);
        const json& m = doc.at("model");
        c.model = models::model_spec_from_json(m);
        if (!m.contains("class_count")) c.model.class_count = 0;
        const json& plan = doc.at("plan");
        if (plan.contains("pretrain")) c.plan.pretrain = stage_from_json(plan["pretrain"], false);
        c.plan.source = stage_from_json(plan.at("source"), false);
        if (plan.contains("psi_finetune")) c.plan.psi_finetune = stage_from_json(plan["psi_finetune"], false);
        if (plan.contains("transfer")) c.plan.transfer = stage_from_json(plan["transfer"], true);
        for (const auto& a : doc.value("arms", json::array())) {
            c.arms.push_back({a.at("name").get<std::string>(), loss::loss_config_from_json(a.value("loss", json()))});
        }
        c.control_arm = doc.value("control_arm", c.control_arm);
        c.scratch_baseline = doc.value("scratch_baseline", false);
        if (doc.contains("negative_transfer")) {
            const auto& n = doc["negative_transfer"];
            c.negative_transfer = NegativeTransfer{n.at("dataset").get<std::string>(), n.value("label", std::string())};
        }
        c.out_dir = doc.value("out_dir", std::string());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    json datasets = json::object();
    for (const auto& [name, d] : c.datasets) datasets[name] = to_json(d);
    json plan = {{"source", to_json(c.plan.source)}};
    if (c.plan.pretrain) plan["pretrain"] = to_json(*c.plan.pretrain);
    if (c.plan.psi_finetune) plan["psi_finetune"] = to_json(*c.plan.psi_finetune);
    if (c.plan.transfer) plan["transfer"] = to_json(*c.plan.transfer);
    json arms = json::array();
    for (const auto& a : c.arms) arms.push_back({{"name", a.name}, {"loss", loss::to_json(a.loss)}});
    json doc = {{"format_version", 1},
                {"experiment", c.experiment},
                {"seeds", c.seeds},
                {"datasets", std::move(datasets)},
                {"psi_policy", data::to_json(c.psi_policy)},
                {"model", models::to_json(c.model)},
                {"plan", std::move(plan)},
                {"arms", std::move(arms)},
                {"control_arm", c.control_arm},
                {"scratch_baseline", c.scratch_baseline},
                {"out_dir", c.out_dir.string()}};
    if (c.annotations) {
        json a = {{"dataset", c.annotations->dataset}};
        if (c.annotations->simulate) a["simulate"] = data::to_json(*c.annotations->simulate);
        if (!c.annotations->path.empty()) a["path"] = c.annotations->path.string();
        if (c.annotations->seed) a["seed"] = *c.annotations->seed;
        doc["annotations"] = std::move(a);
    }
    if (c.negative_transfer) {
        doc["negative_transfer"] = {{"dataset", c.negative_transfer->dataset}, {"label", c.negative_transfer->label}};
    }
    return doc;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    return experiment_config_from_json(data::read_json_file(path));
}

data::Dataset resolve_dataset(const DatasetSource& source, const std::string& name, std::uint64_t run_seed,
                              const fs::path& base_dir) {
    const std::uint64_t seed = source.seed ? *source.seed : derive_seed(run_seed, name);
    data::Dataset ds;
    switch (source.kind) {
        case DatasetSource::Kind::path: {
            const fs::path p = source.path.is_absolute() || base_dir.empty() ? source.path : base_dir / source.path;
            ds = data::load_dataset(p);
            break;
        }
        case DatasetSource::Kind::synthetic: {
            auto spec = source.synthetic;
            spec.name = name;
            ds = data::gen_synthetic_dataset(spec, seed);
            break;
        }
        case DatasetSource::Kind::sequences: {
            auto spec = source.sequences;
            spec.name = name;
            ds = data::gen_synthetic_sequences(spec, seed);
            break;
        }
    }
    if (source.view_shape) {
        if (ad::numel(*source.view_shape) != ds.sample_numel()) {
            throw ConfigError("dataset '" + name + "': view_shape " + ad::to_string(*source.view_shape) +
                              " does not hold samples of shape " + ad::to_string(ds.manifest.sample_shape));
        }
        ds.manifest.sample_shape = *source.view_shape;
        ds.manifest.sequence_length.reset();
    }
    return ds;
}

namespace {

struct SeedOutcome {
    std::vector<metrics::MetricRow> rows;
    std::vector<metrics::CurveSet> curves;
    std::vector<metrics::FrozenCheck> checks;
};

class SeedRun {
public:
    SeedRun(const ExperimentConfig& cfg, const RunOptions& opts, std::uint64_t seed)
        : cfg_(cfg), opts_(opts), seed_(seed) {
        if (!cfg.out_dir.empty()) dir_ = cfg.out_dir / cfg.experiment / std::to_string(seed);
    }

    SeedOutcome run() {
        const std::string first = cfg_.plan.pretrain ? cfg_.plan.pretrain->dataset : cfg_.plan.source.dataset;
        models::ModelSpec spec = cfg_.model;
        const auto& first_ds = dataset(first);
        if (spec.input_shape.empty()) spec.input_shape = first_ds.manifest.sample_shape;
        if (spec.class_count == 0) spec.class_count = first_ds.manifest.class_count;
        models::ModelCheckpoint model = models::build_model(spec, derive_seed(seed_, "init"));

        if (cfg_.plan.pretrain) {
            model = stage(model, *cfg_.plan.pretrain, models::Stage::pretrained, "shared", "pretrain");
        }
        std::vector<ArmConfig> arms = cfg_.arms;
        const StageConfig& arm_stage = cfg_.plan.psi_finetune ? *cfg_.plan.psi_finetune : cfg_.plan.source;
        if (arms.empty()) arms.push_back({"default", arm_stage.loss});

        std::optional<models::ModelCheckpoint> source_model;
        if (cfg_.plan.psi_finetune) {
            source_model = stage(model, cfg_.plan.source, models::Stage::source_trained, "shared", "source");
        }
        for (const auto& arm : arms) {
            models::ModelCheckpoint m;
            StageConfig arm_cfg = arm_stage;
            arm_cfg.loss = arm.loss;
            if (cfg_.plan.psi_finetune) {
                m = stage(*source_model, arm_cfg, models::Stage::psi_finetuned, arm.name, "psi_finetune");
            } else {
                m = stage(model, arm_cfg, models::Stage::source_trained, arm.name, "source");
            }
            const auto& src = dataset(arm_cfg.dataset);
            add_row(arm.name, kSourceTop1, evaluate(m, src, data::Split::test).top1);
            if (cfg_.plan.transfer) {
                transfer(m, arm.name);
            }
        }
        if (cfg_.scratch_baseline) scratch(spec);
        if (cfg_.negative_transfer) negative(spec);
        return std::move(out_);
    }

private:
    const data::Dataset& dataset(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(name, resolve_dataset(cfg_.datasets.at(name), name, seed_, opts_.base_dir))
            .first->second;
    }

    const data::PsiTable* psi_table() {
        if (!cfg_.annotations) return nullptr;
        if (!psi_) {
            const auto& a = *cfg_.annotations;
            std::vector<data::AnnotationRecord> records;
            if (a.simulate) {
                const auto& ds = dataset(a.dataset);
                const auto difficulty = ds.difficulty();
                records = data::simulate_annotator(ds.manifest, difficulty, *a.simulate,
                                                   a.seed ? *a.seed : derive_seed(seed_, "annotator"));
            } else {
                const fs::path p = a.path.is_absolute() || opts_.base_dir.empty() ? a.path : opts_.base_dir / a.path;
                records = data::load_annotations(p);
            }
            psi_ = data::compute_psi(records, cfg_.psi_policy);
        }
        return &*psi_;
    }

    void add_row(const std::string& arm, const std::string& metric, double value) {
        out_.rows.push_back({seed_, arm, metric, value});
    }

    models::ModelCheckpoint stage(const models::ModelCheckpoint& in, StageConfig sc, models::Stage tag,
                                  const std::string& arm, const std::string& label) {
        const auto& ds = dataset(sc.dataset);
        models::ModelCheckpoint model = in;
        if (model.spec.class_count != ds.manifest.class_count) {
            model = models::replace_head(model, ds.manifest.class_count, derive_seed(derive_seed(seed_, "head"), label));
        }
        sc.seed = derive_seed(derive_seed(seed_, label), arm);
        const data::PsiTable* psi = sc.loss.psi_enabled ? psi_table() : nullptr;
        auto result = train_stage(model, sc, ds, psi);
        models::advance_stage(result.model.meta, tag);
        out_.curves.push_back({seed_, arm, label, std::move(result.curves)});
        if (!dir_.empty()) models::save_checkpoint(dir_ / arm / (label + ".json"), result.model);
        return std::move(result.model);
    }

    static std::vector<std::string> frozen_names(const models::ModelCheckpoint& m) {
        std::vector<std::string> out;
        for (const auto& [name, p] : m.params) {
            if (!p.trainable) out.push_back(name);
        }
        return out;
    }

    void transfer(const models::ModelCheckpoint& from, const std::string& arm) {
        const auto& t = *cfg_.plan.transfer;
        const auto& target = dataset(t.dataset);
        auto m = models::replace_head(from, target.manifest.class_count, derive_seed(seed_, "transfer-head"));
        m = models::set_trainable(m, t.trainable);
        const auto frozen = frozen_names(m);
        const std::uint64_t before = models::checksum(m, frozen);
        m = stage(m, t, models::Stage::transferred, arm, "transfer");
        out_.checks.push_back({seed_, arm, "transfer", before, models::checksum(m, frozen)});
        add_row(arm, kTargetTop1, evaluate(m, target, data::Split::test).top1);
    }

    void scratch(const models::ModelSpec& base) {
        auto t = *cfg_.plan.transfer;
        const auto& target = dataset(t.dataset);
        auto spec = base;
        spec.input_shape = target.manifest.sample_shape;
        spec.class_count = target.manifest.class_count;
        t.trainable = models::TrainablePolicy::all;
        auto m = models::build_model(spec, derive_seed(seed_, "scratch"));
        m = stage(m, t, models::Stage::transferred, "scratch", "transfer");
        add_row("scratch", kTargetTop1, evaluate(m, target, data::Split::test).top1);
    }

    void negative(const models::ModelSpec& base) {
        const auto& nt = *cfg_.negative_transfer;
        const auto& src = dataset(nt.dataset);
        check_compatible(base, src.manifest);
        auto spec = base;
        spec.class_count = src.manifest.class_count;
        auto m = models::build_model(spec, derive_seed(seed_, "negative-init"));
        StageConfig sc = cfg_.plan.source;
        sc.dataset = nt.dataset;
        sc.loss = loss::LossConfig{};
        m = stage(m, sc, models::Stage::source_trained, "negative_transfer", "source");
        transfer(m, "negative_transfer");
    }

    const ExperimentConfig& cfg_;
    const RunOptions& opts_;
    std::uint64_t seed_;
    fs::path dir_;
    std::map<std::string, data::Dataset> cache_;
    std::optional<data::PsiTable> psi_;
    SeedOutcome out_;
};

void add_diff_rows(const ExperimentConfig& cfg, metrics::ExperimentReport& report) {
    const std::string family(models::to_string(cfg.model.family));
    const StageConfig& arm_stage = cfg.plan.psi_finetune ? *cfg.plan.psi_finetune : cfg.plan.source;
    const std::string target = cfg.plan.transfer ? cfg.plan.transfer->dataset : std::string();
    const std::string source_task = arm_stage.dataset;
    const std::string transfer_task = arm_stage.dataset + "→" + target;
    std::vector<metrics::TransferDiffInput> pairs;
    auto push = [&](const std::string& task, const std::string& orig_arm, const std::string& new_arm,
                    const std::string& metric, const std::string& comparison) {
        const auto* a = report.find_summary(orig_arm, metric);
        const auto* b = report.find_summary(new_arm, metric);
        if (a && b && a->mean > 0.0) pairs.push_back({task, family, a->mean, b->mean, comparison});
    };
    const bool has_control = std::any_of(cfg.arms.begin(), cfg.arms.end(),
                                         [&](const ArmConfig& a) { return a.name == cfg.control_arm; });
    if (has_control) {
        for (const auto& arm : cfg.arms) {
            if (arm.name == cfg.control_arm) continue;
            const std::string cmp = arm.name + "_vs_" + cfg.control_arm;
            push(source_task, cfg.control_arm, arm.name, kSourceTop1, cmp);
            if (cfg.plan.transfer) push(transfer_task, cfg.control_arm, arm.name, kTargetTop1, cmp);
        }
    }
    if (cfg.scratch_baseline) {
        const std::string main_arm = has_control ? cfg.control_arm
                                                 : (cfg.arms.empty() ? std::string("default") : cfg.arms.front().name);
        push(transfer_task, "scratch", main_arm, kTargetTop1, "transfer_vs_scratch");
        if (cfg.negative_transfer) {
            const auto& nt = *cfg.negative_transfer;
            const std::string task = nt.label.empty() ? nt.dataset + "→" + target : nt.label;
            push(task, "scratch", "negative_transfer", kTargetTop1, "negative_transfer_vs_scratch");
        }
    }
    report.transfer_diff = metrics::percent_diff_table(pairs);
}

}  // namespace

metrics::ExperimentReport run_percep_tl(const ExperimentConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const std::size_t n = cfg.seeds.size();
    std::vector<std::optional<SeedOutcome>> outcomes(n);
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                outcomes[i] = SeedRun(cfg, opts, cfg.seeds[i]).run();
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, n));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    metrics::ExperimentReport report;
    report.experiment = cfg.experiment;
    report.seeds = cfg.seeds;
    for (std::size_t i = 0; i < n; ++i) {
        if (!outcomes[i]) {
            report.failures.push_back({cfg.seeds[i], errors[i]});
            continue;
        }
        auto& o = *outcomes[i];
        report.rows.insert(report.rows.end(), o.rows.begin(), o.rows.end());
        report.curves.insert(report.curves.end(), o.curves.begin(), o.curves.end());
        report.frozen_checks.insert(report.frozen_checks.end(), o.checks.begin(), o.checks.end());
    }
    metrics::summarize(report);
    add_diff_rows(cfg, report);
    if (opts.timestamps) report.generated_at = timestamp_now();
    if (!cfg.out_dir.empty()) metrics::emit_report(report, cfg.out_dir / cfg.experiment);
    return report;
}

}  // namespace percep::pipeline
