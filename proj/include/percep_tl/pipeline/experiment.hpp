#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "percep_tl/data/dataset.hpp"
#include "percep_tl/data/psi.hpp"
#include "percep_tl/data/synthetic.hpp"
#include "percep_tl/metrics/metrics.hpp"
#include "percep_tl/models/model.hpp"
#include "percep_tl/pipeline/train.hpp"

namespace percep::pipeline {

// Where a named dataset comes from. Generated datasets use `seed` when set and
// the run seed otherwise, so each seed of an experiment may see its own draw.
struct DatasetSource {
    enum class Kind { synthetic, sequences, path };

    Kind kind = Kind::synthetic;
    data::SyntheticSpec synthetic;
    data::SequenceSpec sequences;
    std::filesystem::path path;
    std::optional<std::uint64_t> seed;
    // Reinterprets every sample with this shape (same element count).
    std::optional<ad::Shape> view_shape;
};

// Annotations for the ψ table: a JSONL file, or the simulated annotator run
// over a dataset's planted difficulty.
struct AnnotationSource {
    std::string dataset;
    std::optional<data::AnnotatorParams> simulate;
    std::filesystem::path path;
    std::optional<std::uint64_t> seed;
};

struct ExperimentPlan {
    std::optional<StageConfig> pretrain;
    StageConfig source;
    std::optional<StageConfig> psi_finetune;
    std::optional<StageConfig> transfer;
};

// One ablation row. Its loss replaces the loss of the ψ fine-tuning stage, or
// of source training when the plan has no such stage.
struct ArmConfig {
    std::string name;
    loss::LossConfig loss;
};

struct NegativeTransfer {
    // Mismatched source dataset; trained with the source stage settings.
    std::string dataset;
    std::string label;
};

struct ExperimentConfig {
    std::string experiment = "experiment";
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::map<std::string, DatasetSource> datasets;
    std::optional<AnnotationSource> annotations;
    data::PsiPolicy psi_policy;
    // input_shape and class_count may be left empty; they come from the first stage's dataset.
    models::ModelSpec model;
    ExperimentPlan plan;
    std::vector<ArmConfig> arms;
    // Name of the arm the others are compared against.
    std::string control_arm = "control";
    bool scratch_baseline = false;
    std::optional<NegativeTransfer> negative_transfer;
    // Empty: keep everything in memory.
    std::filesystem::path out_dir;

    // Names resolve, seeds nonempty, stage settings valid.
    void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

data::Dataset resolve_dataset(const DatasetSource& source, const std::string& name, std::uint64_t run_seed,
                              const std::filesystem::path& base_dir = {});

struct RunOptions {
    std::size_t jobs = 1;
    bool timestamps = true;
    // Where relative dataset and annotation paths are resolved.
    std::filesystem::path base_dir;
};

// Runs every seed through the plan for every arm and aggregates the report.
// A failing seed is recorded in report.failures and excluded from the summary.
metrics::ExperimentReport run_percep_tl(const ExperimentConfig& cfg, const RunOptions& options = {});

}  // namespace percep::pipeline
