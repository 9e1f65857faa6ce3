#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/data/dataset.hpp"
#include "percep_tl/data/psi.hpp"
#include "percep_tl/losses/losses.hpp"
#include "percep_tl/metrics/metrics.hpp"
#include "percep_tl/models/model.hpp"
#include "percep_tl/pipeline/optimizer.hpp"

namespace percep::pipeline {

// classify: cross-entropy (+ regularizer) on the model's logits.
// predict: predictive-coding loss on next-frame errors (predcoder only).
enum class Objective { classify, predict };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view text);

struct StageConfig {
    std::string dataset;
    loss::LossConfig loss;
    OptimizerSettings optimizer;
    models::TrainablePolicy trainable = models::TrainablePolicy::all;
    std::uint64_t seed = 0;
    Objective objective = Objective::classify;
    // Predictive-coding weights; time weights default to 0, 1/(T-1), ...
    std::vector<double> layer_weights{1.0, 0.1};
    std::vector<double> time_weights;

    void validate() const;
};

nlohmann::json to_json(const StageConfig& cfg);
StageConfig stage_config_from_json(const nlohmann::json& doc);

struct StageResult {
    models::ModelCheckpoint model;
    // One train point and (when the split is nonempty) one val point per epoch.
    std::vector<metrics::CurvePoint> curves;
};

// Trains on the dataset's train split with epoch-shuffled batches. `psi` is
// required exactly when cfg.loss.psi_enabled.
StageResult train_stage(const models::ModelCheckpoint& model, const StageConfig& cfg, const data::Dataset& dataset,
                        const data::PsiTable* psi = nullptr);

struct Evaluation {
    // Cross-entropy for classify, unweighted predictive-coding loss for predict.
    double loss = 0.0;
    double top1 = 0.0;
    std::size_t count = 0;
};

Evaluation evaluate(const models::ModelCheckpoint& model, const data::Dataset& dataset, data::Split split,
                    Objective objective = Objective::classify, const StageConfig* cfg = nullptr);

// Throws ShapeError unless the model accepts the dataset's samples.
void check_compatible(const models::ModelSpec& spec, const data::DatasetManifest& manifest);

}  // namespace percep::pipeline
