#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/autodiff/tensor.hpp"
#include "percep_tl/losses/losses.hpp"

namespace percep::models {

enum class Family { mlp, cnn, attention, predcoder };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);

// Input shapes per family: mlp {D} (any sample shape with D elements is
// flattened), cnn and attention {C,H,W}, predcoder {T,C,H,W}.
struct ModelSpec {
    Family family = Family::mlp;
    ad::Shape input_shape;
    std::size_t class_count = 2;
    // mlp: hidden widths; cnn: conv channels (<= 3 layers); predcoder:
    // representation channels per layer (<= 2 layers). Unused by attention.
    std::vector<std::size_t> hidden;
    std::size_t kernel_size = 3;
    std::size_t patch_size = 2;
    std::size_t embed_dim = 16;
    std::size_t blocks = 1;
    // cnn read-out: 0 flattens the last conv map, g > 0 average-pools it to a
    // g x g grid first (1 is global average pooling).
    std::size_t pool_grid = 0;
    double dropout_p = 0.0;

    void validate() const;
    std::size_t input_numel() const { return ad::numel(input_shape); }

    bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& doc);

enum class Stage { pretrained, source_trained, psi_finetuned, transferred };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct ParamArray {
    ad::Shape shape;
    std::vector<double> values;
    bool trainable = true;

    bool operator==(const ParamArray&) const = default;
};

struct TrainingMeta {
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::string dataset;
    // Unset for a freshly built model.
    std::optional<Stage> stage;

    bool operator==(const TrainingMeta&) const = default;
};

struct ModelCheckpoint {
    ModelSpec spec;
    std::map<std::string, ParamArray> params;
    TrainingMeta meta;

    std::size_t parameter_count() const;
    // Names and shapes match what the spec implies.
    void validate() const;

    bool operator==(const ModelCheckpoint&) const = default;
};

// Parameter names and shapes implied by a spec, in a stable order.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ModelSpec& spec);
bool is_head_parameter(std::string_view name);

ModelCheckpoint build_model(const ModelSpec& spec, std::uint64_t seed);

// Backbone untouched; a fresh head for `class_count` classes drawn from `seed`.
ModelCheckpoint replace_head(const ModelCheckpoint& model, std::size_t class_count, std::uint64_t seed);

enum class TrainablePolicy { all, head_only, backbone_only };

std::string_view to_string(TrainablePolicy policy);
TrainablePolicy parse_trainable_policy(std::string_view text);

ModelCheckpoint set_trainable(const ModelCheckpoint& model, TrainablePolicy policy);

// Moves the checkpoint to a later pipeline stage; going back or staying put throws.
void advance_stage(TrainingMeta& meta, Stage next);

// Leaf tensors for one graph; trainable ones require grad.
using BoundParams = std::map<std::string, ad::Tensor>;
BoundParams bind(const ModelCheckpoint& model, bool track_grad = true);

struct ForwardOptions {
    loss::Mode mode = loss::Mode::eval;
    std::uint64_t dropout_seed = 0;
    // Negative means "use the spec's dropout_p".
    double dropout_p = -1.0;
};

struct ForwardResult {
    ad::Tensor logits;
    // Named [batch x features] activations.
    std::map<std::string, ad::Tensor> activations;
};

ForwardResult forward(const ModelCheckpoint& model, const BoundParams& params, const ad::Tensor& batch,
                      const ForwardOptions& options = {});
// Eval-mode logits without gradient tracking.
ad::Tensor predict_logits(const ModelCheckpoint& model, const ad::Tensor& batch);

struct PredcoderOutput {
    // errors[t][l] for every frame t = 0..T-1; E[0] compares the first frame
    // with a prediction made before any input was seen.
    std::vector<std::vector<ad::Tensor>> errors;
    // Layer-0 predictions and targets for frames 1..T-1.
    std::vector<ad::Tensor> predictions;
    std::vector<ad::Tensor> targets;
    // Global average of the layer-0 representation after the last frame.
    ad::Tensor first_layer;
    ad::Tensor logits;
};

PredcoderOutput predcoder_forward(const ModelCheckpoint& model, const BoundParams& params,
                                  const ad::Tensor& frames, const ForwardOptions& options = {});

ad::Tensor extract_activations(const ModelCheckpoint& model, const ad::Tensor& batch, const std::string& layer);
std::vector<std::string> activation_names(const ModelSpec& spec);

// JSON document plus a sibling .bin blob holding the parameter arrays.
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& model);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the raw bytes of the named parameters (all when empty).
std::uint64_t checksum(const ModelCheckpoint& model, const std::vector<std::string>& names = {});

}  // namespace percep::models
