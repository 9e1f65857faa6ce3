#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/autodiff/tensor.hpp"
#include "percep_tl/data/psi.hpp"

namespace percep::loss {

enum class RegularizerKind { none, l1, l2 };

std::string_view to_string(RegularizerKind kind);
RegularizerKind parse_regularizer(std::string_view text);

// What R is applied to. Logits per sample by default; `parameters` applies R to
// the model's trainable parameters and weights it per sample the same way.
enum class RegTarget { logits, parameters };

struct LossConfig {
    double lambda = 0.01;
    double penalty_c = 2.0;
    RegularizerKind regularizer = RegularizerKind::none;
    double dropout_p = 0.0;
    bool psi_enabled = false;
    RegTarget reg_target = RegTarget::logits;

    // lambda >= 0, penalty_c >= 1, 0 <= dropout_p < 1; ψ needs a regularizer.
    void validate() const;

    bool operator==(const LossConfig&) const = default;
};

nlohmann::json to_json(const LossConfig& cfg);
// Missing fields keep their defaults. Does not validate.
LossConfig loss_config_from_json(const nlohmann::json& doc);

struct SampleLoss {
    std::string sample_id;
    double ce = 0.0;
    double reg = 0.0;
    double psi = 0.0;
    bool penalized = false;
};

struct BatchLossBreakdown {
    ad::Tensor total;
    double data_term = 0.0;
    double reg_term = 0.0;
    std::vector<SampleLoss> per_sample;
};

// Row-wise argmax with ties going to the lowest index.
std::vector<std::size_t> argmax_rows(const ad::Tensor& logits);

// Per-sample -log softmax(z)[label], shape [N].
ad::Tensor cross_entropy_per_sample(const ad::Tensor& logits, std::span<const std::size_t> labels);
// Mean over the batch of cross_entropy_per_sample.
ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels);

// l1: sum |v|; l2: sqrt(sum v^2). Scalar result.
ad::Tensor regularizer_term(RegularizerKind kind, const ad::Tensor& v);
// R applied to each row of a [N, C] tensor, shape [N].
ad::Tensor regularizer_rows(RegularizerKind kind, const ad::Tensor& rows);

// ψ per batch sample from a table; unannotated samples read as 0.
std::vector<double> psi_for_batch(const data::PsiTable& table, std::span<const std::string> ids);

// total = CE + lambda * mean_j reg_j with reg_j = R(z_j) * psi_j * gate_j, gate_j
// = c when argmax(z_j) != y_j. Without ψ, psi_j = gate_j = 1 (plain l1/l2).
// `params` is only read when cfg.reg_target == parameters.
BatchLossBreakdown psi_regularized_loss(const ad::Tensor& logits, std::span<const std::size_t> labels,
                                        std::span<const double> psi, const LossConfig& cfg,
                                        std::span<const std::string> ids = {},
                                        std::span<const ad::Tensor> params = {});

enum class Mode { train, eval };

// Entries 0 with probability p, else 1/(1-p). Identity in eval mode.
ad::Tensor dropout_mask(const ad::Shape& shape, double p, std::uint64_t seed, Mode mode = Mode::train);

// Predictive-coding loss over rectified error units.
struct PrednetLossInput {
    // errors[t][l], each [N, ...] with nonnegative entries.
    std::vector<std::vector<ad::Tensor>> errors;
    std::vector<double> lambda_t;
    std::vector<double> lambda_l;
    // Units per sample of each layer; empty means "infer from the tensors".
    std::vector<double> n_l;
    // Per-sequence ψ; empty disables the prediction-layer weighting.
    std::vector<double> psi;
    std::vector<bool> penalized;
    double penalty_c = 2.0;
    // Layer whose error compares the model's prediction with its input frame.
    std::size_t output_layer = 0;
};

// (1/N) sum_n sum_t lambda_t sum_l (lambda_l / n_l) sum_units E_l^t, where the
// output layer's term for sequence n is multiplied by psi_n * (c if penalized).
ad::Tensor prednet_loss(const PrednetLossInput& input);

// lambda_0 = 0 and lambda_t = 1/(T-1) afterwards.
std::vector<double> default_time_weights(std::size_t steps);

}  // namespace percep::loss
