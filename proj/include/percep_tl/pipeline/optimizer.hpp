#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/models/model.hpp"

namespace percep::pipeline {

enum class OptimizerKind { sgd, sgd_momentum, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;

    // learning_rate >= 0 (0 is a no-op run), epochs and batch_size >= 1.
    void validate() const;

    bool operator==(const OptimizerSettings&) const = default;
};

nlohmann::json to_json(const OptimizerSettings& s);
OptimizerSettings optimizer_settings_from_json(const nlohmann::json& doc);

struct OptimizerState {
    std::size_t step = 0;
    // Momentum buffer (sgd_momentum) or first moment (adam).
    std::map<std::string, std::vector<double>> m;
    // Second moment (adam).
    std::map<std::string, std::vector<double>> v;
};

using GradMap = std::map<std::string, std::vector<double>>;

// Updates every trainable parameter that has an entry in `grads`; frozen
// parameters are never touched.
void optimizer_step(std::map<std::string, models::ParamArray>& params, const GradMap& grads,
                    OptimizerState& state, const OptimizerSettings& settings);

}  // namespace percep::pipeline
