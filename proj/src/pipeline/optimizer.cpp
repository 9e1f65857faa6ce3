#include "percep_tl/pipeline/optimizer.hpp"

#include <cmath>

#include "percep_tl/error.hpp"

namespace percep::pipeline {

using nlohmann::json;

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (text == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(text) + "'");
}

void OptimizerSettings::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("optimizer: learning_rate must be a nonnegative number");
    }
    if (epochs < 1) throw ConfigError("optimizer: epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("optimizer: batch_size must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must lie in [0,1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("optimizer: betas must lie in [0,1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
}

json to_json(const OptimizerSettings& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"learning_rate", s.learning_rate},
            {"momentum", s.momentum},
            {"beta1", s.beta1},
            {"beta2", s.beta2},
            {"epsilon", s.epsilon},
            {"batch_size", s.batch_size},
            {"epochs", s.epochs}};
}

OptimizerSettings optimizer_settings_from_json(const json& doc) {
    OptimizerSettings s;
    if (doc.is_null()) return s;
    try {
        s.kind = parse_optimizer(doc.value("kind", std::string(to_string(s.kind))));
        s.learning_rate = doc.value("learning_rate", s.learning_rate);
        s.momentum = doc.value("momentum", s.momentum);
        s.beta1 = doc.value("beta1", s.beta1);
        s.beta2 = doc.value("beta2", s.beta2);
        s.epsilon = doc.value("epsilon", s.epsilon);
        s.batch_size = doc.value("batch_size", s.batch_size);
        s.epochs = doc.value("epochs", s.epochs);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("optimizer settings: ") + e.what());
    }
    s.validate();
    return s;
}

void optimizer_step(std::map<std::string, models::ParamArray>& params, const GradMap& grads,
                    OptimizerState& state, const OptimizerSettings& s) {
    ++state.step;
    const double lr = s.learning_rate;
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("optimizer_step: unknown parameter '" + name + "'");
        auto& p = it->second;
        if (!p.trainable) continue;
        if (g.size() != p.values.size()) {
            throw ShapeError("optimizer_step: gradient of '" + name + "' has " + std::to_string(g.size()) +
                             " entries for " + std::to_string(p.values.size()) + " values");
        }
        switch (s.kind) {
            case OptimizerKind::sgd:
                for (std::size_t i = 0; i < g.size(); ++i) p.values[i] -= lr * g[i];
                break;
            case OptimizerKind::sgd_momentum: {
                auto& buf = state.m[name];
                buf.resize(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    buf[i] = s.momentum * buf[i] + g[i];
                    p.values[i] -= lr * buf[i];
                }
                break;
            }
            case OptimizerKind::adam: {
                auto& m = state.m[name];
                auto& v = state.v[name];
                m.resize(g.size(), 0.0);
                v.resize(g.size(), 0.0);
                const double t = static_cast<double>(state.step);
                const double c1 = 1.0 - std::pow(s.beta1, t);
                const double c2 = 1.0 - std::pow(s.beta2, t);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                    p.values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.epsilon);
                }
                break;
            }
        }
    }
}

}  // namespace percep::pipeline
