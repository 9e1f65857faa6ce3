#include "percep_tl/pipeline/train.hpp"

#include <cmath>
#include <sstream>

#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::pipeline {

using nlohmann::json;

std::string_view to_string(Objective objective) {
    return objective == Objective::classify ? "classify" : "predict";
}

Objective parse_objective(std::string_view text) {
    if (text == "classify") return Objective::classify;
    if (text == "predict") return Objective::predict;
    throw ConfigError("unknown objective '" + std::string(text) + "'");
}

void StageConfig::validate() const {
    if (objective == Objective::predict && loss.regularizer == loss::RegularizerKind::none) {
        // The prediction-term ψ weighting needs no regularizer.
        auto relaxed = loss;
        relaxed.regularizer = loss::RegularizerKind::l1;
        relaxed.validate();
    } else {
        loss.validate();
    }
    optimizer.validate();
    for (double w : layer_weights) {
        if (!(w >= 0.0)) throw ConfigError("stage config: layer weights must be nonnegative");
    }
    for (double w : time_weights) {
        if (!(w >= 0.0)) throw ConfigError("stage config: time weights must be nonnegative");
    }
}

json to_json(const StageConfig& c) {
    return {{"dataset", c.dataset},
            {"loss", loss::to_json(c.loss)},
            {"optimizer", to_json(c.optimizer)},
            {"trainable", std::string(models::to_string(c.trainable))},
            {"seed", c.seed},
            {"objective", std::string(to_string(c.objective))},
            {"layer_weights", c.layer_weights},
            {"time_weights", c.time_weights}};
}

StageConfig stage_config_from_json(const json& doc) {
    StageConfig c;
    try {
        c.dataset = doc.value("dataset", std::string());
        c.loss = loss::loss_config_from_json(doc.value("loss", json()));
        c.optimizer = optimizer_settings_from_json(doc.value("optimizer", json()));
        c.trainable = models::parse_trainable_policy(doc.value("trainable", std::string("all")));
        c.seed = doc.value("seed", c.seed);
        c.objective = parse_objective(doc.value("objective", std::string("classify")));
        c.layer_weights = doc.value("layer_weights", c.layer_weights);
        c.time_weights = doc.value("time_weights", c.time_weights);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("stage config: ") + e.what());
    }
    c.validate();
    return c;
}

void check_compatible(const models::ModelSpec& spec, const data::DatasetManifest& manifest) {
    if (spec.input_shape == manifest.sample_shape) return;
    if (spec.family == models::Family::mlp && spec.input_numel() == ad::numel(manifest.sample_shape)) return;
    throw ShapeError("model input " + ad::to_string(spec.input_shape) + " does not accept samples of dataset '" +
                     manifest.name + "' with shape " + ad::to_string(manifest.sample_shape));
}

namespace {

struct BatchLoss {
    ad::Tensor total;
    double data_term = 0.0;
    double reg_term = 0.0;
    ad::Tensor logits;
};

std::vector<double> layer_weights_for(const StageConfig& cfg, std::size_t layers) {
    if (cfg.layer_weights.size() < layers) {
        throw ConfigError("stage config: " + std::to_string(layers) + " layer weights needed, got " +
                          std::to_string(cfg.layer_weights.size()));
    }
    return {cfg.layer_weights.begin(), cfg.layer_weights.begin() + static_cast<std::ptrdiff_t>(layers)};
}

BatchLoss batch_loss(const models::ModelCheckpoint& model, const models::BoundParams& params, const ad::Tensor& x,
                     std::span<const std::size_t> labels, std::span<const std::string> ids, const StageConfig& cfg,
                     const data::PsiTable* psi, const models::ForwardOptions& opts) {
    BatchLoss out;
    const bool use_psi = cfg.loss.psi_enabled && psi != nullptr;
    std::vector<double> psi_values;
    if (use_psi) psi_values = loss::psi_for_batch(*psi, ids);

    if (cfg.objective == Objective::predict) {
        auto pc = models::predcoder_forward(model, params, x, opts);
        loss::PrednetLossInput in;
        in.errors = pc.errors;
        const std::size_t T = pc.errors.size();
        in.lambda_t = cfg.time_weights.empty() ? loss::default_time_weights(T) : cfg.time_weights;
        in.lambda_l = layer_weights_for(cfg, pc.errors[0].size());
        if (use_psi) {
            in.psi = psi_values;
            const auto predicted = loss::argmax_rows(pc.logits);
            for (std::size_t n = 0; n < labels.size(); ++n) in.penalized.push_back(predicted[n] != labels[n]);
            in.penalty_c = cfg.loss.penalty_c;
        }
        out.total = loss::prednet_loss(in);
        out.data_term = out.total.item();
        out.logits = pc.logits;
        return out;
    }

    auto res = models::forward(model, params, x, opts);
    std::vector<ad::Tensor> reg_params;
    if (cfg.loss.reg_target == loss::RegTarget::parameters) {
        for (const auto& [name, t] : params) {
            if (t.requires_grad()) reg_params.push_back(t);
        }
    }
    auto b = loss::psi_regularized_loss(res.logits, labels, psi_values, cfg.loss, ids, reg_params);
    out.total = b.total;
    out.data_term = b.data_term;
    out.reg_term = b.reg_term;
    out.logits = res.logits;
    return out;
}

constexpr std::size_t kEvalBatch = 256;

}  // namespace

Evaluation evaluate(const models::ModelCheckpoint& model, const data::Dataset& dataset, data::Split split,
                    Objective objective, const StageConfig* cfg) {
    const auto idx = dataset.indices(split);
    Evaluation ev;
    ev.count = idx.size();
    if (idx.empty()) return ev;
    StageConfig plain;
    if (cfg) {
        plain.layer_weights = cfg->layer_weights;
        plain.time_weights = cfg->time_weights;
    }
    plain.objective = objective;
    const auto params = models::bind(model, false);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < idx.size(); start += kEvalBatch) {
        const std::size_t end = std::min(idx.size(), start + kEvalBatch);
        const std::span<const std::size_t> chunk(idx.data() + start, end - start);
        const auto labels = dataset.labels(chunk);
        const auto ids = dataset.ids(chunk);
        const auto bl = batch_loss(model, params, dataset.batch(chunk), labels, ids, plain, nullptr, {});
        loss_sum += bl.data_term * static_cast<double>(chunk.size());
        hits += static_cast<std::size_t>(std::llround(metrics::top1(bl.logits, labels) * static_cast<double>(chunk.size())));
    }
    ev.loss = loss_sum / static_cast<double>(idx.size());
    ev.top1 = static_cast<double>(hits) / static_cast<double>(idx.size());
    return ev;
}

StageResult train_stage(const models::ModelCheckpoint& model, const StageConfig& cfg, const data::Dataset& dataset,
                        const data::PsiTable* psi) {
    cfg.validate();
    if (cfg.loss.psi_enabled && psi == nullptr) {
        throw ConfigError("stage on '" + dataset.manifest.name + "': ψ regularization enabled but no ψ table given");
    }
    if (cfg.objective == Objective::predict && model.spec.family != models::Family::predcoder) {
        throw ConfigError("predict objective requires a predcoder model");
    }
    check_compatible(model.spec, dataset.manifest);
    if (model.spec.class_count != dataset.manifest.class_count) {
        throw ShapeError("model has " + std::to_string(model.spec.class_count) + " classes, dataset '" +
                         dataset.manifest.name + "' has " + std::to_string(dataset.manifest.class_count));
    }
    auto train = dataset.indices(data::Split::train);
    if (train.empty()) throw ConfigError("dataset '" + dataset.manifest.name + "' has an empty train split");

    StageResult out;
    out.model = models::set_trainable(model, cfg.trainable);
    OptimizerState state;
    Rng shuffler(derive_seed(cfg.seed, "shuffle"));
    models::ForwardOptions opts;
    opts.mode = loss::Mode::train;
    if (cfg.loss.dropout_p > 0.0) opts.dropout_p = cfg.loss.dropout_p;
    const std::size_t bs = cfg.optimizer.batch_size;

    for (std::size_t epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
        shuffler.shuffle(std::span<std::size_t>(train));
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < train.size(); start += bs, ++batch_no) {
            const std::size_t end = std::min(train.size(), start + bs);
            const std::span<const std::size_t> chunk(train.data() + start, end - start);
            const auto labels = dataset.labels(chunk);
            const auto ids = dataset.ids(chunk);
            const auto params = models::bind(out.model, true);
            opts.dropout_seed = derive_seed(cfg.seed, {0xd0ULL, epoch, batch_no});
            const auto bl = batch_loss(out.model, params, dataset.batch(chunk), labels, ids, cfg, psi, opts);
            const double total = bl.total.item();
            if (!std::isfinite(total)) {
                std::ostringstream msg;
                msg << "non-finite loss on dataset '" << dataset.manifest.name << "' at epoch " << epoch
                    << ", batch " << batch_no << ": total=" << total << " data_term=" << bl.data_term
                    << " reg_term=" << bl.reg_term;
                throw TrainingError(msg.str());
            }
            if (!bl.total.requires_grad()) continue;
            ad::backpropagate(bl.total);
            GradMap grads;
            for (const auto& [name, t] : params) {
                if (t.requires_grad()) grads[name] = t.grad();
            }
            optimizer_step(out.model.params, grads, state, cfg.optimizer);
        }
        const auto tr = evaluate(out.model, dataset, data::Split::train, cfg.objective, &cfg);
        out.curves.push_back({epoch + 1, "train", tr.loss, tr.top1});
        const auto va = evaluate(out.model, dataset, data::Split::val, cfg.objective, &cfg);
        if (va.count > 0) {
            if (!std::isfinite(va.loss)) {
                throw TrainingError("validation loss diverged on dataset '" + dataset.manifest.name + "' at epoch " +
                                    std::to_string(epoch));
            }
            out.curves.push_back({epoch + 1, "val", va.loss, va.top1});
        }
    }
    out.model.meta.epoch += cfg.optimizer.epochs;
    out.model.meta.dataset = dataset.manifest.name;
    return out;
}

}  // namespace percep::pipeline
