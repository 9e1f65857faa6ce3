#include "percep_tl/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::loss {

using nlohmann::json;

std::string_view to_string(RegularizerKind kind) {
    switch (kind) {
        case RegularizerKind::none: return "none";
        case RegularizerKind::l1: return "l1";
        case RegularizerKind::l2: return "l2";
    }
    return "none";
}

RegularizerKind parse_regularizer(std::string_view text) {
    if (text == "none") return RegularizerKind::none;
    if (text == "l1") return RegularizerKind::l1;
    if (text == "l2") return RegularizerKind::l2;
    throw ConfigError("unknown regularizer '" + std::string(text) + "'");
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss config: lambda must be >= 0");
    if (!(penalty_c >= 1.0) || !std::isfinite(penalty_c)) throw ConfigError("loss config: penalty_c must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("loss config: dropout_p must lie in [0,1)");
    if (psi_enabled && regularizer == RegularizerKind::none) {
        throw ConfigError("loss config: ψ regularization needs regularizer l1 or l2");
    }
}

json to_json(const LossConfig& c) {
    return {{"lambda", c.lambda},
            {"penalty_c", c.penalty_c},
            {"regularizer", std::string(to_string(c.regularizer))},
            {"dropout_p", c.dropout_p},
            {"psi_enabled", c.psi_enabled},
            {"reg_target", c.reg_target == RegTarget::logits ? "logits" : "parameters"}};
}

LossConfig loss_config_from_json(const json& doc) {
    LossConfig c;
    if (doc.is_null()) return c;
    try {
        c.lambda = doc.value("lambda", c.lambda);
        c.penalty_c = doc.value("penalty_c", c.penalty_c);
        c.regularizer = parse_regularizer(doc.value("regularizer", std::string("none")));
        c.dropout_p = doc.value("dropout_p", c.dropout_p);
        c.psi_enabled = doc.value("psi_enabled", c.psi_enabled);
        const auto target = doc.value("reg_target", std::string("logits"));
        if (target == "logits") {
            c.reg_target = RegTarget::logits;
        } else if (target == "parameters") {
            c.reg_target = RegTarget::parameters;
        } else {
            throw ConfigError("loss config: unknown reg_target '" + target + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    return c;
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& logits) {
    if (logits.dim() != 2) {
        throw ShapeError("argmax_rows: expected [N,C], got " + ad::to_string(logits.shape()));
    }
    const std::size_t n = logits.extent(0);
    const std::size_t k = logits.extent(1);
    const auto v = logits.values();
    std::vector<std::size_t> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (v[r * k + c] > v[r * k + best]) best = c;
        }
        out[r] = best;
    }
    return out;
}

ad::Tensor cross_entropy_per_sample(const ad::Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.dim() != 2 || logits.extent(1) < 2) {
        throw ShapeError("cross_entropy: expected logits [N,C] with C >= 2, got " +
                         ad::to_string(logits.shape()));
    }
    if (labels.size() != logits.extent(0)) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.extent(0)) + " rows");
    }
    for (auto y : labels) {
        if (y >= logits.extent(1)) {
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                              std::to_string(logits.extent(1)) + " classes");
        }
    }
    return ad::scale(ad::pick(ad::log_softmax(logits), labels), -1.0);
}

ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
    return ad::mean(cross_entropy_per_sample(logits, labels));
}

ad::Tensor regularizer_term(RegularizerKind kind, const ad::Tensor& v) {
    switch (kind) {
        case RegularizerKind::l1: return ad::sum(ad::abs(v));
        case RegularizerKind::l2: return ad::sqrt(ad::sum(ad::square(v)));
        case RegularizerKind::none: break;
    }
    throw ConfigError("regularizer_term: kind must be l1 or l2");
}

ad::Tensor regularizer_rows(RegularizerKind kind, const ad::Tensor& rows) {
    if (rows.dim() != 2) {
        throw ShapeError("regularizer_rows: expected [N,C], got " + ad::to_string(rows.shape()));
    }
    switch (kind) {
        case RegularizerKind::l1: return ad::sum(ad::abs(rows), 1);
        case RegularizerKind::l2: return ad::sqrt(ad::sum(ad::square(rows), 1));
        case RegularizerKind::none: break;
    }
    throw ConfigError("regularizer_rows: kind must be l1 or l2");
}

std::vector<double> psi_for_batch(const data::PsiTable& table, std::span<const std::string> ids) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(table.lookup(id));
    return out;
}

BatchLossBreakdown psi_regularized_loss(const ad::Tensor& logits, std::span<const std::size_t> labels,
                                        std::span<const double> psi, const LossConfig& cfg,
                                        std::span<const std::string> ids,
                                        std::span<const ad::Tensor> params) {
    cfg.validate();
    const ad::Tensor ce_rows = cross_entropy_per_sample(logits, labels);
    const std::size_t n = labels.size();
    if (cfg.psi_enabled && psi.size() != n) {
        throw ConfigError("psi_regularized_loss: " + std::to_string(psi.size()) + " ψ values for " +
                          std::to_string(n) + " samples");
    }
    if (!ids.empty() && ids.size() != n) {
        throw ConfigError("psi_regularized_loss: sample id count does not match the batch");
    }
    for (double p : psi) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("psi_regularized_loss: ψ value " + std::to_string(p) + " outside [0,1]");
        }
    }
    const auto predicted = argmax_rows(logits);

    BatchLossBreakdown out;
    out.per_sample.resize(n);
    const ad::Tensor ce = ad::mean(ce_rows);
    out.data_term = ce.item();
    for (std::size_t j = 0; j < n; ++j) {
        auto& s = out.per_sample[j];
        s.sample_id = ids.empty() ? std::to_string(j) : ids[j];
        s.ce = ce_rows.values()[j];
        s.penalized = predicted[j] != labels[j];
        s.psi = cfg.psi_enabled ? psi[j] : 1.0;
    }
    if (cfg.regularizer == RegularizerKind::none) {
        out.total = ce;
        return out;
    }

    // Per-sample multiplier psi_j * gate_j.
    std::vector<double> weight(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& s = out.per_sample[j];
        weight[j] = cfg.psi_enabled ? s.psi * (s.penalized ? cfg.penalty_c : 1.0) : 1.0;
    }
    ad::Tensor reg_rows;
    if (cfg.reg_target == RegTarget::logits) {
        reg_rows = ad::mul(regularizer_rows(cfg.regularizer, logits), ad::Tensor::from({n}, weight));
    } else {
        if (params.empty()) {
            throw ConfigError("psi_regularized_loss: parameter regularization needs the parameter tensors");
        }
        ad::Tensor r;
        if (cfg.regularizer == RegularizerKind::l1) {
            for (const auto& p : params) {
                const auto t = ad::sum(ad::abs(p));
                r = r.defined() ? ad::add(r, t) : t;
            }
        } else {
            for (const auto& p : params) {
                const auto t = ad::sum(ad::square(p));
                r = r.defined() ? ad::add(r, t) : t;
            }
            r = ad::sqrt(r);
        }
        // Broadcast the scalar R over the batch before weighting.
        reg_rows = ad::reshape(ad::matmul(ad::Tensor::from({n, 1}, weight), ad::reshape(r, {1, 1})), {n});
    }
    for (std::size_t j = 0; j < n; ++j) out.per_sample[j].reg = reg_rows.values()[j];
    if (cfg.lambda == 0.0) {
        out.total = ce;
        out.reg_term = 0.0;
        return out;
    }
    const ad::Tensor reg = ad::scale(ad::mean(reg_rows), cfg.lambda);
    out.reg_term = reg.item();
    out.total = ad::add(ce, reg);
    return out;
}

ad::Tensor dropout_mask(const ad::Shape& shape, double p, std::uint64_t seed, Mode mode) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout_mask: p must lie in [0,1), got " + std::to_string(p));
    }
    const std::size_t n = ad::numel(shape);
    if (mode == Mode::eval || p == 0.0) {
        return ad::Tensor::full(shape, 1.0);
    }
    Rng rng(derive_seed(seed, "dropout"));
    const double keep = 1.0 / (1.0 - p);
    std::vector<double> mask(n);
    for (auto& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
    return ad::Tensor::from(shape, std::move(mask));
}

std::vector<double> default_time_weights(std::size_t steps) {
    if (steps < 2) {
        throw ConfigError("default_time_weights: at least two time steps required");
    }
    std::vector<double> w(steps, 1.0 / static_cast<double>(steps - 1));
    w[0] = 0.0;
    return w;
}

ad::Tensor prednet_loss(const PrednetLossInput& in) {
    const std::size_t T = in.errors.size();
    if (T == 0) throw ShapeError("prednet_loss: no time steps");
    const std::size_t L = in.errors[0].size();
    if (L == 0) throw ShapeError("prednet_loss: no layers");
    if (in.lambda_t.size() != T) {
        throw ShapeError("prednet_loss: " + std::to_string(in.lambda_t.size()) + " time weights for " +
                         std::to_string(T) + " steps");
    }
    if (in.lambda_l.size() != L) {
        throw ShapeError("prednet_loss: " + std::to_string(in.lambda_l.size()) + " layer weights for " +
                         std::to_string(L) + " layers");
    }
    if (!in.n_l.empty() && in.n_l.size() != L) {
        throw ShapeError("prednet_loss: unit counts must be given for every layer");
    }
    for (double w : in.lambda_t) if (!(w >= 0.0)) throw ConfigError("prednet_loss: negative time weight");
    for (double w : in.lambda_l) if (!(w >= 0.0)) throw ConfigError("prednet_loss: negative layer weight");
    for (double w : in.n_l) if (!(w > 0.0)) throw ConfigError("prednet_loss: unit counts must be positive");
    if (in.output_layer >= L) throw ShapeError("prednet_loss: output layer out of range");

    const std::size_t N = in.errors[0][0].extent(0);
    std::vector<ad::Shape> layer_shapes;
    for (const auto& e : in.errors[0]) layer_shapes.push_back(e.shape());
    for (std::size_t t = 0; t < T; ++t) {
        if (in.errors[t].size() != L) {
            throw ShapeError("prednet_loss: time step " + std::to_string(t) + " has " +
                             std::to_string(in.errors[t].size()) + " layers, expected " + std::to_string(L));
        }
        for (std::size_t l = 0; l < L; ++l) {
            if (in.errors[t][l].shape() != layer_shapes[l]) {
                throw ShapeError("prednet_loss: E[" + std::to_string(t) + "][" + std::to_string(l) +
                                 "] has shape " + ad::to_string(in.errors[t][l].shape()) + ", expected " +
                                 ad::to_string(layer_shapes[l]));
            }
            for (double v : in.errors[t][l].values()) {
                if (v < 0.0) throw ConfigError("prednet_loss: error units must be nonnegative");
            }
        }
    }
    ad::Tensor seq_weight;
    if (!in.psi.empty()) {
        if (in.psi.size() != N || in.penalized.size() != N) {
            throw ShapeError("prednet_loss: ψ and penalty flags must be given per sequence");
        }
        if (!(in.penalty_c >= 1.0)) throw ConfigError("prednet_loss: penalty_c must be >= 1");
        std::vector<double> w(N);
        for (std::size_t n = 0; n < N; ++n) {
            if (!(in.psi[n] >= 0.0 && in.psi[n] <= 1.0)) throw ConfigError("prednet_loss: ψ outside [0,1]");
            w[n] = in.psi[n] * (in.penalized[n] ? in.penalty_c : 1.0);
        }
        seq_weight = ad::Tensor::from({N}, std::move(w));
    }

    ad::Tensor total;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t l = 0; l < L; ++l) {
            const auto& e = in.errors[t][l];
            const std::size_t units = e.numel() / N;
            const double n_l = in.n_l.empty() ? static_cast<double>(units) : in.n_l[l];
            ad::Tensor per_seq = ad::sum(ad::reshape(e, {N, units}), 1);
            if (seq_weight.defined() && l == in.output_layer) {
                per_seq = ad::mul(per_seq, seq_weight);
            }
            const ad::Tensor term = ad::scale(ad::sum(per_seq), in.lambda_t[t] * in.lambda_l[l] / n_l);
            total = total.defined() ? ad::add(total, term) : term;
        }
    }
    return ad::scale(total, 1.0 / static_cast<double>(N));
}

}  // namespace percep::loss
