#include "percep_tl/models/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::models {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Family family) {
    switch (family) {
        case Family::mlp: return "mlp";
        case Family::cnn: return "cnn";
        case Family::attention: return "attention";
        case Family::predcoder: return "predcoder";
    }
    return "mlp";
}

Family parse_family(std::string_view text) {
    if (text == "mlp") return Family::mlp;
    if (text == "cnn") return Family::cnn;
    if (text == "attention") return Family::attention;
    if (text == "predcoder") return Family::predcoder;
    throw ConfigError("unknown model family '" + std::string(text) + "'");
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::pretrained: return "pretrained";
        case Stage::source_trained: return "source_trained";
        case Stage::psi_finetuned: return "psi_finetuned";
        case Stage::transferred: return "transferred";
    }
    return "pretrained";
}

Stage parse_stage(std::string_view text) {
    if (text == "pretrained") return Stage::pretrained;
    if (text == "source_trained") return Stage::source_trained;
    if (text == "psi_finetuned") return Stage::psi_finetuned;
    if (text == "transferred") return Stage::transferred;
    throw FormatError("unknown checkpoint stage '" + std::string(text) + "'");
}

std::string_view to_string(TrainablePolicy policy) {
    switch (policy) {
        case TrainablePolicy::all: return "all";
        case TrainablePolicy::head_only: return "head_only";
        case TrainablePolicy::backbone_only: return "backbone_only";
    }
    return "all";
}

TrainablePolicy parse_trainable_policy(std::string_view text) {
    if (text == "all") return TrainablePolicy::all;
    if (text == "head_only") return TrainablePolicy::head_only;
    if (text == "backbone_only") return TrainablePolicy::backbone_only;
    throw ConfigError("unknown trainable policy '" + std::string(text) + "'");
}

void ModelSpec::validate() const {
    auto fail = [&](const std::string& msg) {
        throw ConfigError("model spec (" + std::string(to_string(family)) + "): " + msg);
    };
    if (class_count < 2) fail("class_count must be at least 2");
    if (input_shape.empty() || ad::numel(input_shape) == 0) fail("input_shape must be nonempty and positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0,1)");
    for (auto h : hidden) {
        if (h == 0) fail("hidden sizes must be positive");
    }
    const bool conv = family == Family::cnn || family == Family::predcoder;
    if (conv && (kernel_size == 0 || kernel_size % 2 == 0)) fail("kernel_size must be odd");
    switch (family) {
        case Family::mlp:
            break;
        case Family::cnn:
            if (input_shape.size() != 3) fail("input_shape must be {C,H,W}");
            if (hidden.empty() || hidden.size() > 3) fail("between 1 and 3 conv layers required");
            if (pool_grid > 0 && (input_shape[1] % pool_grid != 0 || input_shape[2] % pool_grid != 0)) {
                fail("pool_grid " + std::to_string(pool_grid) + " does not divide the image side");
            }
            break;
        case Family::attention:
            if (input_shape.size() != 3) fail("input_shape must be {C,H,W}");
            if (patch_size == 0 || input_shape[1] % patch_size != 0 || input_shape[2] % patch_size != 0) {
                fail("patch_size " + std::to_string(patch_size) + " does not divide the image side " +
                     std::to_string(input_shape[1]) + "x" + std::to_string(input_shape[2]));
            }
            if (embed_dim == 0) fail("embed_dim must be positive");
            if (blocks == 0 || blocks > 2) fail("blocks must be 1 or 2");
            break;
        case Family::predcoder:
            if (input_shape.size() != 4) fail("input_shape must be {T,C,H,W}");
            if (input_shape[0] < 2) fail("at least two frames required");
            if (hidden.empty() || hidden.size() > 2) fail("1 or 2 layers required");
            break;
    }
}

json to_json(const ModelSpec& s) {
    return {{"family", std::string(to_string(s.family))},
            {"input_shape", s.input_shape},
            {"class_count", s.class_count},
            {"hidden", s.hidden},
            {"kernel_size", s.kernel_size},
            {"patch_size", s.patch_size},
            {"embed_dim", s.embed_dim},
            {"blocks", s.blocks},
            {"pool_grid", s.pool_grid},
            {"dropout_p", s.dropout_p}};
}

ModelSpec model_spec_from_json(const json& doc) {
    ModelSpec s;
    try {
        s.family = parse_family(doc.at("family").get<std::string>());
        if (doc.contains("input_shape")) s.input_shape = doc["input_shape"].get<ad::Shape>();
        s.class_count = doc.value("class_count", s.class_count);
        s.hidden = doc.value("hidden", s.hidden);
        s.kernel_size = doc.value("kernel_size", s.kernel_size);
        s.patch_size = doc.value("patch_size", s.patch_size);
        s.embed_dim = doc.value("embed_dim", s.embed_dim);
        s.blocks = doc.value("blocks", s.blocks);
        s.pool_grid = doc.value("pool_grid", s.pool_grid);
        s.dropout_p = doc.value("dropout_p", s.dropout_p);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model spec: ") + e.what());
    }
    return s;
}

namespace {

struct LayoutEntry {
    std::string name;
    ad::Shape shape;
    std::size_t fan_in;
};

// Channel counts of the predictive-coding stack: a[l] targets, r[l] representations.
struct PcChannels {
    std::vector<std::size_t> a;
    std::vector<std::size_t> r;
    std::size_t layers() const { return r.size(); }
    std::size_t state_in(std::size_t l) const {
        return r[l] + 2 * a[l] + (l + 1 < layers() ? r[l + 1] : 0);
    }
};

PcChannels pc_channels(const ModelSpec& s) {
    PcChannels c;
    c.r = s.hidden;
    c.a.push_back(s.input_shape[1]);
    for (std::size_t l = 1; l < s.hidden.size(); ++l) c.a.push_back(s.hidden[l - 1]);
    return c;
}

void add_linear(std::vector<LayoutEntry>& out, const std::string& prefix, std::size_t in, std::size_t n_out,
                bool bias = true) {
    out.push_back({prefix + ".weight", {in, n_out}, in});
    if (bias) out.push_back({prefix + ".bias", {n_out}, in});
}

void add_conv(std::vector<LayoutEntry>& out, const std::string& prefix, std::size_t in, std::size_t n_out,
              std::size_t k) {
    out.push_back({prefix + ".weight", {n_out, in, k, k}, in * k * k});
    out.push_back({prefix + ".bias", {n_out}, in * k * k});
}

std::vector<LayoutEntry> layout(const ModelSpec& s) {
    std::vector<LayoutEntry> out;
    std::size_t features = 0;
    switch (s.family) {
        case Family::mlp: {
            std::size_t in = s.input_numel();
            for (std::size_t i = 0; i < s.hidden.size(); ++i) {
                add_linear(out, "fc" + std::to_string(i), in, s.hidden[i]);
                in = s.hidden[i];
            }
            features = in;
            break;
        }
        case Family::cnn: {
            std::size_t in = s.input_shape[0];
            for (std::size_t i = 0; i < s.hidden.size(); ++i) {
                add_conv(out, "conv" + std::to_string(i), in, s.hidden[i], s.kernel_size);
                in = s.hidden[i];
            }
            features = s.pool_grid > 0 ? in * s.pool_grid * s.pool_grid : in * s.input_shape[1] * s.input_shape[2];
            break;
        }
        case Family::attention: {
            const std::size_t p = s.patch_size;
            const std::size_t patches = (s.input_shape[1] / p) * (s.input_shape[2] / p);
            const std::size_t e = s.embed_dim;
            add_linear(out, "patch", s.input_shape[0] * p * p, e);
            out.push_back({"pos", {patches, e}, e});
            for (std::size_t b = 0; b < s.blocks; ++b) {
                const std::string pre = "block" + std::to_string(b);
                for (const char* m : {".q", ".k", ".v", ".o"}) add_linear(out, pre + m, e, e, false);
                add_linear(out, pre + ".ff", e, e);
            }
            features = e;
            break;
        }
        case Family::predcoder: {
            const auto c = pc_channels(s);
            const std::size_t k = s.kernel_size;
            for (std::size_t l = 0; l < c.layers(); ++l) {
                const std::string pre = "pc" + std::to_string(l);
                add_conv(out, pre + ".z", c.state_in(l), c.r[l], k);
                add_conv(out, pre + ".h", c.state_in(l), c.r[l], k);
                add_conv(out, pre + ".ahat", c.r[l], c.a[l], k);
                if (l + 1 < c.layers()) add_conv(out, pre + ".a", 2 * c.a[l], c.a[l + 1], k);
            }
            features = c.r[0];
            break;
        }
    }
    add_linear(out, "head", features, s.class_count);
    return out;
}

std::vector<double> init_values(const LayoutEntry& e, std::uint64_t seed) {
    Rng rng(derive_seed(seed, e.name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
    std::vector<double> v(ad::numel(e.shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

}  // namespace

std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<std::pair<std::string, ad::Shape>> out;
    for (auto& e : layout(spec)) out.emplace_back(e.name, e.shape);
    return out;
}

bool is_head_parameter(std::string_view name) { return name.starts_with("head."); }

std::size_t ModelCheckpoint::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += p.values.size();
    return n;
}

void ModelCheckpoint::validate() const {
    const auto expected = parameter_layout(spec);
    if (expected.size() != params.size()) {
        throw FormatError("checkpoint has " + std::to_string(params.size()) + " parameter arrays, spec implies " +
                          std::to_string(expected.size()));
    }
    for (const auto& [name, shape] : expected) {
        auto it = params.find(name);
        if (it == params.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape != shape) {
            throw FormatError("parameter '" + name + "' has shape " + ad::to_string(it->second.shape) +
                              ", spec implies " + ad::to_string(shape));
        }
        if (it->second.values.size() != ad::numel(shape)) {
            throw FormatError("parameter '" + name + "' value count does not match its shape");
        }
    }
}

ModelCheckpoint build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    ModelCheckpoint m;
    m.spec = spec;
    m.meta.seed = seed;
    for (const auto& e : layout(spec)) {
        m.params[e.name] = ParamArray{e.shape, init_values(e, seed), true};
    }
    return m;
}

ModelCheckpoint replace_head(const ModelCheckpoint& model, std::size_t class_count, std::uint64_t seed) {
    ModelCheckpoint out = model;
    out.spec.class_count = class_count;
    out.spec.validate();
    for (const auto& e : layout(out.spec)) {
        if (!is_head_parameter(e.name)) continue;
        out.params[e.name] = ParamArray{e.shape, init_values(e, seed), true};
    }
    return out;
}

ModelCheckpoint set_trainable(const ModelCheckpoint& model, TrainablePolicy policy) {
    ModelCheckpoint out = model;
    for (auto& [name, p] : out.params) {
        const bool head = is_head_parameter(name);
        switch (policy) {
            case TrainablePolicy::all: p.trainable = true; break;
            case TrainablePolicy::head_only: p.trainable = head; break;
            case TrainablePolicy::backbone_only: p.trainable = !head; break;
        }
    }
    return out;
}

void advance_stage(TrainingMeta& meta, Stage next) {
    if (meta.stage && static_cast<int>(next) <= static_cast<int>(*meta.stage)) {
        throw ConfigError("checkpoint stage cannot move from " + std::string(to_string(*meta.stage)) + " to " +
                          std::string(to_string(next)));
    }
    meta.stage = next;
}

BoundParams bind(const ModelCheckpoint& model, bool track_grad) {
    BoundParams out;
    for (const auto& [name, p] : model.params) {
        out[name] = ad::Tensor::from(p.shape, p.values, track_grad && p.trainable);
    }
    return out;
}

namespace {

const ad::Tensor& param(const BoundParams& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
    return it->second;
}

ad::Tensor linear(const BoundParams& params, const std::string& prefix, const ad::Tensor& x, bool bias = true) {
    ad::Tensor y = ad::matmul(x, param(params, prefix + ".weight"));
    return bias ? ad::add(y, param(params, prefix + ".bias")) : y;
}

ad::Tensor conv(const BoundParams& params, const std::string& prefix, const ad::Tensor& x, std::size_t k) {
    return ad::conv2d(x, param(params, prefix + ".weight"), param(params, prefix + ".bias"), k / 2);
}

class Dropout {
public:
    Dropout(const ForwardOptions& o, double spec_p)
        : mode_(o.mode), seed_(o.dropout_seed), p_(o.dropout_p >= 0.0 ? o.dropout_p : spec_p) {}

    ad::Tensor operator()(const ad::Tensor& x) {
        const std::uint64_t site = site_++;
        if (mode_ == loss::Mode::eval || p_ == 0.0) return x;
        return ad::mul(x, loss::dropout_mask(x.shape(), p_, derive_seed(seed_, {site}), mode_));
    }

private:
    loss::Mode mode_;
    std::uint64_t seed_;
    double p_;
    std::uint64_t site_ = 0;
};

ad::Tensor flatten_rows(const ad::Tensor& x) {
    const std::size_t n = x.extent(0);
    return ad::reshape(x, {n, x.numel() / n});
}

ad::Tensor check_batch(const ModelSpec& spec, const ad::Tensor& batch) {
    if (!batch.defined() || batch.dim() < 1) throw ShapeError("forward: empty batch");
    const std::size_t n = batch.extent(0);
    ad::Shape expected{n};
    expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
    if (batch.shape() == expected) return batch;
    if (spec.family == Family::mlp && batch.numel() == n * spec.input_numel()) {
        return ad::reshape(batch, {n, spec.input_numel()});
    }
    throw ShapeError("forward (" + std::string(to_string(spec.family)) + "): batch shape " +
                     ad::to_string(batch.shape()) + " does not match input " + ad::to_string(expected));
}

}  // namespace

PredcoderOutput predcoder_forward(const ModelCheckpoint& model, const BoundParams& params, const ad::Tensor& frames,
                                  const ForwardOptions& options) {
    const auto& s = model.spec;
    if (s.family != Family::predcoder) throw ConfigError("predcoder_forward: model is not a predcoder");
    if (frames.dim() == 5 && frames.extent(1) < 2) {
        throw ShapeError("predcoder_forward: at least two frames required, got " + ad::to_string(frames.shape()));
    }
    const ad::Tensor x = check_batch(s, frames);
    const std::size_t N = x.extent(0), T = x.extent(1), C = x.extent(2), H = x.extent(3), W = x.extent(4);
    const auto ch = pc_channels(s);
    const std::size_t L = ch.layers();
    const std::size_t k = s.kernel_size;

    std::vector<ad::Tensor> R(L), E(L);
    for (std::size_t l = 0; l < L; ++l) {
        R[l] = ad::Tensor::zeros({N, ch.r[l], H, W});
        E[l] = ad::Tensor::zeros({N, 2 * ch.a[l], H, W});
    }
    PredcoderOutput out;
    for (std::size_t t = 0; t < T; ++t) {
        // Top-down representation update from the previous errors.
        for (std::size_t li = L; li-- > 0;) {
            std::vector<ad::Tensor> parts{R[li], E[li]};
            if (li + 1 < L) parts.push_back(R[li + 1]);
            const ad::Tensor in = ad::concat(parts, 1);
            const std::string pre = "pc" + std::to_string(li);
            const ad::Tensor z = ad::sigmoid(conv(params, pre + ".z", in, k));
            const ad::Tensor h = ad::tanh(conv(params, pre + ".h", in, k));
            R[li] = ad::add(R[li], ad::mul(z, ad::sub(h, R[li])));
        }
        // Bottom-up predictions and errors.
        ad::Tensor A = ad::reshape(ad::slice(x, 1, t, t + 1), {N, C, H, W});
        std::vector<ad::Tensor> errors;
        for (std::size_t l = 0; l < L; ++l) {
            const std::string pre = "pc" + std::to_string(l);
            // Layer 0 predicts pixels in [0,1]; a sigmoid cannot go dead the way a ReLU can.
            const ad::Tensor pre_act = conv(params, pre + ".ahat", R[l], k);
            const ad::Tensor a_hat = l == 0 ? ad::sigmoid(pre_act) : ad::relu(pre_act);
            const std::vector<ad::Tensor> split{ad::relu(ad::sub(A, a_hat)), ad::relu(ad::sub(a_hat, A))};
            E[l] = ad::concat(split, 1);
            errors.push_back(E[l]);
            if (l == 0 && t > 0) {
                out.predictions.push_back(a_hat);
                out.targets.push_back(A);
            }
            if (l + 1 < L) A = ad::relu(conv(params, pre + ".a", E[l], k));
        }
        out.errors.push_back(std::move(errors));
    }
    out.first_layer = ad::mean(ad::reshape(R[0], {N, ch.r[0], H * W}), 2);
    Dropout dropout(options, s.dropout_p);
    out.logits = linear(params, "head", dropout(out.first_layer));
    return out;
}

ForwardResult forward(const ModelCheckpoint& model, const BoundParams& params, const ad::Tensor& batch,
                      const ForwardOptions& options) {
    const auto& s = model.spec;
    ForwardResult res;
    if (s.family == Family::predcoder) {
        auto pc = predcoder_forward(model, params, batch, options);
        res.activations["first_layer"] = pc.first_layer;
        res.logits = pc.logits;
        res.activations["logits"] = res.logits;
        return res;
    }
    ad::Tensor x = check_batch(s, batch);
    const std::size_t n = x.extent(0);
    Dropout dropout(options, s.dropout_p);
    switch (s.family) {
        case Family::mlp: {
            x = ad::reshape(x, {n, s.input_numel()});
            for (std::size_t i = 0; i < s.hidden.size(); ++i) {
                x = dropout(ad::relu(linear(params, "fc" + std::to_string(i), x)));
                res.activations["hidden" + std::to_string(i)] = x;
            }
            break;
        }
        case Family::cnn: {
            for (std::size_t i = 0; i < s.hidden.size(); ++i) {
                x = dropout(ad::relu(conv(params, "conv" + std::to_string(i), x, s.kernel_size)));
                res.activations["conv" + std::to_string(i)] = flatten_rows(x);
            }
            if (s.pool_grid > 0) {
                const std::size_t C = x.extent(1), g = s.pool_grid, bh = x.extent(2) / g, bw = x.extent(3) / g;
                const std::size_t order[] = {0, 1, 2, 4, 3, 5};
                x = ad::permute(ad::reshape(x, {n, C, g, bh, g, bw}), order);
                x = ad::mean(ad::reshape(x, {n, C * g * g, bh * bw}), 2);
                res.activations["pooled"] = x;
            }
            x = flatten_rows(x);
            break;
        }
        case Family::attention: {
            const std::size_t C = s.input_shape[0], H = s.input_shape[1], W = s.input_shape[2];
            const std::size_t p = s.patch_size, gh = H / p, gw = W / p, P = gh * gw, E = s.embed_dim;
            const std::size_t order[] = {0, 2, 4, 1, 3, 5};
            ad::Tensor patches = ad::permute(ad::reshape(x, {n, C, gh, p, gw, p}), order);
            patches = ad::reshape(patches, {n * P, C * p * p});
            x = ad::add(ad::reshape(linear(params, "patch", patches), {n, P, E}), param(params, "pos"));
            res.activations["embed"] = flatten_rows(x);
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(E));
            const std::size_t swap_last[] = {0, 2, 1};
            for (std::size_t b = 0; b < s.blocks; ++b) {
                const std::string pre = "block" + std::to_string(b);
                const ad::Tensor flat = ad::reshape(x, {n * P, E});
                const ad::Tensor q = ad::reshape(linear(params, pre + ".q", flat, false), {n, P, E});
                const ad::Tensor kk = ad::reshape(linear(params, pre + ".k", flat, false), {n, P, E});
                const ad::Tensor v = ad::reshape(linear(params, pre + ".v", flat, false), {n, P, E});
                const ad::Tensor attn = ad::softmax(ad::scale(ad::matmul(q, ad::permute(kk, swap_last)), inv_sqrt));
                res.activations[pre + ".attn"] = ad::reshape(attn, {n, P * P});
                const ad::Tensor mixed = ad::reshape(ad::matmul(attn, v), {n * P, E});
                ad::Tensor h = ad::add(flat, linear(params, pre + ".o", mixed, false));
                h = ad::add(h, dropout(ad::relu(linear(params, pre + ".ff", h))));
                x = ad::reshape(h, {n, P, E});
                res.activations[pre] = flatten_rows(x);
            }
            x = ad::mean(x, 1);
            res.activations["pooled"] = x;
            break;
        }
        case Family::predcoder:
            break;
    }
    res.logits = linear(params, "head", x);
    res.activations["logits"] = res.logits;
    return res;
}

ad::Tensor predict_logits(const ModelCheckpoint& model, const ad::Tensor& batch) {
    return forward(model, bind(model, false), batch).logits;
}

std::vector<std::string> activation_names(const ModelSpec& s) {
    std::vector<std::string> out;
    switch (s.family) {
        case Family::mlp:
            for (std::size_t i = 0; i < s.hidden.size(); ++i) out.push_back("hidden" + std::to_string(i));
            break;
        case Family::cnn:
            for (std::size_t i = 0; i < s.hidden.size(); ++i) out.push_back("conv" + std::to_string(i));
            if (s.pool_grid > 0) out.push_back("pooled");
            break;
        case Family::attention:
            out.push_back("embed");
            for (std::size_t b = 0; b < s.blocks; ++b) {
                out.push_back("block" + std::to_string(b));
                out.push_back("block" + std::to_string(b) + ".attn");
            }
            out.push_back("pooled");
            break;
        case Family::predcoder:
            out.push_back("first_layer");
            break;
    }
    out.push_back("logits");
    return out;
}

ad::Tensor extract_activations(const ModelCheckpoint& model, const ad::Tensor& batch, const std::string& layer) {
    const auto names = activation_names(model.spec);
    if (std::find(names.begin(), names.end(), layer) == names.end()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("unknown layer '" + layer + "'; available: " + list);
    }
    auto res = forward(model, bind(model, false), batch);
    return res.activations.at(layer);
}

void save_checkpoint(const fs::path& path, const ModelCheckpoint& model) {
    model.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path blob = fs::path(path).replace_extension(".bin");
    std::vector<data::BlobArray> arrays;
    arrays.reserve(model.params.size());
    std::vector<std::pair<std::string, const data::BlobArray*>> named;
    json trainable = json::object();
    for (const auto& [name, p] : model.params) {
        arrays.push_back({p.shape, p.values});
        trainable[name] = p.trainable;
    }
    std::size_t i = 0;
    for (const auto& [name, p] : model.params) named.emplace_back(name, &arrays[i++]);
    json meta = {{"seed", model.meta.seed}, {"epoch", model.meta.epoch}, {"dataset", model.meta.dataset}};
    meta["stage"] = model.meta.stage ? json(std::string(to_string(*model.meta.stage))) : json(nullptr);
    json doc = {{"format_version", 1},
                {"spec", to_json(model.spec)},
                {"meta", std::move(meta)},
                {"trainable", std::move(trainable)},
                {"blob", blob.filename().string()},
                {"params", data::write_blob(blob, named)}};
    data::write_json_file(path, doc);
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
    const json doc = data::read_json_file(path);
    data::require_format_version(doc, "checkpoint");
    ModelCheckpoint m;
    try {
        m.spec = model_spec_from_json(doc.at("spec"));
        const auto& meta = doc.at("meta");
        m.meta.seed = meta.at("seed").get<std::uint64_t>();
        m.meta.epoch = meta.at("epoch").get<std::size_t>();
        m.meta.dataset = meta.at("dataset").get<std::string>();
        if (!meta.at("stage").is_null()) m.meta.stage = parse_stage(meta["stage"].get<std::string>());
        const fs::path blob = path.parent_path() / doc.at("blob").get<std::string>();
        for (auto& [name, arr] : data::read_blob(blob, doc.at("params"))) {
            ParamArray p{arr.shape, std::move(arr.values), true};
            if (doc.contains("trainable") && doc["trainable"].contains(name)) {
                p.trainable = doc["trainable"][name].get<bool>();
            }
            m.params.emplace(name, std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint " + path.string() + ": " + e.what());
    }
    m.validate();
    return m;
}

std::uint64_t checksum(const ModelCheckpoint& model, const std::vector<std::string>& names) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const ParamArray& p) {
        for (double v : p.values) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        }
    };
    if (names.empty()) {
        for (const auto& [name, p] : model.params) feed(p);
    } else {
        for (const auto& name : names) {
            auto it = model.params.find(name);
            if (it == model.params.end()) throw ConfigError("checksum: no parameter '" + name + "'");
            feed(it->second);
        }
    }
    return h;
}

}  // namespace percep::models
