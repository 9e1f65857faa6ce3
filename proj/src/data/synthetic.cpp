#include "percep_tl/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::data {

using nlohmann::json;

namespace {

constexpr double kEasyDifficultyMax = 0.2;
constexpr double kEasyAlphaMax = 0.05;
constexpr double kHardAlphaMin = 0.4;
constexpr int kMaxRejections = 10000;

std::string sample_name(const std::string& prefix, std::size_t cls, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "-c%zu-%04zu", cls, index);
    return prefix + buf;
}

json splits_json(const SplitFractions& f) {
    return {{"train", f.train}, {"val", f.val}, {"test", f.test}};
}

SplitFractions splits_from_json(const json& doc) {
    SplitFractions f;
    if (doc.is_object()) {
        f.train = doc.value("train", f.train);
        f.val = doc.value("val", f.val);
        f.test = doc.value("test", f.test);
    }
    return f;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Class means for the shared layout: orthogonal when they fit, otherwise
// random directions; every mean has norm separation / sqrt(2).
std::vector<std::vector<double>> class_means(std::size_t total, std::size_t dim, double separation,
                                             std::uint64_t geometry_seed) {
    Rng rng(derive_seed(geometry_seed, "class-means"));
    std::vector<std::vector<double>> rows(total, std::vector<double>(dim));
    for (auto& r : rows) {
        for (auto& v : r) v = rng.normal();
    }
    if (total <= dim) {
        for (std::size_t i = 0; i < total; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                const double p = dot(rows[i], rows[j]);
                for (std::size_t d = 0; d < dim; ++d) rows[i][d] -= p * rows[j][d];
            }
            const double n = std::sqrt(dot(rows[i], rows[i]));
            for (auto& v : rows[i]) v /= n;
        }
    } else {
        for (auto& r : rows) {
            const double n = std::sqrt(dot(r, r));
            for (auto& v : r) v /= n;
        }
    }
    const double radius = separation / std::sqrt(2.0);
    for (auto& r : rows) {
        for (auto& v : r) v *= radius;
    }
    return rows;
}

double geometric_difficulty(std::span<const double> x, std::size_t own,
                            const std::vector<std::vector<double>>& means) {
    double worst = 0.0;
    const auto& mu = means[own];
    for (std::size_t k = 0; k < means.size(); ++k) {
        if (k == own) continue;
        double num = 0.0;
        double den = 0.0;
        for (std::size_t d = 0; d < x.size(); ++d) {
            const double delta = means[k][d] - mu[d];
            num += (x[d] - mu[d]) * delta;
            den += delta * delta;
        }
        worst = std::max(worst, 2.0 * num / den);
    }
    return std::clamp(worst, 0.0, 1.0);
}

}  // namespace

void SyntheticSpec::validate() const {
    if (class_count < 2) throw ConfigError("synthetic dataset: class_count must be at least 2");
    if (samples_per_class < 1) throw ConfigError("synthetic dataset: samples_per_class must be positive");
    if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) {
        throw ConfigError("synthetic dataset: hard_fraction must lie in [0,1]");
    }
    if (!(class_separation > 0.0)) throw ConfigError("synthetic dataset: class_separation must be positive");
    if (!(noise_sd >= 0.0)) throw ConfigError("synthetic dataset: noise_sd must be nonnegative");
    if (!(boundary_overlap >= 0.0 && boundary_overlap <= 0.5)) {
        throw ConfigError("synthetic dataset: boundary_overlap must lie in [0,0.5]");
    }
    if (mode == FeatureMode::vector && feature_dim < 1) {
        throw ConfigError("synthetic dataset: feature_dim must be positive");
    }
    if (mode == FeatureMode::image) {
        if (image_size < 6) throw ConfigError("synthetic dataset: image_size must be at least 6");
        if (first_class + class_count > glyph_count()) {
            throw ConfigError("synthetic dataset: image mode supports " + std::to_string(glyph_count()) +
                              " glyph classes");
        }
    }
}

json to_json(const SyntheticSpec& s) {
    return {{"kind", s.mode == FeatureMode::vector ? "vector" : "image"},
            {"name", s.name},
            {"class_count", s.class_count},
            {"samples_per_class", s.samples_per_class},
            {"feature_dim", s.feature_dim},
            {"image_size", s.image_size},
            {"class_separation", s.class_separation},
            {"hard_fraction", s.hard_fraction},
            {"boundary_overlap", s.boundary_overlap},
            {"noise_sd", s.noise_sd},
            {"first_class", s.first_class},
            {"geometry_seed", s.geometry_seed},
            {"splits", splits_json(s.splits)}};
}

SyntheticSpec synthetic_spec_from_json(const json& doc) {
    SyntheticSpec s;
    try {
        const auto kind = doc.value("kind", std::string("vector"));
        if (kind == "vector") {
            s.mode = FeatureMode::vector;
        } else if (kind == "image") {
            s.mode = FeatureMode::image;
        } else {
            throw ConfigError("synthetic dataset: unknown kind '" + kind + "'");
        }
        s.name = doc.value("name", s.name);
        s.class_count = doc.value("class_count", s.class_count);
        s.samples_per_class = doc.value("samples_per_class", s.samples_per_class);
        s.feature_dim = doc.value("feature_dim", s.feature_dim);
        s.image_size = doc.value("image_size", s.image_size);
        s.class_separation = doc.value("class_separation", s.class_separation);
        s.hard_fraction = doc.value("hard_fraction", s.hard_fraction);
        s.boundary_overlap = doc.value("boundary_overlap", s.boundary_overlap);
        s.noise_sd = doc.value("noise_sd", s.noise_sd);
        s.first_class = doc.value("first_class", s.first_class);
        s.geometry_seed = doc.value("geometry_seed", s.geometry_seed);
        s.splits = splits_from_json(doc.value("splits", json()));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synthetic dataset spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::size_t glyph_count() { return 12; }

std::vector<double> render_glyph(std::size_t glyph, std::size_t size) {
    const auto S = static_cast<long>(size);
    const long c = S / 2;
    std::vector<double> img(size * size, 0.0);
    auto on = [&](long i, long j) {
        if (i >= 0 && j >= 0 && i < S && j < S) img[static_cast<std::size_t>(i * S + j)] = 1.0;
    };
    for (long i = 0; i < S; ++i) {
        for (long j = 0; j < S; ++j) {
            const bool inner = i >= 1 && j >= 1 && i <= S - 2 && j <= S - 2;
            bool v = false;
            switch (glyph) {
                case 0: v = inner && (i == c || i == c - 1); break;                  // horizontal bar
                case 1: v = inner && (j == c || j == c - 1); break;                  // vertical bar
                case 2: v = inner && i == j; break;                                  // diagonal
                case 3: v = inner && i + j == S - 1; break;                          // anti-diagonal
                case 4: v = inner && (i == c || j == c); break;                      // plus
                case 5: v = inner && (i == 1 || j == 1 || i == S - 2 || j == S - 2); break;  // frame
                case 6: v = i >= S / 4 && i < S - S / 4 && j >= S / 4 && j < S - S / 4; break;
                case 7: v = inner && (i == j || i + j == S - 1); break;              // cross
                case 8: v = inner && (j == 1 || i == S - 2); break;                  // L
                case 9: v = inner && (i == 1 || j == c); break;                      // T
                case 10: {                                                           // ring
                    const double di = static_cast<double>(i) - (static_cast<double>(S) - 1) / 2;
                    const double dj = static_cast<double>(j) - (static_cast<double>(S) - 1) / 2;
                    v = std::fabs(std::sqrt(di * di + dj * dj) - static_cast<double>(S) / 3.0) < 0.75;
                    break;
                }
                case 11: v = (i < 2 || i >= S - 2) && (j < 2 || j >= S - 2); break;  // corners
                default: throw ConfigError("unknown glyph " + std::to_string(glyph));
            }
            if (v) on(i, j);
        }
    }
    return img;
}

Dataset gen_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::uint64_t geometry = spec.geometry_seed ? spec.geometry_seed : seed;
    Dataset ds;
    ds.manifest.name = spec.name;
    ds.manifest.class_count = spec.class_count;
    ds.manifest.generator = to_json(spec);
    ds.manifest.generator["seed"] = seed;
    const std::size_t K = spec.class_count;
    const auto n_hard = static_cast<std::size_t>(
        std::llround(spec.hard_fraction * static_cast<double>(spec.samples_per_class)));

    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> glyphs;
    if (spec.mode == FeatureMode::vector) {
        ds.manifest.sample_shape = {spec.feature_dim};
        auto all = class_means(spec.first_class + K, spec.feature_dim, spec.class_separation, geometry);
        means.assign(all.begin() + static_cast<std::ptrdiff_t>(spec.first_class), all.end());
    } else {
        ds.manifest.sample_shape = {1, spec.image_size, spec.image_size};
        for (std::size_t k = 0; k < K; ++k) glyphs.push_back(render_glyph(spec.first_class + k, spec.image_size));
    }
    const std::size_t dim = ad::numel(ds.manifest.sample_shape);

    for (std::size_t cls = 0; cls < K; ++cls) {
        Rng rng(derive_seed(seed, {0xda7aULL, cls}));
        std::vector<char> hard(spec.samples_per_class, 0);
        std::fill_n(hard.begin(), n_hard, 1);
        rng.shuffle(std::span<char>(hard));
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            std::vector<double> x(dim);
            double difficulty = 0.0;
            // Another class of this dataset to blend towards.
            std::size_t other = static_cast<std::size_t>(rng.below(K - 1));
            if (other >= cls) ++other;
            const double alpha = hard[i] ? rng.uniform(kHardAlphaMin, 0.5 + spec.boundary_overlap)
                                         : rng.uniform(0.0, kEasyAlphaMax);
            if (spec.mode == FeatureMode::vector) {
                const auto& mu = means[cls];
                if (hard[i]) {
                    std::vector<double> delta(dim);
                    double dd = 0.0;
                    for (std::size_t d = 0; d < dim; ++d) {
                        delta[d] = means[other][d] - mu[d];
                        dd += delta[d] * delta[d];
                    }
                    std::vector<double> noise(dim);
                    for (auto& v : noise) v = spec.noise_sd * rng.normal();
                    const double p = dot(noise, delta) / dd;
                    for (std::size_t d = 0; d < dim; ++d) {
                        x[d] = mu[d] + alpha * delta[d] + noise[d] - p * delta[d];
                    }
                    difficulty = geometric_difficulty(x, cls, means);
                } else {
                    int tries = 0;
                    do {
                        if (++tries > kMaxRejections) {
                            throw ConfigError("synthetic dataset: class_separation too small relative to "
                                              "noise_sd for an easy class core");
                        }
                        for (std::size_t d = 0; d < dim; ++d) x[d] = mu[d] + spec.noise_sd * rng.normal();
                        difficulty = geometric_difficulty(x, cls, means);
                    } while (difficulty >= kEasyDifficultyMax);
                }
            } else {
                const auto S = static_cast<long>(spec.image_size);
                const long dy = static_cast<long>(rng.below(3)) - 1;
                const long dx = static_cast<long>(rng.below(3)) - 1;
                for (long r = 0; r < S; ++r) {
                    for (long c = 0; c < S; ++c) {
                        const long sr = ((r - dy) % S + S) % S;
                        const long sc = ((c - dx) % S + S) % S;
                        const auto src = static_cast<std::size_t>(sr * S + sc);
                        const double clean = (1.0 - alpha) * glyphs[cls][src] + alpha * glyphs[other][src];
                        x[static_cast<std::size_t>(r * S + c)] =
                            spec.class_separation * clean + spec.noise_sd * rng.normal();
                    }
                }
                difficulty = std::min(1.0, 2.0 * alpha);
            }
            SampleEntry e;
            e.sample_id = sample_name(spec.name, cls, i);
            e.class_label = cls;
            e.difficulty = difficulty;
            ds.manifest.samples.push_back(std::move(e));
            ds.features.insert(ds.features.end(), x.begin(), x.end());
        }
    }
    assign_splits(ds.manifest, spec.splits, derive_seed(seed, "splits"));
    ds.manifest.validate();
    return ds;
}

std::string_view to_string(Motion m) {
    switch (m) {
        case Motion::none: return "none";
        case Motion::right: return "right";
        case Motion::left: return "left";
        case Motion::down: return "down";
        case Motion::up: return "up";
        case Motion::diagonal: return "diagonal";
    }
    return "none";
}

Motion parse_motion(std::string_view text) {
    for (auto m : {Motion::none, Motion::right, Motion::left, Motion::down, Motion::up, Motion::diagonal}) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown motion kind '" + std::string(text) + "'");
}

std::pair<int, int> velocity(Motion m) {
    switch (m) {
        case Motion::none: return {0, 0};
        case Motion::right: return {1, 0};
        case Motion::left: return {-1, 0};
        case Motion::down: return {0, 1};
        case Motion::up: return {0, -1};
        case Motion::diagonal: return {1, 1};
    }
    return {0, 0};
}

void SequenceSpec::validate() const {
    if (frames < 2) throw ConfigError("sequence dataset: at least 2 frames required");
    if (image_size < 2) throw ConfigError("sequence dataset: image_size must be at least 2");
    if (motions.empty()) throw ConfigError("sequence dataset: at least one motion kind required");
    if (samples_per_motion < 1) throw ConfigError("sequence dataset: samples_per_motion must be positive");
    if (shape_size < 1 || shape_size > image_size) {
        throw ConfigError("sequence dataset: shape_size must lie in [1, image_size]");
    }
    if (!(noise_sd >= 0.0)) throw ConfigError("sequence dataset: noise_sd must be nonnegative");
}

json to_json(const SequenceSpec& s) {
    json motions = json::array();
    for (auto m : s.motions) motions.push_back(std::string(to_string(m)));
    return {{"kind", "sequence"},
            {"name", s.name},
            {"frames", s.frames},
            {"image_size", s.image_size},
            {"motions", motions},
            {"samples_per_motion", s.samples_per_motion},
            {"shape_size", s.shape_size},
            {"noise_sd", s.noise_sd},
            {"splits", splits_json(s.splits)}};
}

SequenceSpec sequence_spec_from_json(const json& doc) {
    SequenceSpec s;
    try {
        s.name = doc.value("name", s.name);
        s.frames = doc.value("frames", s.frames);
        s.image_size = doc.value("image_size", s.image_size);
        if (doc.contains("motions")) {
            s.motions.clear();
            for (const auto& m : doc["motions"]) s.motions.push_back(parse_motion(m.get<std::string>()));
        }
        s.samples_per_motion = doc.value("samples_per_motion", s.samples_per_motion);
        s.shape_size = doc.value("shape_size", s.shape_size);
        s.noise_sd = doc.value("noise_sd", s.noise_sd);
        s.splits = splits_from_json(doc.value("splits", json()));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("sequence dataset spec: ") + e.what());
    }
    s.validate();
    return s;
}

Dataset gen_synthetic_sequences(const SequenceSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset ds;
    const std::size_t T = spec.frames;
    const std::size_t S = spec.image_size;
    ds.manifest.name = spec.name;
    ds.manifest.class_count = spec.motions.size();
    ds.manifest.sample_shape = {T, 1, S, S};
    ds.manifest.sequence_length = T;
    ds.manifest.generator = to_json(spec);
    ds.manifest.generator["seed"] = seed;
    const auto Sl = static_cast<long>(S);
    for (std::size_t cls = 0; cls < spec.motions.size(); ++cls) {
        const auto [vx, vy] = velocity(spec.motions[cls]);
        Rng rng(derive_seed(seed, {0x5e9ULL, cls}));
        for (std::size_t i = 0; i < spec.samples_per_motion; ++i) {
            const auto top = static_cast<long>(rng.below(S));
            const auto left = static_cast<long>(rng.below(S));
            std::vector<double> frame0(S * S, 0.0);
            for (std::size_t a = 0; a < spec.shape_size; ++a)
                for (std::size_t b = 0; b < spec.shape_size; ++b)
                    frame0[static_cast<std::size_t>(((top + static_cast<long>(a)) % Sl) * Sl +
                                                    (left + static_cast<long>(b)) % Sl)] = 1.0;
            for (std::size_t t = 0; t < T; ++t) {
                const long sy = static_cast<long>(t) * vy;
                const long sx = static_cast<long>(t) * vx;
                for (long r = 0; r < Sl; ++r) {
                    for (long c = 0; c < Sl; ++c) {
                        const long r0 = ((r - sy) % Sl + Sl) % Sl;
                        const long c0 = ((c - sx) % Sl + Sl) % Sl;
                        double v = frame0[static_cast<std::size_t>(r0 * Sl + c0)];
                        if (spec.noise_sd > 0.0) v += spec.noise_sd * rng.normal();
                        ds.features.push_back(v);
                    }
                }
            }
            SampleEntry e;
            e.sample_id = sample_name(spec.name, cls, i);
            e.class_label = cls;
            ds.manifest.samples.push_back(std::move(e));
        }
    }
    assign_splits(ds.manifest, spec.splits, derive_seed(seed, "splits"));
    ds.manifest.validate();
    return ds;
}

void AnnotatorParams::validate() const {
    if (!(rt_min_ms > 0.0) || !(rt_min_ms < rt_max_ms)) {
        throw ConfigError("annotator: require 0 < rt_min_ms < rt_max_ms");
    }
    if (!(noise_sd_ms >= 0.0)) throw ConfigError("annotator: noise_sd_ms must be nonnegative");
    if (!(error_slope >= 0.0 && error_slope <= 1.0)) {
        throw ConfigError("annotator: error_slope must lie in [0,1]");
    }
    if (annotators < 1) throw ConfigError("annotator: at least one annotator required");
}

json to_json(const AnnotatorParams& p) {
    return {{"rt_min_ms", p.rt_min_ms},     {"rt_max_ms", p.rt_max_ms},
            {"noise_sd_ms", p.noise_sd_ms}, {"error_slope", p.error_slope},
            {"annotators", p.annotators},   {"trial_kind", std::string(to_string(p.trial_kind))}};
}

AnnotatorParams annotator_params_from_json(const json& doc) {
    AnnotatorParams p;
    try {
        p.rt_min_ms = doc.value("rt_min_ms", p.rt_min_ms);
        p.rt_max_ms = doc.value("rt_max_ms", p.rt_max_ms);
        p.noise_sd_ms = doc.value("noise_sd_ms", p.noise_sd_ms);
        p.error_slope = doc.value("error_slope", p.error_slope);
        p.annotators = doc.value("annotators", p.annotators);
        const auto kind = doc.value("trial_kind", std::string("match6"));
        const auto parsed = parse_trial_kind(kind);
        if (!parsed) throw ConfigError("annotator: unknown trial_kind '" + kind + "'");
        p.trial_kind = *parsed;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("annotator params: ") + e.what());
    }
    p.validate();
    return p;
}

std::vector<AnnotationRecord> simulate_annotator(const DatasetManifest& manifest,
                                                 std::span<const double> difficulty,
                                                 const AnnotatorParams& params, std::uint64_t seed) {
    params.validate();
    if (difficulty.size() != manifest.samples.size()) {
        throw ConfigError("simulate_annotator: difficulty must be given for every sample (" +
                          std::to_string(manifest.samples.size()) + " samples, " +
                          std::to_string(difficulty.size()) + " values)");
    }
    std::vector<AnnotationRecord> records;
    records.reserve(params.annotators * difficulty.size());
    for (std::size_t a = 0; a < params.annotators; ++a) {
        Rng rng(derive_seed(seed, {0xa770ULL, a}));
        char id[32];
        std::snprintf(id, sizeof id, "sim-%02zu", a);
        for (std::size_t i = 0; i < difficulty.size(); ++i) {
            const double d = difficulty[i];
            if (!(d >= 0.0 && d <= 1.0)) {
                throw ConfigError("simulate_annotator: difficulty outside [0,1] for sample " +
                                  manifest.samples[i].sample_id);
            }
            double rt = params.rt_min_ms + (params.rt_max_ms - params.rt_min_ms) * d +
                        params.noise_sd_ms * rng.normal();
            rt = std::clamp(rt, params.rt_min_ms / 2.0, 2.0 * params.rt_max_ms);
            const bool wrong = rng.bernoulli(params.error_slope * d);
            AnnotationRecord r;
            r.sample_id = manifest.samples[i].sample_id;
            r.class_label = manifest.samples[i].class_label;
            r.reaction_time_ms = rt;
            r.responder_correct = !wrong;
            r.trial_kind = params.trial_kind;
            r.annotator_id = id;
            records.push_back(std::move(r));
        }
    }
    return records;
}

}  // namespace percep::data
