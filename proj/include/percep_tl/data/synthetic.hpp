#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "percep_tl/data/annotations.hpp"
#include "percep_tl/data/dataset.hpp"

namespace percep::data {

enum class FeatureMode { vector, image };

// Planted-difficulty classification data.
//
// Vector mode draws class-conditional Gaussian blobs whose means are
// `class_separation` apart. Easy samples come from the class core (difficulty
// below 0.2); hard samples sit on the segment towards another class mean at
// blend fraction alpha in [0.4, 0.5 + boundary_overlap], so some cross the
// boundary. Difficulty is twice the largest projected blend fraction towards
// any other class, clamped to [0,1].
//
// Image mode renders one procedural glyph per class on an image_size square,
// blended with another class's glyph by the same alpha and scaled by
// class_separation over unit pixel noise; difficulty is min(1, 2 alpha).
struct SyntheticSpec {
    std::string name = "synthetic";
    std::size_t class_count = 2;
    std::size_t samples_per_class = 100;
    FeatureMode mode = FeatureMode::vector;
    std::size_t feature_dim = 8;
    std::size_t image_size = 8;
    double class_separation = 6.0;
    double hard_fraction = 0.2;
    double boundary_overlap = 0.1;
    double noise_sd = 1.0;
    // Classes are taken from a shared layout starting at this index, so datasets
    // with the same geometry_seed and disjoint ranges have disjoint classes.
    std::size_t first_class = 0;
    // 0 means "use the generation seed".
    std::uint64_t geometry_seed = 0;
    SplitFractions splits;

    void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);

// Dataset plus per-sample difficulty (also stored in the manifest entries).
Dataset gen_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Number of built-in glyph templates available to image mode.
std::size_t glyph_count();
// Binary glyph for a class index, image_size x image_size, row-major.
std::vector<double> render_glyph(std::size_t glyph, std::size_t image_size);

enum class Motion { none, right, left, down, up, diagonal };

std::string_view to_string(Motion motion);
Motion parse_motion(std::string_view text);
// Pixel displacement per frame as (dx, dy).
std::pair<int, int> velocity(Motion motion);

// Frames of a square translating with constant velocity on a torus. Class
// label is the index of the sample's motion kind. Sample shape {T,1,S,S}.
struct SequenceSpec {
    std::string name = "sequences";
    std::size_t frames = 6;
    std::size_t image_size = 8;
    std::vector<Motion> motions{Motion::none, Motion::right, Motion::down, Motion::diagonal};
    std::size_t samples_per_motion = 20;
    std::size_t shape_size = 2;
    double noise_sd = 0.0;
    SplitFractions splits;

    void validate() const;
};

nlohmann::json to_json(const SequenceSpec& spec);
SequenceSpec sequence_spec_from_json(const nlohmann::json& doc);

Dataset gen_synthetic_sequences(const SequenceSpec& spec, std::uint64_t seed);

struct AnnotatorParams {
    double rt_min_ms = 400.0;
    double rt_max_ms = 2000.0;
    double noise_sd_ms = 100.0;
    double error_slope = 0.3;
    std::size_t annotators = 1;
    TrialKind trial_kind = TrialKind::match6;

    void validate() const;
};

nlohmann::json to_json(const AnnotatorParams& params);
AnnotatorParams annotator_params_from_json(const nlohmann::json& doc);

// One record per (annotator, sample). RT = rt_min + (rt_max - rt_min) d +
// N(0, noise_sd), clamped to [rt_min/2, 2 rt_max]; error probability
// error_slope * d.
std::vector<AnnotationRecord> simulate_annotator(const DatasetManifest& manifest,
                                                 std::span<const double> difficulty,
                                                 const AnnotatorParams& params, std::uint64_t seed);

}  // namespace percep::data
