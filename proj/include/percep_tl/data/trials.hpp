#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "percep_tl/data/annotations.hpp"
#include "percep_tl/data/dataset.hpp"

namespace percep::data {

// Answer index used for "no candidate matches" in match-to-sample trials.
inline constexpr int kRejectAnswer = -1;

// stimuli[0] is the target sample. match6: stimuli[1..6] are the candidates and
// the answer is a candidate index 0..5 or reject. afc2: stimuli[1] is the
// comparison and the answer is 0 (same class) or 1 (different). transcription:
// the answer is the target's class label.
struct Trial {
    std::string trial_id;
    TrialKind kind = TrialKind::match6;
    std::vector<std::string> stimuli;
    int correct_answer = 0;
    std::uint64_t order_seed = 0;
    // Class of the target; exported for balance checks.
    std::size_t target_class = 0;

    bool positive() const;

    bool operator==(const Trial&) const = default;
};

struct TrialManifest {
    std::string dataset;
    TrialKind kind = TrialKind::match6;
    std::uint64_t seed = 0;
    std::size_t class_count = 0;
    double fixation_ms = 500.0;
    double inter_trial_ms = 500.0;
    std::vector<Trial> trials;

    // Answer indices valid for each trial kind, classes and match polarity balanced (within one).
    void validate() const;

    bool operator==(const TrialManifest&) const = default;
};

// Targets are distinct samples; classes get count/K trials each (remainder to
// the lowest classes); half the match6/afc2 trials are positive.
TrialManifest generate_trials(const DatasetManifest& manifest, TrialKind kind, std::size_t count,
                              std::uint64_t seed);

nlohmann::json to_json(const TrialManifest& manifest);
TrialManifest trial_manifest_from_json(const nlohmann::json& doc);
void save_trial_manifest(const std::filesystem::path& path, const TrialManifest& manifest);
TrialManifest load_trial_manifest(const std::filesystem::path& path);

}  // namespace percep::data
