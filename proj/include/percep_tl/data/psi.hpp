#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "percep_tl/data/annotations.hpp"

namespace percep::data {

enum class RtAggregation { mean, median };

// Which reaction time ψ is measured against.
enum class RtCeiling {
    global_max,      // largest aggregated RT over all samples
    per_class_max,   // largest aggregated RT within the sample's class
    per_sample_max,  // slowest single response recorded for the sample
    fixed,           // PsiPolicy::fixed_ceiling_ms
};

struct PsiPolicy {
    bool correct_only = true;
    RtAggregation aggregation = RtAggregation::mean;
    RtCeiling ceiling = RtCeiling::global_max;
    double fixed_ceiling_ms = 0.0;

    void validate() const;
};

// Per-sample ψ in [0,1]. Samples absent from the table read as 0.
struct PsiTable {
    std::map<std::string, double> psi;
    // Normalization ceiling; for per-class/per-sample ceilings this is the largest one used.
    double rt_max_ms = 0.0;
    RtCeiling ceiling = RtCeiling::global_max;

    double lookup(const std::string& sample_id) const;
    bool contains(const std::string& sample_id) const { return psi.count(sample_id) != 0; }

    bool operator==(const PsiTable&) const = default;
};

// ψ = (rt_max - r̄) / rt_max clamped to [0,1], r̄ the aggregated RT of the
// records that pass the policy filter. Fully filtered samples are omitted.
PsiTable compute_psi(const std::vector<AnnotationRecord>& records, const PsiPolicy& policy = {});

nlohmann::json to_json(const PsiPolicy& policy);
PsiPolicy psi_policy_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const PsiTable& table);
PsiTable psi_table_from_json(const nlohmann::json& doc);
void save_psi_table(const std::filesystem::path& path, const PsiTable& table);
PsiTable load_psi_table(const std::filesystem::path& path);

}  // namespace percep::data
