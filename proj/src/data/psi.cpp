#include "percep_tl/data/psi.hpp"

#include <algorithm>
#include <cmath>

#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"

namespace percep::data {

using nlohmann::json;

namespace {

const char* ceiling_name(RtCeiling c) {
    switch (c) {
        case RtCeiling::global_max: return "global_max";
        case RtCeiling::per_class_max: return "per_class_max";
        case RtCeiling::per_sample_max: return "per_sample_max";
        case RtCeiling::fixed: return "fixed";
    }
    return "global_max";
}

RtCeiling parse_ceiling(const std::string& s) {
    if (s == "global_max") return RtCeiling::global_max;
    if (s == "per_class_max") return RtCeiling::per_class_max;
    if (s == "per_sample_max") return RtCeiling::per_sample_max;
    if (s == "fixed") return RtCeiling::fixed;
    throw ConfigError("unknown ψ ceiling '" + s + "'");
}

double aggregate(std::vector<double> rts, RtAggregation how) {
    if (how == RtAggregation::mean) {
        double s = 0.0;
        for (double v : rts) s += v;
        return s / static_cast<double>(rts.size());
    }
    std::sort(rts.begin(), rts.end());
    const std::size_t n = rts.size();
    return n % 2 ? rts[n / 2] : 0.5 * (rts[n / 2 - 1] + rts[n / 2]);
}

struct SampleRts {
    std::size_t class_label = 0;
    std::vector<double> kept;
    double slowest = 0.0;
};

}  // namespace

void PsiPolicy::validate() const {
    if (ceiling == RtCeiling::fixed && !(fixed_ceiling_ms > 0.0)) {
        throw ConfigError("ψ policy: fixed ceiling must be positive");
    }
}

double PsiTable::lookup(const std::string& sample_id) const {
    auto it = psi.find(sample_id);
    return it == psi.end() ? 0.0 : it->second;
}

PsiTable compute_psi(const std::vector<AnnotationRecord>& records, const PsiPolicy& policy) {
    policy.validate();
    if (records.empty()) {
        throw ConfigError("compute_psi: no annotation records");
    }
    std::map<std::string, SampleRts> by_sample;
    for (const auto& r : records) {
        if (!(r.reaction_time_ms > 0.0)) {
            throw ConfigError("compute_psi: nonpositive reaction time for sample " + r.sample_id);
        }
        auto& s = by_sample[r.sample_id];
        s.class_label = r.class_label;
        if (!policy.correct_only || r.responder_correct) {
            s.kept.push_back(r.reaction_time_ms);
            s.slowest = std::max(s.slowest, r.reaction_time_ms);
        }
    }
    std::map<std::string, double> aggregated;
    std::map<std::size_t, double> class_max;
    double global_max = 0.0;
    for (const auto& [id, s] : by_sample) {
        if (s.kept.empty()) {
            continue;
        }
        const double rbar = aggregate(s.kept, policy.aggregation);
        aggregated[id] = rbar;
        global_max = std::max(global_max, rbar);
        class_max[s.class_label] = std::max(class_max[s.class_label], rbar);
    }

    PsiTable table;
    table.ceiling = policy.ceiling;
    for (const auto& [id, rbar] : aggregated) {
        double ceiling = global_max;
        switch (policy.ceiling) {
            case RtCeiling::global_max: break;
            case RtCeiling::per_class_max: ceiling = class_max[by_sample[id].class_label]; break;
            case RtCeiling::per_sample_max: ceiling = by_sample[id].slowest; break;
            case RtCeiling::fixed: ceiling = policy.fixed_ceiling_ms; break;
        }
        table.rt_max_ms = std::max(table.rt_max_ms, ceiling);
        table.psi[id] = std::clamp((ceiling - rbar) / ceiling, 0.0, 1.0);
    }
    return table;
}

json to_json(const PsiPolicy& p) {
    return {{"correct_only", p.correct_only},
            {"aggregation", p.aggregation == RtAggregation::mean ? "mean" : "median"},
            {"ceiling", ceiling_name(p.ceiling)},
            {"fixed_ceiling_ms", p.fixed_ceiling_ms}};
}

PsiPolicy psi_policy_from_json(const json& doc) {
    PsiPolicy p;
    if (doc.is_null()) {
        return p;
    }
    p.correct_only = doc.value("correct_only", p.correct_only);
    const auto agg = doc.value("aggregation", std::string("mean"));
    if (agg == "mean") {
        p.aggregation = RtAggregation::mean;
    } else if (agg == "median") {
        p.aggregation = RtAggregation::median;
    } else {
        throw ConfigError("unknown RT aggregation '" + agg + "'");
    }
    p.ceiling = parse_ceiling(doc.value("ceiling", std::string("global_max")));
    p.fixed_ceiling_ms = doc.value("fixed_ceiling_ms", 0.0);
    p.validate();
    return p;
}

json to_json(const PsiTable& t) {
    return {{"format_version", 1},
            {"rt_max_ms", t.rt_max_ms},
            {"ceiling", ceiling_name(t.ceiling)},
            {"psi", t.psi}};
}

PsiTable psi_table_from_json(const json& doc) {
    require_format_version(doc, "ψ table");
    PsiTable t;
    try {
        t.rt_max_ms = doc.at("rt_max_ms").get<double>();
        t.ceiling = parse_ceiling(doc.value("ceiling", std::string("global_max")));
        t.psi = doc.at("psi").get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("ψ table: ") + e.what());
    }
    for (const auto& [id, v] : t.psi) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw FormatError("ψ table: value for '" + id + "' outside [0,1]");
        }
    }
    return t;
}

void save_psi_table(const std::filesystem::path& path, const PsiTable& table) {
    write_json_file(path, to_json(table));
}

PsiTable load_psi_table(const std::filesystem::path& path) {
    return psi_table_from_json(read_json_file(path));
}

}  // namespace percep::data
