#include "percep_tl/data/trials.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::data {

using nlohmann::json;

namespace {

std::size_t candidate_count(TrialKind kind) {
    switch (kind) {
        case TrialKind::match6: return 6;
        case TrialKind::afc2: return 1;
        case TrialKind::transcription: return 0;
    }
    return 0;
}

// Draws `n` distinct elements from `pool` without replacement.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(n);
    return pool;
}

}  // namespace

bool Trial::positive() const {
    switch (kind) {
        case TrialKind::match6: return correct_answer != kRejectAnswer;
        case TrialKind::afc2: return correct_answer == 0;
        case TrialKind::transcription: return true;
    }
    return true;
}

void TrialManifest::validate() const {
    if (class_count < 1) throw FormatError("trial manifest: class_count must be positive");
    std::map<std::size_t, std::size_t> per_class;
    std::size_t positives = 0;
    for (const auto& t : trials) {
        if (t.kind != kind) {
            throw FormatError("trial manifest: trial " + t.trial_id + " kind differs from manifest kind");
        }
        if (t.stimuli.size() != 1 + candidate_count(t.kind)) {
            throw FormatError("trial manifest: trial " + t.trial_id + " has " +
                              std::to_string(t.stimuli.size()) + " stimuli");
        }
        bool ok = false;
        switch (t.kind) {
            case TrialKind::match6: ok = t.correct_answer == kRejectAnswer || (t.correct_answer >= 0 && t.correct_answer <= 5); break;
            case TrialKind::afc2: ok = t.correct_answer == 0 || t.correct_answer == 1; break;
            case TrialKind::transcription:
                ok = t.correct_answer >= 0 && static_cast<std::size_t>(t.correct_answer) < class_count;
                break;
        }
        if (!ok) {
            throw FormatError("trial manifest: trial " + t.trial_id + " has invalid answer index " +
                              std::to_string(t.correct_answer));
        }
        if (t.target_class >= class_count) {
            throw FormatError("trial manifest: trial " + t.trial_id + " target class out of range");
        }
        ++per_class[t.target_class];
        positives += t.positive() ? 1 : 0;
    }
    if (!trials.empty()) {
        std::size_t lo = trials.size();
        std::size_t hi = 0;
        for (std::size_t c = 0; c < class_count; ++c) {
            lo = std::min(lo, per_class[c]);
            hi = std::max(hi, per_class[c]);
        }
        if (hi - lo > 1) throw FormatError("trial manifest: classes are not balanced across trials");
        if (kind != TrialKind::transcription) {
            const std::size_t negatives = trials.size() - positives;
            if (std::max(positives, negatives) - std::min(positives, negatives) > 1) {
                throw FormatError("trial manifest: positive and negative trials are not balanced");
            }
        }
    }
}

TrialManifest generate_trials(const DatasetManifest& manifest, TrialKind kind, std::size_t count,
                              std::uint64_t seed) {
    manifest.validate();
    const std::size_t K = manifest.class_count;
    if (K < 2 && kind != TrialKind::transcription) {
        throw ConfigError("generate_trials: at least two classes are needed for match trials");
    }
    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        by_class[manifest.samples[i].class_label].push_back(i);
    }
    const std::size_t n_cand = candidate_count(kind);
    std::vector<std::size_t> quota(K, count / K);
    for (std::size_t c = 0; c < count % K; ++c) ++quota[c];
    for (std::size_t c = 0; c < K; ++c) {
        const std::size_t have = by_class[c].size();
        // A positive match needs a second sample of the target's class.
        const std::size_t need = std::max(quota[c], (n_cand > 0 && quota[c] > 0) ? std::size_t{2} : quota[c]);
        if (have < need) {
            throw ConfigError("generate_trials: class " + std::to_string(c) + " has " + std::to_string(have) +
                              " samples, needs " + std::to_string(need) + " (short by " +
                              std::to_string(need - have) + ")");
        }
        const std::size_t others = manifest.samples.size() - have;
        if (n_cand > 0 && quota[c] > 0 && others < n_cand) {
            throw ConfigError("generate_trials: only " + std::to_string(others) +
                              " samples outside class " + std::to_string(c) + ", need " +
                              std::to_string(n_cand) + " distractors (short by " +
                              std::to_string(n_cand - others) + ")");
        }
    }

    Rng rng(derive_seed(seed, "trials"));
    // (class, target sample) pairs in class order, then the presentation order is shuffled.
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t c = 0; c < K; ++c) {
        for (auto t : draw(by_class[c], quota[c], rng)) slots.emplace_back(c, t);
    }
    rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(slots));
    std::vector<char> positive(slots.size(), 0);
    for (std::size_t i = 0; i < slots.size(); i += 2) positive[i] = 1;

    TrialManifest out;
    out.dataset = manifest.name;
    out.kind = kind;
    out.seed = seed;
    out.class_count = K;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto [cls, target] = slots[i];
        Trial t;
        char id[32];
        std::snprintf(id, sizeof id, "t%04zu", i);
        t.trial_id = id;
        t.kind = kind;
        t.order_seed = derive_seed(seed, {0x0d3e5ULL, i});
        t.target_class = cls;
        t.stimuli.push_back(manifest.samples[target].sample_id);

        std::vector<std::size_t> same;
        for (auto s : by_class[cls]) {
            if (s != target) same.push_back(s);
        }
        std::vector<std::size_t> other;
        for (std::size_t s = 0; s < manifest.samples.size(); ++s) {
            if (manifest.samples[s].class_label != cls) other.push_back(s);
        }
        switch (kind) {
            case TrialKind::match6: {
                std::vector<std::size_t> cands;
                if (positive[i]) {
                    cands = draw(other, 5, rng);
                    const auto pos = static_cast<std::size_t>(rng.below(6));
                    cands.insert(cands.begin() + static_cast<std::ptrdiff_t>(pos), draw(same, 1, rng)[0]);
                    t.correct_answer = static_cast<int>(pos);
                } else {
                    cands = draw(other, 6, rng);
                    t.correct_answer = kRejectAnswer;
                }
                for (auto s : cands) t.stimuli.push_back(manifest.samples[s].sample_id);
                break;
            }
            case TrialKind::afc2: {
                const auto s = positive[i] ? draw(same, 1, rng)[0] : draw(other, 1, rng)[0];
                t.stimuli.push_back(manifest.samples[s].sample_id);
                t.correct_answer = positive[i] ? 0 : 1;
                break;
            }
            case TrialKind::transcription:
                t.correct_answer = static_cast<int>(cls);
                break;
        }
        out.trials.push_back(std::move(t));
    }
    out.validate();
    return out;
}

json to_json(const TrialManifest& m) {
    json trials = json::array();
    for (const auto& t : m.trials) {
        json answer = t.correct_answer == kRejectAnswer && t.kind == TrialKind::match6
                          ? json("reject")
                          : json(t.correct_answer);
        trials.push_back({{"trial_id", t.trial_id},
                          {"trial_kind", std::string(to_string(t.kind))},
                          {"stimuli", t.stimuli},
                          {"target_class", t.target_class},
                          {"correct_answer", answer},
                          {"order_seed", t.order_seed}});
    }
    return {{"format_version", 1},
            {"dataset", m.dataset},
            {"kind", std::string(to_string(m.kind))},
            {"seed", m.seed},
            {"class_count", m.class_count},
            {"fixation_ms", m.fixation_ms},
            {"inter_trial_ms", m.inter_trial_ms},
            {"trials", std::move(trials)}};
}

TrialManifest trial_manifest_from_json(const json& doc) {
    require_format_version(doc, "trial manifest");
    TrialManifest m;
    try {
        m.dataset = doc.at("dataset").get<std::string>();
        const auto kind = parse_trial_kind(doc.at("kind").get<std::string>());
        if (!kind) throw FormatError("trial manifest: unknown kind");
        m.kind = *kind;
        m.seed = doc.value("seed", std::uint64_t{0});
        m.class_count = doc.at("class_count").get<std::size_t>();
        m.fixation_ms = doc.value("fixation_ms", m.fixation_ms);
        m.inter_trial_ms = doc.value("inter_trial_ms", m.inter_trial_ms);
        for (const auto& j : doc.at("trials")) {
            Trial t;
            t.trial_id = j.at("trial_id").get<std::string>();
            const auto tk = parse_trial_kind(j.at("trial_kind").get<std::string>());
            if (!tk) throw FormatError("trial manifest: unknown trial_kind in " + t.trial_id);
            t.kind = *tk;
            t.stimuli = j.at("stimuli").get<std::vector<std::string>>();
            t.target_class = j.at("target_class").get<std::size_t>();
            const auto& ans = j.at("correct_answer");
            if (ans.is_string()) {
                if (ans != "reject") throw FormatError("trial manifest: bad answer in " + t.trial_id);
                t.correct_answer = kRejectAnswer;
            } else {
                t.correct_answer = ans.get<int>();
                if (t.kind == TrialKind::match6 && t.correct_answer == kRejectAnswer) {
                    throw FormatError("trial manifest: bad answer in " + t.trial_id);
                }
            }
            t.order_seed = j.value("order_seed", std::uint64_t{0});
            m.trials.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("trial manifest: ") + e.what());
    }
    m.validate();
    return m;
}

void save_trial_manifest(const std::filesystem::path& path, const TrialManifest& m) {
    write_json_file(path, to_json(m));
}

TrialManifest load_trial_manifest(const std::filesystem::path& path) {
    return trial_manifest_from_json(read_json_file(path));
}

}  // namespace percep::data
