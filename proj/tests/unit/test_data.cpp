#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <fstream>
#include <map>
#include <numeric>

#include "percep_tl/data/annotations.hpp"
#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/data/dataset.hpp"
#include "percep_tl/data/psi.hpp"
#include "percep_tl/data/synthetic.hpp"
#include "percep_tl/data/trials.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"
#include "support.hpp"

using namespace percep;
using namespace percep::data;
using testing_support::TempDir;

namespace {

AnnotationRecord rec(const std::string& id, double rt, bool correct = true, const std::string& who = "a0",
                     std::size_t label = 0) {
    AnnotationRecord r;
    r.sample_id = id;
    r.class_label = label;
    r.reaction_time_ms = rt;
    r.responder_correct = correct;
    r.annotator_id = who;
    return r;
}

PsiPolicy fixed_ceiling(double ms) {
    PsiPolicy p;
    p.ceiling = RtCeiling::fixed;
    p.fixed_ceiling_ms = ms;
    return p;
}

std::string line(const std::string& id, double rt) {
    return R"({"sample_id":")" + id + R"(","class_label":1,"reaction_time_ms":)" + std::to_string(rt) +
           R"(,"responder_correct":true,"trial_kind":"match6","annotator_id":"x"})";
}

}  // namespace

TEST(Annotations, ThreeLineFile) {
    TempDir dir("ann");
    const auto path = dir.path() / "a.jsonl";
    std::ofstream(path) << line("s0", 500) << "\n" << line("s1", 700) << "\n\n" << line("s2", 900) << "\n";
    const auto records = load_annotations(path);
    ASSERT_EQ(records.size(), 3u);
    EXPECT_EQ(records[1].sample_id, "s1");
    EXPECT_DOUBLE_EQ(records[2].reaction_time_ms, 900.0);
    EXPECT_EQ(records[0].trial_kind, TrialKind::match6);
}

TEST(Annotations, NegativeReactionTimeNamesLine) {
    const std::string text = line("s0", 500) + "\n" + line("s1", -5) + "\n";
    try {
        parse_annotations(text);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("reaction_time_ms"), std::string::npos);
    }
}

TEST(Annotations, EmptyFileIsEmpty) {
    TempDir dir("ann");
    const auto path = dir.path() / "empty.jsonl";
    std::ofstream(path).flush();
    EXPECT_TRUE(load_annotations(path).empty());
}

TEST(Annotations, MissingFieldAndBadKind) {
    EXPECT_THROW(parse_annotations(R"({"sample_id":"s"})"), FormatError);
    EXPECT_THROW(parse_annotations(R"({"sample_id":"s","class_label":0,"reaction_time_ms":10,)"
                                   R"("responder_correct":true,"trial_kind":"nope","annotator_id":"x"})"),
                 FormatError);
    EXPECT_THROW(parse_annotations("not json"), FormatError);
}

TEST(Annotations, RoundTrip) {
    std::vector<AnnotationRecord> records{rec("a", 512.5, true), rec("b", 1200, false, "z", 3)};
    records[1].trial_kind = TrialKind::afc2;
    EXPECT_EQ(parse_annotations(format_annotations(records)), records);
}

TEST(Psi, MeanQuarterOfCeiling) {
    const auto t = compute_psi({rec("s", 500)}, fixed_ceiling(2000));
    EXPECT_DOUBLE_EQ(t.lookup("s"), 0.75);
    // Same numbers under the default global ceiling: the slowest sample defines rt_max.
    const auto g = compute_psi({rec("s", 500), rec("slow", 2000)});
    EXPECT_DOUBLE_EQ(g.rt_max_ms, 2000.0);
    EXPECT_DOUBLE_EQ(g.lookup("s"), 0.75);
}

TEST(Psi, MeanAtCeilingIsZero) {
    const auto t = compute_psi({rec("s", 2000)}, fixed_ceiling(2000));
    EXPECT_DOUBLE_EQ(t.lookup("s"), 0.0);
    EXPECT_DOUBLE_EQ(compute_psi({rec("only", 900)}).lookup("only"), 0.0);
}

TEST(Psi, TwoAnnotatorsAveraged) {
    const auto t = compute_psi({rec("s", 800, true, "a"), rec("s", 1200, true, "b")}, fixed_ceiling(2000));
    EXPECT_DOUBLE_EQ(t.lookup("s"), 0.5);
}

TEST(Psi, IncorrectResponsesFilteredAndOmitted) {
    const auto t = compute_psi({rec("s", 800), rec("s", 1900, false), rec("gone", 100, false)}, fixed_ceiling(2000));
    EXPECT_DOUBLE_EQ(t.lookup("s"), 0.6);
    EXPECT_FALSE(t.contains("gone"));
    EXPECT_DOUBLE_EQ(t.lookup("gone"), 0.0);

    PsiPolicy keep = fixed_ceiling(2000);
    keep.correct_only = false;
    EXPECT_DOUBLE_EQ(compute_psi({rec("s", 800), rec("s", 1200, false)}, keep).lookup("s"), 0.5);
}

TEST(Psi, MedianAggregation) {
    PsiPolicy p = fixed_ceiling(1000);
    p.aggregation = RtAggregation::median;
    const auto t = compute_psi({rec("s", 100), rec("s", 200), rec("s", 900)}, p);
    EXPECT_DOUBLE_EQ(t.lookup("s"), 0.8);
}

TEST(Psi, PerClassCeiling) {
    PsiPolicy p;
    p.ceiling = RtCeiling::per_class_max;
    const auto t = compute_psi({rec("a", 500, true, "x", 0), rec("b", 1000, true, "x", 0),
                                rec("c", 300, true, "x", 1), rec("d", 400, true, "x", 1)},
                               p);
    EXPECT_DOUBLE_EQ(t.lookup("a"), 0.5);
    EXPECT_DOUBLE_EQ(t.lookup("c"), 0.25);
}

TEST(Psi, ClampsAboveFixedCeiling) {
    EXPECT_DOUBLE_EQ(compute_psi({rec("s", 3000)}, fixed_ceiling(2000)).lookup("s"), 0.0);
}

TEST(Psi, ErrorCases) {
    EXPECT_THROW(compute_psi({}), ConfigError);
    EXPECT_THROW(compute_psi({rec("s", 0.0)}), ConfigError);
    EXPECT_THROW(compute_psi({rec("s", 10)}, fixed_ceiling(0)), ConfigError);
}

TEST(Psi, ScaleConsistent) {
    Rng rng(17);
    std::vector<AnnotationRecord> records;
    for (int i = 0; i < 40; ++i) {
        records.push_back(rec("s" + std::to_string(i % 13), rng.uniform(300, 2500), rng.bernoulli(0.8),
                              "a" + std::to_string(i % 3), static_cast<std::size_t>(i % 2)));
    }
    for (auto ceiling : {RtCeiling::global_max, RtCeiling::per_class_max, RtCeiling::per_sample_max}) {
        PsiPolicy p;
        p.ceiling = ceiling;
        const auto base = compute_psi(records, p);
        for (double k : {0.001, 3.7, 1000.0}) {
            auto scaled = records;
            for (auto& r : scaled) r.reaction_time_ms *= k;
            const auto t = compute_psi(scaled, p);
            ASSERT_EQ(t.psi.size(), base.psi.size());
            for (const auto& [id, v] : base.psi) EXPECT_NEAR(t.lookup(id), v, 1e-12) << id;
        }
    }
    auto scaled = records;
    for (auto& r : scaled) r.reaction_time_ms *= 2.5;
    const auto a = compute_psi(records, fixed_ceiling(3000));
    const auto b = compute_psi(scaled, fixed_ceiling(7500));
    for (const auto& [id, v] : a.psi) EXPECT_NEAR(b.lookup(id), v, 1e-12);
}

TEST(Psi, AntiMonotoneInMeanRt) {
    Rng rng(23);
    std::vector<AnnotationRecord> records;
    for (int i = 0; i < 60; ++i) records.push_back(rec("s" + std::to_string(i % 20), rng.uniform(200, 2000)));
    const auto t = compute_psi(records);
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : records) {
        acc[r.sample_id].first += r.reaction_time_ms;
        acc[r.sample_id].second += 1;
    }
    for (const auto& [i, ai] : acc) {
        for (const auto& [j, aj] : acc) {
            const double ri = ai.first / ai.second, rj = aj.first / aj.second;
            if (ri < rj) EXPECT_GT(t.lookup(i), t.lookup(j));
        }
    }
}

TEST(Psi, TableRoundTrip) {
    TempDir dir("psi");
    const auto t = compute_psi({rec("a", 500), rec("b", 1500)});
    save_psi_table(dir.path() / "psi.json", t);
    EXPECT_EQ(load_psi_table(dir.path() / "psi.json"), t);
}

namespace {

DatasetManifest manifest_with(std::size_t classes, std::size_t per_class) {
    DatasetManifest m;
    m.name = "m";
    m.class_count = classes;
    m.sample_shape = {2};
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            SampleEntry e;
            e.sample_id = "c" + std::to_string(c) + "_" + std::to_string(i);
            e.class_label = c;
            m.samples.push_back(e);
        }
    }
    return m;
}

}  // namespace

TEST(Simulator, ZeroDifficultyZeroNoise) {
    const auto m = manifest_with(3, 5);
    AnnotatorParams p;
    p.noise_sd_ms = 0.0;
    const std::vector<double> d(m.samples.size(), 0.0);
    const auto records = simulate_annotator(m, d, p, 1);
    ASSERT_EQ(records.size(), m.samples.size());
    for (const auto& r : records) {
        EXPECT_DOUBLE_EQ(r.reaction_time_ms, p.rt_min_ms);
        EXPECT_TRUE(r.responder_correct);
    }
}

TEST(Simulator, HardSamplesSlower) {
    const auto m = manifest_with(2, 1000);
    std::vector<double> d(m.samples.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.samples[i].class_label == 0 ? 1.0 : 0.0;
    const auto records = simulate_annotator(m, d, AnnotatorParams{}, 9);
    double hard = 0, easy = 0;
    for (std::size_t i = 0; i < records.size(); ++i) (d[i] > 0.5 ? hard : easy) += records[i].reaction_time_ms;
    EXPECT_GT(hard / 1000.0, easy / 1000.0);
}

TEST(Simulator, CorrectnessFallsWithDifficulty) {
    const auto m = manifest_with(1, 8000);
    std::vector<double> d(m.samples.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i % 4) / 3.0;
    AnnotatorParams p;
    p.error_slope = 0.6;
    const auto records = simulate_annotator(m, d, p, 4);
    std::vector<double> rate(4, 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) rate[i % 4] += records[i].responder_correct ? 1.0 : 0.0;
    for (int b = 1; b < 4; ++b) EXPECT_LT(rate[b], rate[b - 1]);
}

TEST(Simulator, RtClampedAndDeterministic) {
    const auto m = manifest_with(2, 50);
    AnnotatorParams p;
    p.noise_sd_ms = 5000.0;
    p.annotators = 3;
    const std::vector<double> d(m.samples.size(), 0.5);
    const auto a = simulate_annotator(m, d, p, 77);
    EXPECT_EQ(a, simulate_annotator(m, d, p, 77));
    EXPECT_NE(a, simulate_annotator(m, d, p, 78));
    EXPECT_EQ(a.size(), 300u);
    for (const auto& r : a) {
        EXPECT_GE(r.reaction_time_ms, p.rt_min_ms / 2);
        EXPECT_LE(r.reaction_time_ms, 2 * p.rt_max_ms);
    }
}

TEST(Simulator, InvalidParams) {
    const auto m = manifest_with(2, 2);
    const std::vector<double> d(4, 0.0);
    AnnotatorParams p;
    p.rt_min_ms = 3000;
    EXPECT_THROW(simulate_annotator(m, d, p, 1), ConfigError);
    p = {};
    p.error_slope = 1.5;
    EXPECT_THROW(simulate_annotator(m, d, p, 1), ConfigError);
    EXPECT_THROW(simulate_annotator(m, std::vector<double>(3, 0.0), AnnotatorParams{}, 1), Error);
}

namespace {

// Multi-class perceptron on the train features; returns training accuracy.
double perceptron_train_accuracy(const Dataset& ds, int epochs) {
    const std::size_t D = ds.sample_numel(), K = ds.manifest.class_count;
    std::vector<double> w(K * (D + 1), 0.0);
    auto score = [&](std::size_t i, std::size_t k) {
        const auto x = ds.sample(i);
        double s = w[k * (D + 1) + D];
        for (std::size_t j = 0; j < D; ++j) s += w[k * (D + 1) + j] * x[j];
        return s;
    };
    auto predict = [&](std::size_t i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (score(i, k) > score(i, best)) best = k;
        return best;
    };
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const std::size_t y = ds.manifest.samples[i].class_label, p = predict(i);
            if (p == y) continue;
            const auto x = ds.sample(i);
            for (std::size_t j = 0; j < D; ++j) {
                w[y * (D + 1) + j] += x[j];
                w[p * (D + 1) + j] -= x[j];
            }
            w[y * (D + 1) + D] += 1;
            w[p * (D + 1) + D] -= 1;
        }
    }
    std::size_t right = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) right += predict(i) == ds.manifest.samples[i].class_label;
    return static_cast<double>(right) / static_cast<double>(ds.size());
}

}  // namespace

TEST(Synthetic, HugeSeparationLinearlySeparable) {
    SyntheticSpec s;
    s.class_count = 3;
    s.samples_per_class = 60;
    s.class_separation = 1e6;
    s.boundary_overlap = 0.0;
    const auto ds = gen_synthetic_dataset(s, 5);
    EXPECT_DOUBLE_EQ(perceptron_train_accuracy(ds, 200), 1.0);
}

TEST(Synthetic, NoHardFractionMeansEasy) {
    SyntheticSpec s;
    s.hard_fraction = 0.0;
    s.class_count = 4;
    for (auto mode : {FeatureMode::vector, FeatureMode::image}) {
        s.mode = mode;
        const auto ds = gen_synthetic_dataset(s, 3);
        for (double d : ds.difficulty()) EXPECT_LT(d, 0.2);
    }
}

TEST(Synthetic, HardFractionRoughlyHonoured) {
    SyntheticSpec s;
    s.hard_fraction = 0.3;
    s.samples_per_class = 500;
    const auto ds = gen_synthetic_dataset(s, 8);
    const auto d = ds.difficulty();
    const double hard = static_cast<double>(std::count_if(d.begin(), d.end(), [](double v) { return v >= 0.5; }));
    EXPECT_NEAR(hard / static_cast<double>(d.size()), 0.3, 0.05);
}

TEST(Synthetic, DeterministicAndSplitsStratified) {
    SyntheticSpec s;
    s.mode = FeatureMode::image;
    s.class_count = 3;
    const auto a = gen_synthetic_dataset(s, 12);
    EXPECT_EQ(a, gen_synthetic_dataset(s, 12));
    EXPECT_NE(a.features, gen_synthetic_dataset(s, 13).features);
    EXPECT_EQ(a.manifest.sample_shape, (ad::Shape{1, 8, 8}));
    for (std::size_t c = 0; c < 3; ++c) {
        std::size_t n_test = 0;
        for (const auto& e : a.manifest.samples) n_test += e.class_label == c && e.split == Split::test;
        EXPECT_EQ(n_test, 20u);
    }
}

TEST(Synthetic, InvalidSpec) {
    SyntheticSpec s;
    s.class_count = 0;
    EXPECT_THROW(gen_synthetic_dataset(s, 1), ConfigError);
    s = {};
    s.hard_fraction = 1.5;
    EXPECT_THROW(gen_synthetic_dataset(s, 1), ConfigError);
}

TEST(Sequences, ZeroVelocityFramesIdentical) {
    SequenceSpec s;
    s.motions = {Motion::none};
    s.samples_per_motion = 5;
    const auto ds = gen_synthetic_sequences(s, 2);
    const std::size_t frame = s.image_size * s.image_size;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto x = ds.sample(i);
        for (std::size_t t = 1; t < s.frames; ++t)
            for (std::size_t p = 0; p < frame; ++p) ASSERT_EQ(x[t * frame + p], x[p]);
    }
}

TEST(Sequences, ConstantVelocityIsTorusShift) {
    SequenceSpec s;
    s.motions = {Motion::right, Motion::diagonal};
    s.samples_per_motion = 3;
    const auto ds = gen_synthetic_sequences(s, 6);
    const std::size_t S = s.image_size;
    EXPECT_EQ(ds.manifest.sample_shape, (ad::Shape{s.frames, 1, S, S}));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto [dx, dy] = velocity(s.motions[ds.manifest.samples[i].class_label]);
        const auto x = ds.sample(i);
        for (std::size_t t = 1; t < s.frames; ++t) {
            for (std::size_t r = 0; r < S; ++r) {
                for (std::size_t c = 0; c < S; ++c) {
                    const auto r0 = (r + S * s.frames - static_cast<std::size_t>(dy) * t) % S;
                    const auto c0 = (c + S * s.frames - static_cast<std::size_t>(dx) * t) % S;
                    ASSERT_EQ(x[t * S * S + r * S + c], x[r0 * S + c0]) << "t=" << t;
                }
            }
        }
    }
}

TEST(Dataset, SaveLoadRoundTrip) {
    TempDir dir("ds");
    SyntheticSpec s;
    s.samples_per_class = 10;
    const auto ds = gen_synthetic_dataset(s, 4);
    save_dataset(dir.path() / "d", ds);
    EXPECT_EQ(load_dataset(dir.path() / "d"), ds);
    const auto seqs = gen_synthetic_sequences(SequenceSpec{}, 4);
    save_dataset(dir.path() / "s", seqs);
    EXPECT_EQ(load_dataset(dir.path() / "s"), seqs);
}

TEST(Dataset, ManifestValidation) {
    auto m = manifest_with(2, 2);
    m.samples[1].sample_id = m.samples[0].sample_id;
    EXPECT_THROW(m.validate(), FormatError);
    m = manifest_with(2, 2);
    m.samples[0].class_label = 2;
    EXPECT_THROW(m.validate(), FormatError);
    auto doc = to_json(manifest_with(2, 2));
    doc.erase("format_version");
    EXPECT_THROW(manifest_from_json(doc), FormatError);
}

TEST(BlobStore, LittleEndianLayout) {
    TempDir dir("blob");
    BlobArray a{{2}, {1.0, -2.5}}, b{{1, 1}, {3.0}};
    const auto index = write_blob(dir.path() / "x.bin", {{"a", &a}, {"b", &b}});
    EXPECT_EQ(index["a"]["offset"], 0);
    EXPECT_EQ(index["b"]["offset"], 16);
    EXPECT_EQ(std::filesystem::file_size(dir.path() / "x.bin"), 24u);
    std::ifstream in(dir.path() / "x.bin", std::ios::binary);
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int k = 7; k >= 0; --k) bits = (bits << 8) | bytes[k];
    double v;
    std::memcpy(&v, &bits, 8);
    EXPECT_EQ(v, 1.0);
    const auto back = read_blob(dir.path() / "x.bin", index);
    EXPECT_EQ(back.at("a"), a);
    EXPECT_EQ(back.at("b"), b);
}

TEST(Trials, SixtyOverSixClasses) {
    const auto m = manifest_with(6, 20);
    const auto t = generate_trials(m, TrialKind::match6, 60, 3);
    ASSERT_EQ(t.trials.size(), 60u);
    std::vector<int> per_class(6, 0);
    int positive = 0;
    for (const auto& tr : t.trials) {
        ++per_class[tr.target_class];
        positive += tr.positive();
        EXPECT_EQ(tr.stimuli.size(), 7u);
    }
    for (int c : per_class) EXPECT_EQ(c, 10);
    EXPECT_EQ(positive, 30);
    EXPECT_NO_THROW(t.validate());
}

TEST(Trials, AnswersPointAtMatches) {
    const auto m = manifest_with(4, 10);
    std::map<std::string, std::size_t> label;
    for (const auto& e : m.samples) label[e.sample_id] = e.class_label;
    for (auto kind : {TrialKind::match6, TrialKind::afc2, TrialKind::transcription}) {
        const auto t = generate_trials(m, kind, 24, 8);
        std::set<std::string> targets;
        for (const auto& tr : t.trials) {
            targets.insert(tr.stimuli[0]);
            const auto target = label.at(tr.stimuli[0]);
            if (kind == TrialKind::match6) {
                for (std::size_t k = 1; k < tr.stimuli.size(); ++k) {
                    const bool same = label.at(tr.stimuli[k]) == target;
                    EXPECT_EQ(same, tr.correct_answer == static_cast<int>(k - 1));
                }
            } else if (kind == TrialKind::afc2) {
                EXPECT_EQ(label.at(tr.stimuli[1]) == target, tr.correct_answer == 0);
            } else {
                EXPECT_EQ(tr.correct_answer, static_cast<int>(target));
            }
        }
        EXPECT_EQ(targets.size(), t.trials.size());
    }
}

TEST(Trials, ShortfallReported) {
    const auto m = manifest_with(6, 5);
    try {
        generate_trials(m, TrialKind::match6, 60, 1);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("short by 5"), std::string::npos) << e.what();
    }
}

TEST(Trials, DeterministicAndRoundTrip) {
    TempDir dir("trials");
    const auto m = manifest_with(3, 12);
    const auto a = generate_trials(m, TrialKind::match6, 18, 5);
    EXPECT_EQ(a, generate_trials(m, TrialKind::match6, 18, 5));
    save_trial_manifest(dir.path() / "t.json", a);
    EXPECT_EQ(load_trial_manifest(dir.path() / "t.json"), a);
}

TEST(Trials, ValidateRejectsBadAnswer) {
    auto t = generate_trials(manifest_with(3, 12), TrialKind::afc2, 6, 5);
    t.trials[0].correct_answer = 4;
    EXPECT_THROW(t.validate(), FormatError);
}
