#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/autodiff/tensor.hpp"

namespace percep::metrics {

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double top1(const ad::Tensor& logits, std::span<const std::size_t> labels);

// Levenshtein distance with unit costs over any random-access sequence.
template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

std::vector<std::string> split_words(std::string_view text);

// Edit distance over characters (bytes) / whitespace-separated words,
// divided by the reference length. Empty reference throws.
double cer(std::string_view reference, std::string_view hypothesis);
double wer(std::string_view reference, std::string_view hypothesis);

struct MetricResult {
    std::string name;
    std::vector<double> values;
    double mean = 0.0;
    // Sample standard deviation over sqrt(n); absent for a single seed.
    std::optional<double> standard_error;
    std::size_t n_seeds = 0;

    bool operator==(const MetricResult&) const = default;
};

MetricResult aggregate_seeds(std::string name, std::span<const double> values);

struct TransferDiffInput {
    std::string task;
    std::string family;
    double original = 0.0;
    double updated = 0.0;
    std::string comparison;
};

struct TransferDiffRow {
    std::string task;
    std::string family;
    double original = 0.0;
    double updated = 0.0;
    double percent_diff = 0.0;
    // What is being compared, e.g. "psi_vs_control" or "transfer_vs_scratch".
    std::string comparison;

    bool operator==(const TransferDiffRow&) const = default;
};

// (new - original) / original * 100; original must be positive.
double percent_diff(double original, double updated);
std::vector<TransferDiffRow> percent_diff_table(std::span<const TransferDiffInput> pairs);
// Fixed-width text table: accuracies to 2 decimals, differences to 1.
std::string render_diff_table(std::span<const TransferDiffRow> rows);

struct CurvePoint {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;

    bool operator==(const CurvePoint&) const = default;
};

struct MetricRow {
    std::uint64_t seed = 0;
    std::string arm;
    std::string metric;
    double value = 0.0;

    bool operator==(const MetricRow&) const = default;
};

struct ArmSummary {
    std::string arm;
    MetricResult result;

    bool operator==(const ArmSummary&) const = default;
};

// Training curve of one stage of one arm of one seed.
struct CurveSet {
    std::uint64_t seed = 0;
    std::string arm;
    std::string stage;
    std::vector<CurvePoint> points;

    bool operator==(const CurveSet&) const = default;
};

// Parameter checksums taken around a stage, restricted to the parameters the
// stage kept frozen.
struct FrozenCheck {
    std::uint64_t seed = 0;
    std::string arm;
    std::string stage;
    std::uint64_t before = 0;
    std::uint64_t after = 0;

    bool operator==(const FrozenCheck&) const = default;
};

struct SeedFailure {
    std::uint64_t seed = 0;
    std::string reason;

    bool operator==(const SeedFailure&) const = default;
};

struct ExperimentReport {
    std::string experiment;
    std::vector<std::uint64_t> seeds;
    std::vector<MetricRow> rows;
    std::vector<ArmSummary> summary;
    std::vector<TransferDiffRow> transfer_diff;
    std::vector<CurveSet> curves;
    std::vector<FrozenCheck> frozen_checks;
    std::vector<SeedFailure> failures;
    std::optional<std::string> generated_at;

    bool partial() const { return !failures.empty(); }
    // Seed values of one metric of one arm, in seed order.
    std::vector<double> values(const std::string& arm, const std::string& metric) const;
    const MetricResult* find_summary(const std::string& arm, const std::string& metric) const;

    bool operator==(const ExperimentReport&) const = default;
};

// Fills `summary` from `rows`, grouping by (arm, metric) in first-seen order.
void summarize(ExperimentReport& report);

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& doc);

// report.json plus tables/{metrics,summary,transfer_diff,curves}.csv and
// tables/transfer_diff.txt under `dir`.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);
ExperimentReport load_report(const std::filesystem::path& dir);

// Largest absolute difference between corresponding metric values; infinity
// when the reports do not line up row for row.
double max_metric_difference(const ExperimentReport& a, const ExperimentReport& b);

}  // namespace percep::metrics
