#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "percep_tl/autodiff/tensor.hpp"
#include "percep_tl/data/blob_store.hpp"

namespace percep::data {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SampleEntry {
    std::string sample_id;
    std::size_t class_label = 0;
    Split split = Split::train;
    // Planted difficulty in [0,1] when the sample was generated.
    double difficulty = 0.0;

    bool operator==(const SampleEntry&) const = default;
};

struct DatasetManifest {
    std::string name;
    std::size_t class_count = 0;
    // Per-sample feature shape, e.g. {D}, {C,H,W} or {T,C,H,W} for sequences.
    ad::Shape sample_shape;
    std::optional<std::size_t> sequence_length;
    std::vector<SampleEntry> samples;
    // Generator settings that produced the dataset (informational).
    nlohmann::json generator = nlohmann::json::object();

    // Unique ids, labels below class_count. Splits are a per-sample field, so
    // disjointness and coverage hold by construction.
    void validate() const;

    bool operator==(const DatasetManifest&) const = default;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);

// In-memory dataset: manifest plus contiguous features in manifest order.
struct Dataset {
    DatasetManifest manifest;
    std::vector<double> features;

    std::size_t size() const { return manifest.samples.size(); }
    std::size_t sample_numel() const { return ad::numel(manifest.sample_shape); }
    std::span<const double> sample(std::size_t index) const;
    std::vector<std::size_t> indices(Split split) const;

    // Stacks the selected samples into [n, sample_shape...].
    ad::Tensor batch(std::span<const std::size_t> index) const;
    std::vector<std::size_t> labels(std::span<const std::size_t> index) const;
    std::vector<std::string> ids(std::span<const std::size_t> index) const;
    std::vector<double> difficulty() const;

    bool operator==(const Dataset&) const = default;
};

// Directory layout: manifest.json, features.json (index), features.bin.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

// The feature store alone: one blob plus a JSON index keyed by sample id.
void save_feature_store(const std::filesystem::path& index_path, const Dataset& dataset);
std::map<std::string, BlobArray> load_feature_store(const std::filesystem::path& index_path);

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

// Stratified, seeded split assignment over the manifest's samples.
void assign_splits(DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace percep::data
