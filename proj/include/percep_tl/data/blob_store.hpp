#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "percep_tl/autodiff/tensor.hpp"

namespace percep::data {

// A named array in a blob container.
struct BlobArray {
    ad::Shape shape;
    std::vector<double> values;

    bool operator==(const BlobArray&) const = default;
};

// Writes arrays back to back as little-endian 64-bit floats into `blob_path`
// and returns the JSON index {name: {"offset": bytes, "shape": [...]}}.
nlohmann::json write_blob(const std::filesystem::path& blob_path,
                          const std::vector<std::pair<std::string, const BlobArray*>>& arrays);

// Reads every array listed in `index` from `blob_path`.
std::map<std::string, BlobArray> read_blob(const std::filesystem::path& blob_path,
                                           const nlohmann::json& index);

// Whole-file helpers shared by every JSON document in the project.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Throws FormatError unless doc["format_version"] == 1.
void require_format_version(const nlohmann::json& doc, const std::string& what);

}  // namespace percep::data
