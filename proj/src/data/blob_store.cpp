#include "percep_tl/data/blob_store.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "percep_tl/error.hpp"

namespace percep::data {

namespace fs = std::filesystem;

nlohmann::json write_blob(const fs::path& blob_path,
                          const std::vector<std::pair<std::string, const BlobArray*>>& arrays) {
    if (blob_path.has_parent_path()) {
        fs::create_directories(blob_path.parent_path());
    }
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + blob_path.string());
    }
    nlohmann::json index = nlohmann::json::object();
    std::uint64_t offset = 0;
    std::vector<char> bytes;
    for (const auto& [name, array] : arrays) {
        if (ad::numel(array->shape) != array->values.size()) {
            throw ShapeError("blob array '" + name + "' has shape " + ad::to_string(array->shape) +
                             " but " + std::to_string(array->values.size()) + " values");
        }
        bytes.resize(array->values.size() * 8);
        for (std::size_t i = 0; i < array->values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(array->values[i]);
            for (int b = 0; b < 8; ++b) {
                bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffU);
            }
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        index[name] = {{"offset", offset}, {"shape", array->shape}};
        offset += bytes.size();
    }
    if (!out) {
        throw Error("failed writing " + blob_path.string());
    }
    return index;
}

std::map<std::string, BlobArray> read_blob(const fs::path& blob_path, const nlohmann::json& index) {
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open blob " + blob_path.string());
    }
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::map<std::string, BlobArray> arrays;
    for (const auto& [name, entry] : index.items()) {
        BlobArray array;
        try {
            array.shape = entry.at("shape").get<ad::Shape>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("blob index entry '" + name + "': " + e.what());
        }
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const std::size_t n = ad::numel(array.shape);
        if (offset + n * 8 > data.size()) {
            throw FormatError("blob entry '" + name + "' extends past the end of " + blob_path.string());
        }
        array.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[offset + i * 8 + b]))
                        << (8 * b);
            }
            array.values[i] = std::bit_cast<double>(bits);
        }
        arrays.emplace(name, std::move(array));
    }
    return arrays;
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

void require_format_version(const nlohmann::json& doc, const std::string& what) {
    if (!doc.is_object() || !doc.contains("format_version") || doc["format_version"] != 1) {
        throw FormatError(what + ": expected \"format_version\": 1");
    }
}

}  // namespace percep::data
