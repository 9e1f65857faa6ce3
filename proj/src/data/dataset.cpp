#include "percep_tl/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "percep_tl/error.hpp"
#include "percep_tl/random.hpp"

namespace percep::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw FormatError("unknown split '" + std::string(text) + "'");
}

void DatasetManifest::validate() const {
    if (class_count < 1) {
        throw FormatError("dataset '" + name + "': class_count must be positive");
    }
    if (sample_shape.empty() || ad::numel(sample_shape) == 0) {
        throw FormatError("dataset '" + name + "': sample_shape must be nonempty with positive extents");
    }
    std::set<std::string_view> seen;
    for (const auto& s : samples) {
        if (s.sample_id.empty()) {
            throw FormatError("dataset '" + name + "': empty sample_id");
        }
        if (!seen.insert(s.sample_id).second) {
            throw FormatError("dataset '" + name + "': duplicate sample_id '" + s.sample_id + "'");
        }
        if (s.class_label >= class_count) {
            throw FormatError("dataset '" + name + "': sample '" + s.sample_id + "' has class_label " +
                              std::to_string(s.class_label) + " >= class_count " +
                              std::to_string(class_count));
        }
        if (!(s.difficulty >= 0.0 && s.difficulty <= 1.0)) {
            throw FormatError("dataset '" + name + "': difficulty of '" + s.sample_id + "' outside [0,1]");
        }
    }
}

json to_json(const DatasetManifest& m) {
    json samples = json::array();
    for (const auto& s : m.samples) {
        samples.push_back({{"sample_id", s.sample_id},
                           {"class_label", s.class_label},
                           {"split", std::string(to_string(s.split))},
                           {"difficulty", s.difficulty}});
    }
    json doc = {{"format_version", 1},
                {"name", m.name},
                {"class_count", m.class_count},
                {"sample_shape", m.sample_shape},
                {"generator", m.generator},
                {"samples", std::move(samples)}};
    if (m.sequence_length) {
        doc["sequence_length"] = *m.sequence_length;
    }
    return doc;
}

DatasetManifest manifest_from_json(const json& doc) {
    require_format_version(doc, "dataset manifest");
    DatasetManifest m;
    try {
        m.name = doc.at("name").get<std::string>();
        m.class_count = doc.at("class_count").get<std::size_t>();
        m.sample_shape = doc.at("sample_shape").get<ad::Shape>();
        if (doc.contains("sequence_length")) {
            m.sequence_length = doc["sequence_length"].get<std::size_t>();
        }
        m.generator = doc.value("generator", json::object());
        for (const auto& s : doc.at("samples")) {
            SampleEntry e;
            e.sample_id = s.at("sample_id").get<std::string>();
            e.class_label = s.at("class_label").get<std::size_t>();
            e.split = parse_split(s.at("split").get<std::string>());
            e.difficulty = s.value("difficulty", 0.0);
            m.samples.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    m.validate();
    return m;
}

std::span<const double> Dataset::sample(std::size_t index) const {
    const std::size_t n = sample_numel();
    return std::span<const double>(features).subspan(index * n, n);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (manifest.samples[i].split == split) {
            out.push_back(i);
        }
    }
    return out;
}

ad::Tensor Dataset::batch(std::span<const std::size_t> index) const {
    if (index.empty()) {
        throw ShapeError("dataset '" + manifest.name + "': empty batch");
    }
    const std::size_t n = sample_numel();
    std::vector<double> values;
    values.reserve(index.size() * n);
    for (auto i : index) {
        const auto s = sample(i);
        values.insert(values.end(), s.begin(), s.end());
    }
    ad::Shape shape{index.size()};
    shape.insert(shape.end(), manifest.sample_shape.begin(), manifest.sample_shape.end());
    return ad::Tensor::from(std::move(shape), std::move(values));
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> index) const {
    std::vector<std::size_t> out;
    out.reserve(index.size());
    for (auto i : index) out.push_back(manifest.samples[i].class_label);
    return out;
}

std::vector<std::string> Dataset::ids(std::span<const std::size_t> index) const {
    std::vector<std::string> out;
    out.reserve(index.size());
    for (auto i : index) out.push_back(manifest.samples[i].sample_id);
    return out;
}

std::vector<double> Dataset::difficulty() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& s : manifest.samples) out.push_back(s.difficulty);
    return out;
}

void save_feature_store(const fs::path& index_path, const Dataset& dataset) {
    const fs::path blob_path = fs::path(index_path).replace_extension(".bin");
    std::vector<BlobArray> arrays(dataset.size());
    std::vector<std::pair<std::string, const BlobArray*>> named;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto s = dataset.sample(i);
        arrays[i].shape = dataset.manifest.sample_shape;
        arrays[i].values.assign(s.begin(), s.end());
        named.emplace_back(dataset.manifest.samples[i].sample_id, &arrays[i]);
    }
    json index = {{"format_version", 1},
                  {"blob", blob_path.filename().string()},
                  {"entries", write_blob(blob_path, named)}};
    write_json_file(index_path, index);
}

std::map<std::string, BlobArray> load_feature_store(const fs::path& index_path) {
    const json index = read_json_file(index_path);
    require_format_version(index, "feature store index");
    const fs::path blob = index_path.parent_path() / index.at("blob").get<std::string>();
    return read_blob(blob, index.at("entries"));
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
    dataset.manifest.validate();
    if (dataset.features.size() != dataset.size() * dataset.sample_numel()) {
        throw ShapeError("dataset '" + dataset.manifest.name + "': feature count does not match samples");
    }
    fs::create_directories(dir);
    write_json_file(dir / "manifest.json", to_json(dataset.manifest));
    save_feature_store(dir / "features.json", dataset);
}

Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    d.manifest = manifest_from_json(read_json_file(dir / "manifest.json"));
    const auto store = load_feature_store(dir / "features.json");
    d.features.reserve(d.size() * d.sample_numel());
    for (const auto& s : d.manifest.samples) {
        auto it = store.find(s.sample_id);
        if (it == store.end()) {
            throw FormatError("feature store lacks sample '" + s.sample_id + "'");
        }
        if (it->second.shape != d.manifest.sample_shape) {
            throw FormatError("feature store shape mismatch for sample '" + s.sample_id + "'");
        }
        d.features.insert(d.features.end(), it->second.values.begin(), it->second.values.end());
    }
    return d;
}

void assign_splits(DatasetManifest& manifest, const SplitFractions& f, std::uint64_t seed) {
    if (f.train <= 0.0 || f.val < 0.0 || f.test < 0.0 ||
        std::fabs(f.train + f.val + f.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be nonnegative, with train > 0, summing to 1");
    }
    std::vector<std::vector<std::size_t>> by_class(manifest.class_count);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        by_class[manifest.samples[i].class_label].push_back(i);
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        Rng rng(derive_seed(seed, {0x5b117ULL, c}));
        rng.shuffle(std::span<std::size_t>(members));
        const auto n = static_cast<double>(members.size());
        const auto n_val = static_cast<std::size_t>(std::llround(n * f.val));
        const auto n_test = static_cast<std::size_t>(std::llround(n * f.test));
        for (std::size_t k = 0; k < members.size(); ++k) {
            Split s = Split::train;
            if (k < n_test) {
                s = Split::test;
            } else if (k < n_test + n_val) {
                s = Split::val;
            }
            manifest.samples[members[k]].split = s;
        }
    }
}

}  // namespace percep::data
