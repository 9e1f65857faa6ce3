#include "percep_tl/data/annotations.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"

namespace percep::data {

using nlohmann::json;

std::string_view to_string(TrialKind kind) {
    switch (kind) {
        case TrialKind::match6: return "match6";
        case TrialKind::afc2: return "afc2";
        case TrialKind::transcription: return "transcription";
    }
    return "unknown";
}

std::optional<TrialKind> parse_trial_kind(std::string_view text) {
    if (text == "match6") return TrialKind::match6;
    if (text == "afc2") return TrialKind::afc2;
    if (text == "transcription") return TrialKind::transcription;
    return std::nullopt;
}

namespace {

[[noreturn]] void field_error(std::size_t line_no, const std::string& field, const std::string& why) {
    throw FormatError("line " + std::to_string(line_no) + ": field '" + field + "' " + why, line_no);
}

const json& require(const json& obj, const char* field, std::size_t line_no) {
    auto it = obj.find(field);
    if (it == obj.end()) {
        field_error(line_no, field, "is missing");
    }
    return *it;
}

}  // namespace

AnnotationRecord parse_annotation(std::string_view line, std::size_t line_no) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw FormatError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")",
                          line_no);
    }
    if (!obj.is_object()) {
        throw FormatError("line " + std::to_string(line_no) + ": expected a JSON object", line_no);
    }
    AnnotationRecord r;
    const auto& id = require(obj, "sample_id", line_no);
    if (!id.is_string() || id.get<std::string>().empty()) {
        field_error(line_no, "sample_id", "must be a nonempty string");
    }
    r.sample_id = id.get<std::string>();

    const auto& label = require(obj, "class_label", line_no);
    if (!label.is_number_integer() || label.get<long long>() < 0) {
        field_error(line_no, "class_label", "must be a nonnegative integer");
    }
    r.class_label = label.get<std::size_t>();

    const auto& rt = require(obj, "reaction_time_ms", line_no);
    if (!rt.is_number()) {
        field_error(line_no, "reaction_time_ms", "must be a number");
    }
    r.reaction_time_ms = rt.get<double>();
    if (!(r.reaction_time_ms > 0.0) || !std::isfinite(r.reaction_time_ms)) {
        field_error(line_no, "reaction_time_ms", "must be positive, got " + rt.dump());
    }

    const auto& correct = require(obj, "responder_correct", line_no);
    if (!correct.is_boolean()) {
        field_error(line_no, "responder_correct", "must be a boolean");
    }
    r.responder_correct = correct.get<bool>();

    const auto& kind = require(obj, "trial_kind", line_no);
    const auto parsed = kind.is_string() ? parse_trial_kind(kind.get<std::string>()) : std::nullopt;
    if (!parsed) {
        field_error(line_no, "trial_kind", "must be one of match6, afc2, transcription");
    }
    r.trial_kind = *parsed;

    const auto& annotator = require(obj, "annotator_id", line_no);
    if (!annotator.is_string()) {
        field_error(line_no, "annotator_id", "must be a string");
    }
    r.annotator_id = annotator.get<std::string>();
    return r;
}

json to_json(const AnnotationRecord& r) {
    json obj = json::object();
    obj["sample_id"] = r.sample_id;
    obj["class_label"] = r.class_label;
    obj["reaction_time_ms"] = r.reaction_time_ms;
    obj["responder_correct"] = r.responder_correct;
    obj["trial_kind"] = std::string(to_string(r.trial_kind));
    obj["annotator_id"] = r.annotator_id;
    return obj;
}

std::vector<AnnotationRecord> parse_annotations(std::string_view text) {
    std::vector<AnnotationRecord> records;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = text.find('\n', pos);
        auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") != std::string_view::npos) {
            records.push_back(parse_annotation(line, line_no));
        }
        if (end == std::string_view::npos) {
            break;
        }
        pos = end + 1;
    }
    return records;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open annotation file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str());
}

std::string format_annotations(const std::vector<AnnotationRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
    write_text_file(path, format_annotations(records));
}

}  // namespace percep::data
