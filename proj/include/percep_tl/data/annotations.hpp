#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace percep::data {

enum class TrialKind { match6, afc2, transcription };

std::string_view to_string(TrialKind kind);
std::optional<TrialKind> parse_trial_kind(std::string_view text);

// One timed human response to a stimulus.
struct AnnotationRecord {
    std::string sample_id;
    std::size_t class_label = 0;
    double reaction_time_ms = 0.0;
    bool responder_correct = false;
    TrialKind trial_kind = TrialKind::match6;
    std::string annotator_id;

    bool operator==(const AnnotationRecord&) const = default;
};

// Parses one JSONL line; `line_no` is used in error messages.
AnnotationRecord parse_annotation(std::string_view line, std::size_t line_no);
nlohmann::json to_json(const AnnotationRecord& record);

// One record per line. Blank lines are skipped; unknown fields are ignored.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
std::vector<AnnotationRecord> parse_annotations(std::string_view text);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);
std::string format_annotations(const std::vector<AnnotationRecord>& records);

}  // namespace percep::data
