#include "percep_tl/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "percep_tl/data/blob_store.hpp"
#include "percep_tl/error.hpp"

namespace percep::metrics {

using nlohmann::json;
namespace fs = std::filesystem;

double top1(const ad::Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.dim() != 2 || logits.extent(0) != labels.size()) {
        throw ShapeError("top1: logits " + ad::to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t k = logits.extent(1);
    const auto v = logits.values();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (v[r * k + c] > v[r * k + best]) best = c;
        }
        hits += best == labels[r] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double cer(std::string_view reference, std::string_view hypothesis) {
    if (reference.empty()) throw ConfigError("cer: empty reference");
    return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

double wer(std::string_view reference, std::string_view hypothesis) {
    const auto ref = split_words(reference);
    if (ref.empty()) throw ConfigError("wer: empty reference");
    return static_cast<double>(edit_distance(ref, split_words(hypothesis))) / static_cast<double>(ref.size());
}

MetricResult aggregate_seeds(std::string name, std::span<const double> values) {
    if (values.empty()) throw ConfigError("aggregate_seeds: no values for '" + name + "'");
    MetricResult r;
    r.name = std::move(name);
    r.values.assign(values.begin(), values.end());
    r.n_seeds = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    r.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        r.standard_error = sd / std::sqrt(static_cast<double>(values.size()));
    }
    return r;
}

double percent_diff(double original, double updated) {
    if (!(original > 0.0)) {
        throw ConfigError("percent_diff: original value must be positive, got " + std::to_string(original));
    }
    return (updated - original) / original * 100.0;
}

std::vector<TransferDiffRow> percent_diff_table(std::span<const TransferDiffInput> pairs) {
    std::vector<TransferDiffRow> out;
    for (const auto& p : pairs) {
        out.push_back({p.task, p.family, p.original, p.updated, percent_diff(p.original, p.updated), p.comparison});
    }
    return out;
}

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string signed_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.*f", decimals, v);
    return buf;
}

// Shortest round-tripping representation for CSV cells.
std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string render_diff_table(std::span<const TransferDiffRow> rows) {
    std::vector<std::vector<std::string>> cells{{"task", "family", "orig.", "new", "%diff", "comparison"}};
    for (const auto& r : rows) {
        cells.push_back({r.task, r.family, fixed(r.original, 2), fixed(r.updated, 2), signed_fixed(r.percent_diff, 1),
                         r.comparison});
    }
    // Column widths in UTF-8 code points so labels like "a→b" line up.
    auto display_width = [](const std::string& s) {
        return static_cast<std::size_t>(
            std::count_if(s.begin(), s.end(), [](char ch) { return (static_cast<unsigned char>(ch) & 0xC0) != 0x80; }));
    };
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
    }
    std::string out;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out += row[c];
            if (c + 1 < row.size()) out += std::string(width[c] - display_width(row[c]) + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

std::vector<double> ExperimentReport::values(const std::string& arm, const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : rows) {
        if (r.arm == arm && r.metric == metric) out.push_back(r.value);
    }
    return out;
}

const MetricResult* ExperimentReport::find_summary(const std::string& arm, const std::string& metric) const {
    for (const auto& s : summary) {
        if (s.arm == arm && s.result.name == metric) return &s.result;
    }
    return nullptr;
}

void summarize(ExperimentReport& report) {
    report.summary.clear();
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : report.rows) {
        const std::pair<std::string, std::string> key{r.arm, r.metric};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    for (const auto& [arm, metric] : keys) {
        const auto v = report.values(arm, metric);
        report.summary.push_back({arm, aggregate_seeds(metric, v)});
    }
}

json to_json(const ExperimentReport& r) {
    json rows = json::array();
    for (const auto& m : r.rows) {
        rows.push_back({{"seed", m.seed}, {"arm", m.arm}, {"metric", m.metric}, {"value", m.value}});
    }
    json summary = json::array();
    for (const auto& s : r.summary) {
        json e = {{"arm", s.arm},
                  {"metric", s.result.name},
                  {"values", s.result.values},
                  {"mean", s.result.mean},
                  {"n_seeds", s.result.n_seeds}};
        e["standard_error"] = s.result.standard_error ? json(*s.result.standard_error) : json(nullptr);
        summary.push_back(std::move(e));
    }
    json diff = json::array();
    for (const auto& d : r.transfer_diff) {
        diff.push_back({{"task", d.task},
                        {"family", d.family},
                        {"original", d.original},
                        {"new", d.updated},
                        {"percent_diff", d.percent_diff},
                        {"comparison", d.comparison}});
    }
    json curves = json::array();
    for (const auto& c : r.curves) {
        json pts = json::array();
        for (const auto& p : c.points) {
            pts.push_back({{"epoch", p.epoch}, {"split", p.split}, {"loss", p.loss}, {"accuracy", p.accuracy}});
        }
        curves.push_back({{"seed", c.seed}, {"arm", c.arm}, {"stage", c.stage}, {"points", std::move(pts)}});
    }
    json checks = json::array();
    for (const auto& f : r.frozen_checks) {
        checks.push_back({{"seed", f.seed}, {"arm", f.arm}, {"stage", f.stage}, {"before", hex(f.before)},
                          {"after", hex(f.after)}});
    }
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"seed", f.seed}, {"reason", f.reason}});
    json doc = {{"format_version", 1},
                {"experiment", r.experiment},
                {"seeds", r.seeds},
                {"partial", r.partial()},
                {"rows", std::move(rows)},
                {"summary", std::move(summary)},
                {"transfer_diff", std::move(diff)},
                {"curves", std::move(curves)},
                {"frozen_checks", std::move(checks)},
                {"failures", std::move(failures)}};
    if (r.generated_at) doc["generated_at"] = *r.generated_at;
    return doc;
}

ExperimentReport report_from_json(const json& doc) {
    data::require_format_version(doc, "report");
    ExperimentReport r;
    try {
        r.experiment = doc.at("experiment").get<std::string>();
        r.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& m : doc.at("rows")) {
            r.rows.push_back({m.at("seed").get<std::uint64_t>(), m.at("arm").get<std::string>(),
                              m.at("metric").get<std::string>(), m.at("value").get<double>()});
        }
        for (const auto& s : doc.at("summary")) {
            MetricResult m;
            m.name = s.at("metric").get<std::string>();
            m.values = s.at("values").get<std::vector<double>>();
            m.mean = s.at("mean").get<double>();
            m.n_seeds = s.at("n_seeds").get<std::size_t>();
            if (!s.at("standard_error").is_null()) m.standard_error = s["standard_error"].get<double>();
            r.summary.push_back({s.at("arm").get<std::string>(), std::move(m)});
        }
        for (const auto& d : doc.at("transfer_diff")) {
            r.transfer_diff.push_back({d.at("task").get<std::string>(), d.at("family").get<std::string>(),
                                       d.at("original").get<double>(), d.at("new").get<double>(),
                                       d.at("percent_diff").get<double>(), d.at("comparison").get<std::string>()});
        }
        for (const auto& c : doc.at("curves")) {
            CurveSet set{c.at("seed").get<std::uint64_t>(), c.at("arm").get<std::string>(),
                         c.at("stage").get<std::string>(), {}};
            for (const auto& p : c.at("points")) {
                set.points.push_back({p.at("epoch").get<std::size_t>(), p.at("split").get<std::string>(),
                                      p.at("loss").get<double>(), p.at("accuracy").get<double>()});
            }
            r.curves.push_back(std::move(set));
        }
        for (const auto& f : doc.at("frozen_checks")) {
            r.frozen_checks.push_back({f.at("seed").get<std::uint64_t>(), f.at("arm").get<std::string>(),
                                       f.at("stage").get<std::string>(), parse_hex(f.at("before").get<std::string>()),
                                       parse_hex(f.at("after").get<std::string>())});
        }
        for (const auto& f : doc.at("failures")) {
            r.failures.push_back({f.at("seed").get<std::uint64_t>(), f.at("reason").get<std::string>()});
        }
        if (doc.contains("generated_at")) r.generated_at = doc["generated_at"].get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
    return r;
}

void emit_report(const ExperimentReport& r, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "tables", ec);
    if (ec) throw Error("cannot create report directory " + dir.string() + ": " + ec.message());
    data::write_json_file(dir / "report.json", to_json(r));

    std::string metrics = "seed,arm,metric,value\n";
    for (const auto& m : r.rows) {
        metrics += std::to_string(m.seed) + "," + csv_cell(m.arm) + "," + csv_cell(m.metric) + "," + exact(m.value) + "\n";
    }
    data::write_text_file(dir / "tables" / "metrics.csv", metrics);

    std::string summary = "arm,metric,mean,standard_error,n_seeds\n";
    for (const auto& s : r.summary) {
        summary += csv_cell(s.arm) + "," + csv_cell(s.result.name) + "," + exact(s.result.mean) + "," +
                   (s.result.standard_error ? exact(*s.result.standard_error) : std::string()) + "," +
                   std::to_string(s.result.n_seeds) + "\n";
    }
    data::write_text_file(dir / "tables" / "summary.csv", summary);

    std::string diff = "task,family,orig,new,pct_diff,comparison\n";
    for (const auto& d : r.transfer_diff) {
        diff += csv_cell(d.task) + "," + csv_cell(d.family) + "," + fixed(d.original, 2) + "," + fixed(d.updated, 2) +
                "," + signed_fixed(d.percent_diff, 1) + "," + csv_cell(d.comparison) + "\n";
    }
    data::write_text_file(dir / "tables" / "transfer_diff.csv", diff);
    data::write_text_file(dir / "tables" / "transfer_diff.txt", render_diff_table(r.transfer_diff));

    std::string curves = "seed,arm,stage,epoch,split,loss,accuracy\n";
    for (const auto& c : r.curves) {
        for (const auto& p : c.points) {
            curves += std::to_string(c.seed) + "," + csv_cell(c.arm) + "," + csv_cell(c.stage) + "," +
                      std::to_string(p.epoch) + "," + p.split + "," + exact(p.loss) + "," + exact(p.accuracy) + "\n";
        }
    }
    data::write_text_file(dir / "tables" / "curves.csv", curves);
}

ExperimentReport load_report(const fs::path& dir) { return report_from_json(data::read_json_file(dir / "report.json")); }

double max_metric_difference(const ExperimentReport& a, const ExperimentReport& b) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (a.rows.size() != b.rows.size()) return inf;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        const auto& x = a.rows[i];
        const auto& y = b.rows[i];
        if (x.seed != y.seed || x.arm != y.arm || x.metric != y.metric) return inf;
        worst = std::max(worst, std::fabs(x.value - y.value));
    }
    return worst;
}

}  // namespace percep::metrics
