#pragma once

// Report tables, deterministic emission (markdown, CSV, JSON) and the manifest.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deferral/config.hpp"
#include "deferral/pipeline.hpp"

namespace deferral {

inline constexpr const char* artifact_name = "deferral-lab";
inline constexpr const char* artifact_version = "1.0.0";

// A numeric or text cell. Machine formats carry the full-precision value;
// markdown renders with the display precision of the kind.
struct Cell {
    enum class Kind {
        empty,
        text,
        count,
        percent,     // value in percent units, shown "69.3%"
        pp,          // signed percentage points, shown "+0.4pp"
        signed_num,  // signed, one decimal, shown "+0.4"
        real,        // shown with `decimals`
        pvalue,      // shown with three decimals, "<0.001" below that
        percent_ci,  // percent value with interval [lo, hi] in percent units
        interval,    // signed interval [lo, hi] in percentage points
    };
    Kind kind = Kind::empty;
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    int decimals = 3;
    std::string text;
    std::string label;  // optional annotation shown after the value, e.g. "(2T)"

    static Cell none() { return {}; }
    static Cell str(std::string s);
    static Cell count(std::size_t n);
    static Cell percent(double fraction);  // takes a fraction in [0, 1]
    static Cell pp(double fraction_diff);  // takes a difference of fractions
    static Cell signed_points(double fraction_diff);
    static Cell real(double v, int decimals = 3);
    static Cell p_value(double p);
    static Cell percent_with_ci(double fraction, double lo, double hi);
    static Cell interval_pp(double lo, double hi);
};

struct Row {
    std::vector<Cell> cells;
    bool emphasis = false;
    std::string section;  // panel label, e.g. "Majority vote"
};

struct Table {
    std::string id;  // file stem
    std::string title;
    std::vector<std::string> columns;
    std::vector<Row> rows;
    std::vector<std::string> notes;
};

struct ReportBundle {
    std::vector<Table> tables;
    nlohmann::json manifest;

    const Table* find(const std::string& id) const;
};

struct StageArtifacts {
    PreparedCorpus corpus;
    CalibrationResult calibration;
    RoutingResult routing;
    AnalysisResult analysis;
};

// Builds every table and the manifest, then runs the cross-table
// consistency checks (throws InvariantViolation).
ReportBundle build_bundle(const RunConfig& config, const StageArtifacts& artifacts);

std::string render_markdown(const Table& table);
std::string render_csv(const Table& table);
nlohmann::json render_json(const Table& table);

// Writes <id>.md / <id>.csv / <id>.json per requested format, plus manifest.json.
void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir, const std::vector<std::string>& formats);

// Lowercase hex SHA-256 of a file's bytes, or of a string.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view data);

// Stage artifact persistence under <output_dir>/artifacts/<name>.json.
std::filesystem::path artifact_path(const RunConfig& config, const std::string& name);
void write_artifact(const RunConfig& config, const std::string& name, const nlohmann::json& j);
nlohmann::json read_artifact(const RunConfig& config, const std::string& name);

// Runs `fn`, prefixing any library error with the stage name while keeping its type.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn());

// Full run: validate, every stage, persist artifacts, emit the report.
ReportBundle run_pipeline(const RunConfig& config);

}  // namespace deferral

#include "deferral/error.hpp"

template <typename Fn>
auto deferral::run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const DegenerateLabels& e) {
        throw DegenerateLabels("stage " + stage + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError("stage " + stage + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError("stage " + stage + ": " + e.what());
    } catch (const InvariantViolation& e) {
        throw InvariantViolation("stage " + stage + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("stage " + stage + ": malformed JSON artifact: " + e.what());
    }
}
