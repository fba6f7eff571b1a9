#pragma once

// Stage-by-stage orchestration. Each stage result serializes to JSON so the
// CLI can persist it and later stages can be re-run on their own.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deferral/aggregate.hpp"
#include "deferral/analyze.hpp"
#include "deferral/calibrate.hpp"
#include "deferral/config.hpp"
#include "deferral/corpus.hpp"
#include "deferral/route.hpp"

namespace deferral {

// One item after aggregation: baseline pairing with raw confidences plus the
// AI-side signal family.
struct ItemRecord {
    PairedItem pair;
    AnswerKind kind = AnswerKind::mc;
    bool in_calibration = false;
    bool excluded = false;  // dataset left out of hybrid analyses
    SignalVector ai_signals;
    double ai_computed = 0.0;
};

// Option-1 selection counts over raw (uncapped) baseline human MC responses.
struct PositionCounts {
    std::size_t target_option1 = 0;
    std::size_t target_total = 0;
    double target_expected = 0.0;  // mean of 1 / option_count
    std::size_t other_option1 = 0;
    std::size_t other_total = 0;
    double other_expected = 0.0;
};

struct PreparedCorpus {
    SplitAssignment split;
    std::vector<ItemRecord> records;  // sorted by item_id
    std::map<Condition, std::map<std::string, HumanSide>> assisted;  // top2 / delegation human sides
    std::size_t response_count = 0;
    std::size_t human_dropped_by_cap = 0;
    PositionCounts positions;
};

PreparedCorpus prepare_corpus(const RunConfig& config);

// One calibrator evaluated on the test split.
struct MetricRow {
    std::string signal;  // confidence source, e.g. "ai_direct", "human", or a signal name
    CalibratorKind calibrator = CalibratorKind::identity;
    std::size_t n = 0;
    double accuracy = 0.0;
    std::optional<double> ece;
    std::optional<double> brier;
    std::optional<double> auroc;
    std::string note;  // set when fitting failed
};

struct ReliabilityCurve {
    std::string id;
    std::vector<ReliabilityPoint> points;
};

struct CalibrationResult {
    CalibrationMap ai_map;
    CalibrationMap human_map;
    std::map<Condition, CalibrationMap> condition_maps;
    std::vector<std::string> notes;
    std::vector<MetricRow> metrics;  // headline sources x calibrators
    std::vector<MetricRow> signals;  // AI signal family x calibrators
    std::vector<ReliabilityCurve> curves;
};

CalibrationResult calibrate_stage(const RunConfig& config, const PreparedCorpus& corpus);

// Records of non-excluded items with calibrated confidences applied to every judgment.
struct CalibratedCorpus {
    std::vector<PairedItem> items;  // baseline pairing
    std::map<Condition, std::map<std::string, HumanSide>> assisted;
    std::set<std::string> calibration_ids;
};

CalibratedCorpus apply_calibration(const PreparedCorpus& corpus, const CalibrationResult& calibration);

// Policy keys read "<scope>/<condition>/<mode>/<kind>", scope being "full" or "subset".
std::string policy_key(const std::string& scope, Condition condition, EvalMode mode, PolicyKind kind);

struct RoutingResult {
    std::set<std::string> subset;           // selected and complete
    std::set<std::string> subset_incomplete;  // selected but missing condition data
    std::map<std::string, RoutingPolicy> policies;
};

RoutingResult route_stage(const RunConfig& config, const PreparedCorpus& corpus, const CalibrationResult& calibration);

struct AnalysisResult {
    OverrelianceReport overreliance;
    std::size_t overreliance_items = 0;
    std::optional<DelegationReport> delegation;
    std::optional<ZTest> position_test;
};

AnalysisResult analyze_stage(const RunConfig& config, const PreparedCorpus& corpus,
                             const CalibrationResult& calibration, const RoutingResult& routing);

// Hybrid evaluations, recomputed from persisted policies.
struct Evaluation {
    std::string scope;  // "full" or "subset"
    Condition condition = Condition::baseline;
    EvalMode mode = EvalMode::majority;
    PolicyKind kind = PolicyKind::compare;
    AccuracyReport report;
};

std::vector<Evaluation> evaluate_all(const RunConfig& config, const PreparedCorpus& corpus,
                                     const CalibrationResult& calibration, const RoutingResult& routing);

nlohmann::json to_json(const PreparedCorpus& corpus);
PreparedCorpus prepared_corpus_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CalibrationResult& result);
CalibrationResult calibration_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoutingResult& result);
RoutingResult routing_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnalysisResult& result);
AnalysisResult analysis_result_from_json(const nlohmann::json& j);

}  // namespace deferral
