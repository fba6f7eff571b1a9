#pragma once

// Complementarity analytics and the resampling statistics behind them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deferral/corpus.hpp"
#include "deferral/route.hpp"

namespace deferral {

// Per-item correctness of both sides, the input to quadrant and oracle analyses.
struct PairedOutcome {
    std::string item_id;
    std::string dataset;
    bool ai_correct = false;
    bool human_correct = false;
    double ai_conf = 0.0;
};

std::vector<PairedOutcome> paired_outcomes(std::span<const PairedItem> items);  // majority judgments

struct QuadrantCounts {
    std::size_t both_correct = 0;
    std::size_t ai_only = 0;
    std::size_t human_only = 0;
    std::size_t neither = 0;

    std::size_t total() const { return both_correct + ai_only + human_only + neither; }
    double percent(std::size_t count) const;
    bool operator==(const QuadrantCounts&) const = default;
};

QuadrantCounts agreement_quadrants(std::span<const PairedOutcome> outcomes);

// Mean AI confidence per quadrant; absent for empty quadrants.
struct QuadrantConfidence {
    std::optional<double> both_correct;
    std::optional<double> ai_only;
    std::optional<double> human_only;
    std::optional<double> neither;
};

QuadrantConfidence confidence_by_category(std::span<const PairedOutcome> outcomes);

struct OracleRow {
    std::string dataset;
    std::size_t n = 0;
    double human_accuracy = 0.0;
    double ai_accuracy = 0.0;
    double hybrid_accuracy = 0.0;
    double oracle_accuracy = 0.0;
    double headroom = 0.0;  // oracle - ai
    double captured = 0.0;  // hybrid - ai
    std::optional<double> capture_rate;  // captured / headroom, only when headroom > 0
};

struct OracleReport {
    std::vector<OracleRow> rows;
    OracleRow overall;
    QuadrantCounts quadrants;
};

// `hybrid` must be a majority-mode report over the same items.
OracleReport oracle_bound(std::span<const PairedOutcome> outcomes, const AccuracyReport& hybrid);

enum class SubsetRounding { floor, ceil };

struct SubsetSpec {
    double default_fraction = 0.10;
    std::map<std::string, double> per_dataset;  // dataset -> fraction
    SubsetRounding rounding = SubsetRounding::floor;

    double fraction_for(const std::string& dataset) const;
};

struct ConfidenceEntry {
    std::string item_id;
    std::string dataset;
    double confidence = 0.0;
};

// Per dataset: sort ascending by confidence (ties by item_id), keep the first
// floor/ceil(fraction * n).
std::set<std::string> select_low_confidence_subset(std::span<const ConfidenceEntry> entries, const SubsetSpec& spec);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap of the mean. Resample r draws from Pcg32(seed, r), so the
// result does not depend on how resamples are scheduled across threads.
Interval bootstrap_ci(const std::vector<bool>& observations, int n_resamples, std::uint64_t seed, double level = 0.95,
                      int threads = 1);

// Percentile bootstrap of mean(a) - mean(b), resampling each group independently.
Interval bootstrap_diff_ci(const std::vector<bool>& a, const std::vector<bool>& b, int n_resamples, std::uint64_t seed,
                           double level = 0.95, int threads = 1);

// Two-sided label-permutation test on mean(a) - mean(b), add-one smoothed.
double permutation_test(const std::vector<bool>& a, const std::vector<bool>& b, int n_permutations, std::uint64_t seed,
                        int threads = 1);

struct ZTest {
    double z = 0.0;
    double p = 1.0;
    bool degenerate = false;  // pooled proportion was 0 or 1
};

ZTest two_proportion_ztest(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2);

struct OverrelianceCell {
    Condition condition = Condition::baseline;
    bool ai_correct = false;
    std::size_t observations = 0;
    std::size_t items = 0;
    double accuracy = 0.0;
    Interval ci;
};

struct OverrelianceContrast {
    bool ai_correct = false;
    Condition first = Condition::top2;
    Condition second = Condition::baseline;
    double difference = 0.0;  // accuracy(first) - accuracy(second)
    Interval ci;
    double p_value = 1.0;
};

struct OverrelianceReport {
    std::vector<OverrelianceCell> cells;
    std::vector<OverrelianceContrast> contrasts;
};

struct ResamplingSettings {
    int bootstrap_resamples = 10000;
    std::uint64_t bootstrap_seed = 42;
    int permutations = 10000;
    std::uint64_t permutation_seed = 42;
    double level = 0.95;
    int threads = 1;
};

// Item -> individual human judgments per condition, plus AI correctness.
struct ConditionObservations {
    std::string item_id;
    bool ai_correct = false;
    std::map<Condition, std::vector<Judgment>> individual;
};

OverrelianceReport overreliance_report(std::span<const ConditionObservations> items,
                                       const ResamplingSettings& settings);

struct Subtask {
    std::string text_ref;
    double ai_confidence = 0.0;
    bool routed_to_human = false;
    bool human_answer_present = false;
};

struct DelegationRecord {
    std::string item_id;
    std::string dataset;  // from the record, or resolved through the item set
    std::vector<Subtask> subtasks;
};

// Lines: {"item_id", "dataset"?, "subtasks": [{"text_ref", "ai_confidence",
// "routed_to_human"?, "human_answer_present"?}]}. A missing routed flag is
// derived from the threshold.
std::vector<DelegationRecord> parse_decompositions(std::string_view jsonl, const ItemSet* items, double threshold);
std::vector<DelegationRecord> load_decompositions(const std::filesystem::path& path, const ItemSet* items,
                                                  double threshold);

struct DelegationRow {
    std::string dataset;
    std::size_t items = 0;
    std::size_t subtasks = 0;
    std::size_t routed = 0;
    double mean_conf_routed = 0.0;
    double mean_conf_kept = 0.0;

    double avg_subtasks() const;
    double avg_routed() const;
    double avg_kept() const;
    double percent_routed() const;  // pooled over subtasks
};

struct DelegationViolation {
    std::string item_id;
    std::size_t subtask_index = 0;
    double ai_confidence = 0.0;
    bool routed_to_human = false;
};

struct DelegationReport {
    double threshold = 0.8;
    std::vector<DelegationRow> rows;
    DelegationRow overall;
    std::vector<DelegationViolation> violations;
};

DelegationReport delegation_stats(std::span<const DelegationRecord> records, double threshold = 0.8);

}  // namespace deferral
