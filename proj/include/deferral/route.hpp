#pragma once

// Confidence-based routing between the AI answer and the human answer.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "deferral/aggregate.hpp"

namespace deferral {

enum class PolicyKind {
    one_threshold,          // AI iff ai >= T
    two_threshold,          // human iff human > T_h and ai < T_a
    one_threshold_compare,  // AI iff ai >= T or ai > human
    compare,                // AI iff ai > human
};

std::string_view to_string(PolicyKind kind);  // "1T", "2T", "1TC", "compare"
PolicyKind parse_policy_kind(std::string_view text);  // throws ConfigError

enum class Source { ai, human };

struct Thresholds {
    double threshold = 0.0;        // 1T, 1TC
    double human_threshold = 0.0;  // 2T
    double ai_threshold = 0.0;     // 2T

    bool operator==(const Thresholds&) const = default;
};

// Calibration-set outcome of the chosen grid point.
struct GroupFit {
    Thresholds thresholds;
    std::size_t observations = 0;
    std::size_t correct = 0;
    std::size_t routed_to_human = 0;

    bool operator==(const GroupFit&) const = default;
};

struct RoutingPolicy {
    PolicyKind kind = PolicyKind::compare;
    double step = 0.01;
    std::map<std::string, GroupFit> groups;

    bool operator==(const RoutingPolicy&) const = default;
};

Source decide(PolicyKind kind, const Thresholds& thresholds, double ai_conf, double human_conf);

// Throws DataError for a group the policy has no thresholds for (except compare).
Source decide(const RoutingPolicy& policy, const std::string& group, double ai_conf, double human_conf);

// Decision when the human side is missing; nullopt when it depends on it.
std::optional<Source> decide_without_human(const RoutingPolicy& policy, const std::string& group, double ai_conf);

// One (AI, human) pairing used for threshold learning.
struct RoutingObservation {
    std::string group;
    double ai_conf = 0.0;
    double human_conf = 0.0;
    bool ai_correct = false;
    bool human_correct = false;
};

// Grid values k / round(1 / step), k = 0 .. round(1 / step). Throws
// ConfigError when step does not divide 1.
std::vector<double> threshold_grid(double step);

// Exhaustive per-group grid search. Among accuracy maximizers the candidate
// sending the fewest observations to the human wins; remaining ties go to the
// lexicographically smallest thresholds (T, or (T_h, T_a)).
RoutingPolicy learn_policy(PolicyKind kind, std::span<const RoutingObservation> observations, double step = 0.01);

// Same, but every listed group must have at least one observation.
RoutingPolicy learn_policy(PolicyKind kind, std::span<const RoutingObservation> observations,
                           const std::vector<std::string>& required_groups, double step = 0.01);

struct HumanSide {
    std::optional<Judgment> majority;
    std::vector<Judgment> individual;

    bool operator==(const HumanSide&) const = default;
};

struct PairedItem {
    std::string item_id;
    std::string dataset;
    std::string group;
    Judgment ai;
    HumanSide human;
    bool pinned_to_ai = false;  // routed to AI regardless of policy

    bool operator==(const PairedItem&) const = default;
};

enum class EvalMode { majority, individual };

std::string_view to_string(EvalMode mode);

struct RoutedDecision {
    std::string item_id;
    std::string participant_id;
    std::string dataset;
    Source source = Source::ai;
    bool chosen_correct = false;
    bool ai_correct = false;
    std::optional<bool> human_correct;
    double ai_conf = 0.0;
    std::optional<double> human_conf;
};

struct AccuracyRow {
    std::string dataset;
    std::size_t observations = 0;
    std::size_t ai_correct = 0;
    std::size_t hybrid_correct = 0;
    std::size_t oracle_correct = 0;
    std::size_t human_observations = 0;
    std::size_t human_correct = 0;
    std::size_t routed_to_human = 0;
    std::size_t unroutable = 0;

    double ai_accuracy() const;
    double hybrid_accuracy() const;
    double oracle_accuracy() const;
    double human_accuracy() const;
    double human_share() const;
};

struct AccuracyReport {
    PolicyKind kind = PolicyKind::compare;
    EvalMode mode = EvalMode::majority;
    std::vector<AccuracyRow> rows;  // per dataset, sorted by name
    AccuracyRow overall;
    std::vector<RoutedDecision> decisions;
};

// Throws DataError when a side needed by `mode` is missing and
// InvariantViolation if any row beats its own oracle bound.
AccuracyReport evaluate_hybrid(const RoutingPolicy& policy, std::span<const PairedItem> items, EvalMode mode);

// Replaces the human side of subset items with the condition's judgments and
// pins every other item to the AI answer.
std::vector<PairedItem> condition_overlay(std::span<const PairedItem> base,
                                          const std::map<std::string, HumanSide>& condition,
                                          const std::set<std::string>& subset);

// Builds routing observations (one per item, or one per participant).
std::vector<RoutingObservation> routing_observations(std::span<const PairedItem> items, EvalMode mode);

nlohmann::json to_json(const RoutingPolicy& policy);
RoutingPolicy routing_policy_from_json(const nlohmann::json& j);

}  // namespace deferral
