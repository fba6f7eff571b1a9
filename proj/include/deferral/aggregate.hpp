#pragma once

// Per-item aggregation of sampled or human responses into a single judgment.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deferral/corpus.hpp"

namespace deferral {

// Decides whether two canonical answers mean the same thing. The default is
// exact equality of canonical forms; an adjudication table can additionally
// declare pairs of free-text answers equivalent.
class EquivalenceOracle {
public:
    EquivalenceOracle() = default;

    // Each line: {"a": "...", "b": "...", "equivalent": true|false}.
    // Texts are normalized on load; "false" rows are accepted and ignored.
    static EquivalenceOracle from_adjudication_file(const std::filesystem::path& path);

    void add_equivalent(std::string_view a, std::string_view b);
    bool equivalent(const CanonicalAnswer& a, const CanonicalAnswer& b) const;
    bool has_table() const { return !pairs_.empty(); }
    std::size_t table_size() const { return pairs_.size(); }

private:
    std::set<std::pair<std::string, std::string>> pairs_;  // ordered (lo, hi)
};

struct Cluster {
    CanonicalAnswer representative;
    std::vector<Response> members;

    std::size_t size() const { return members.size(); }
    double mean_confidence() const;
};

// Clusters sorted by: size desc, mean confidence desc, representative asc.
struct ClusterSet {
    std::vector<Cluster> clusters;
    std::size_t total = 0;

    const Cluster& winner() const { return clusters.front(); }
};

ClusterSet cluster_responses(std::span<const Response> responses, const EquivalenceOracle& oracle);

struct MajorityAnswer {
    CanonicalAnswer answer;
    std::size_t supporters = 0;
};

MajorityAnswer select_majority(const ClusterSet& clusters);

// Mean self-reported confidence of the winning cluster.
double direct_ask_confidence(const ClusterSet& clusters);

// Normalized Shannon entropy over cluster proportions; 0 for a single cluster.
double normalized_entropy(const ClusterSet& clusters);

// MC: supporters / total. FT: 1 - normalized entropy.
double computed_confidence(const ClusterSet& clusters, AnswerKind kind);

inline constexpr double default_high_confidence_threshold = 0.9;

// Names of every ensemble signal, in report order.
const std::vector<std::string>& signal_names();

using SignalVector = std::map<std::string, double>;

SignalVector ensemble_signals(const ClusterSet& clusters,
                              double high_confidence_threshold = default_high_confidence_threshold);

struct ConfidenceMethod {
    enum class Kind { direct_ask, computed, signal } kind = Kind::direct_ask;
    std::string signal;  // when kind == signal

    static ConfidenceMethod parse(std::string_view text);  // throws ConfigError
    std::string name() const;
    bool operator==(const ConfidenceMethod&) const = default;
};

struct Judgment {
    std::string item_id;
    Side side = Side::ai;
    Condition condition = Condition::baseline;
    std::string participant_id;  // individual human judgments only
    CanonicalAnswer answer;
    std::size_t supporters = 0;
    std::size_t total = 0;
    double raw_confidence = 0.0;
    std::optional<double> calibrated_confidence;
    bool correct = false;

    double confidence() const { return calibrated_confidence.value_or(raw_confidence); }
    bool operator==(const Judgment&) const = default;
};

bool is_correct(const CanonicalAnswer& answer, const Item& item, const EquivalenceOracle& oracle);

// Throws DataError if `responses` is empty or mixes items.
Judgment judge(const Item& item, std::span<const Response> responses, const EquivalenceOracle& oracle,
               const ConfidenceMethod& method = {},
               double high_confidence_threshold = default_high_confidence_threshold);

// One singleton judgment per human response, ordered by participant_id.
std::vector<Judgment> individual_judgments(const Item& item, std::span<const Response> human_responses,
                                           const EquivalenceOracle& oracle);

}  // namespace deferral
