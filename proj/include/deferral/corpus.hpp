#pragma once

// Items, responses and the determinism rules for splitting and capping.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace deferral {

struct OptionIndex {
    int value = 0;  // 1-based
    auto operator<=>(const OptionIndex&) const = default;
};

struct NormalizedText {
    std::string value;
    auto operator<=>(const NormalizedText&) const = default;
};

// An MC answer that matched no option. Kept (never dropped) and always
// scored incorrect.
struct Unresolvable {
    std::string value;  // normalized raw text
    auto operator<=>(const Unresolvable&) const = default;
};

// Variant order doubles as the canonical ordering used for residual ties.
using CanonicalAnswer = std::variant<OptionIndex, NormalizedText, Unresolvable>;

std::string to_string(const CanonicalAnswer& answer);
bool is_resolved(const CanonicalAnswer& answer);

enum class AnswerKind { mc, ft };

struct Item {
    std::string item_id;
    std::string dataset;
    std::string group;
    AnswerKind kind = AnswerKind::mc;
    int option_count = 0;              // MC only
    std::vector<std::string> options;  // MC only, optional
    CanonicalAnswer gold;
    std::string gold_raw;
    std::optional<std::string> context_ref;

    bool operator==(const Item&) const = default;
};

// Dataset -> group label. Datasets absent from the map form their own group.
class GroupMap {
public:
    GroupMap() = default;
    explicit GroupMap(std::map<std::string, std::string> explicit_groups)
        : groups_(std::move(explicit_groups)) {}

    // Hidden Agenda, SHADE-Arena and Web of Lies share one "deception" group.
    static GroupMap with_default_deception_merge();

    std::string group_of(const std::string& dataset) const;
    const std::map<std::string, std::string>& entries() const { return groups_; }
    void set(const std::string& dataset, const std::string& group) { groups_[dataset] = group; }

private:
    std::map<std::string, std::string> groups_;
};

class ItemSet {
public:
    ItemSet() = default;
    // Throws DataError on a duplicate item_id.
    explicit ItemSet(std::vector<Item> items);

    const std::vector<Item>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    const Item& at(const std::string& item_id) const;
    const Item* find(const std::string& item_id) const;

    std::vector<std::string> datasets() const;  // sorted, unique
    std::vector<std::string> groups() const;    // sorted, unique

    bool operator==(const ItemSet& other) const { return items_ == other.items_; }

private:
    std::vector<Item> items_;
    std::map<std::string, std::size_t> index_;
};

enum class Side { ai, human };
enum class Condition { baseline, top2, delegation };

std::string_view to_string(Condition condition);
std::optional<Condition> parse_condition(std::string_view text);

struct Response {
    std::string item_id;
    Side side = Side::ai;
    int sample_index = 0;        // AI only
    std::string participant_id;  // human only
    Condition condition = Condition::baseline;
    std::string raw_answer;
    CanonicalAnswer canonical;
    double confidence = 0.0;           // always in [0, 1]
    double reported_confidence = 0.0;  // as read from file (human: 0-100)

    bool operator==(const Response&) const = default;
};

// Identity ordering: side, then sample_index (AI) or participant_id (human).
bool identity_less(const Response& a, const Response& b);

using ResponseSet = std::vector<Response>;

// Throws DataError with the 1-based line number on malformed records.
ItemSet load_items(const std::filesystem::path& path, const GroupMap& groups);
ResponseSet load_responses(const std::filesystem::path& path, const ItemSet& items);

ItemSet parse_items(std::string_view jsonl, const GroupMap& groups);
ResponseSet parse_responses(std::string_view jsonl, const ItemSet& items);
std::string serialize_items(const ItemSet& items);
std::string serialize_responses(const ResponseSet& responses);

// FT normalization: trim, ASCII case-fold, collapse whitespace, strip
// terminal punctuation, canonicalize plain decimal numbers.
std::string normalize_text(std::string_view raw);

// Returns the canonical decimal form when `text` is a plain decimal number.
std::optional<std::string> canonical_decimal(std::string_view text);

CanonicalAnswer canonicalize_answer(std::string_view raw, const Item& item);

enum class SplitPart { calibration, test };

struct SplitAssignment {
    std::map<std::string, SplitPart> part;
    double fraction = 0.0;
    std::uint64_t seed = 0;

    bool in_calibration(const std::string& item_id) const;
    std::size_t calibration_count() const;
    std::size_t test_count() const;
    bool operator==(const SplitAssignment&) const = default;
};

// Stratified per dataset: ids sorted, shuffled with Pcg32(seed, fnv1a(dataset)),
// the first round(fraction * n) go to calibration.
SplitAssignment split_calibration_test(const ItemSet& items, double fraction, std::uint64_t seed);

// Caps human responses per (item, condition). Participant ids are sorted,
// shuffled with a fresh Pcg32(seed) for each item, and the first
// `max_per_item` kept. AI responses pass through untouched. Output order is
// canonical (item_id, side, identity key, condition).
ResponseSet cap_human_responses(const ResponseSet& responses, int max_per_item,
                                std::uint64_t seed = 42);

}  // namespace deferral
