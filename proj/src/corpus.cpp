#include "deferral/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "deferral/error.hpp"
#include "deferral/rng.hpp"

namespace deferral {

using nlohmann::json;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Calls fn(line_number, json) for every non-blank line.
template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = text.find('\n', pos);
        const auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        ++line_no;
        if (std::any_of(line.begin(), line.end(), [](char c) { return !is_space(c); })) {
            json record;
            try {
                record = json::parse(line);
            } catch (const json::parse_error& e) {
                throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
            }
            if (!record.is_object()) {
                throw DataError("line " + std::to_string(line_no) + ": record is not an object");
            }
            try {
                fn(line_no, record);
            } catch (const json::exception& e) {
                throw DataError("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
}

std::string require_string(const json& record, const char* key, std::size_t line_no) {
    if (!record.contains(key) || !record[key].is_string()) {
        throw DataError("line " + std::to_string(line_no) + ": missing string field '" + key + "'");
    }
    return record[key].get<std::string>();
}

std::optional<int> parse_positive_int(std::string_view digits) {
    if (digits.empty() || digits.size() > 9) return std::nullopt;
    int value = 0;
    for (char c : digits) {
        if (!is_digit(c)) return std::nullopt;
        value = value * 10 + (c - '0');
    }
    return value;
}

}  // namespace

std::string to_string(const CanonicalAnswer& answer) {
    return std::visit(
        [](const auto& a) -> std::string {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, OptionIndex>) {
                return "Option " + std::to_string(a.value);
            } else {
                return a.value;
            }
        },
        answer);
}

bool is_resolved(const CanonicalAnswer& answer) { return !std::holds_alternative<Unresolvable>(answer); }

GroupMap GroupMap::with_default_deception_merge() {
    GroupMap map;
    for (const char* name : {"Hidden_Agenda", "Hidden Agenda", "SHADE-Arena", "SHADE_Arena", "Web_of_Lies",
                             "Web of Lies"}) {
        map.set(name, "deception");
    }
    return map;
}

std::string GroupMap::group_of(const std::string& dataset) const {
    const auto it = groups_.find(dataset);
    return it == groups_.end() ? dataset : it->second;
}

ItemSet::ItemSet(std::vector<Item> items) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (!index_.emplace(items_[i].item_id, i).second) {
            throw DataError("duplicate item_id '" + items_[i].item_id + "'");
        }
    }
}

const Item& ItemSet::at(const std::string& item_id) const {
    const Item* item = find(item_id);
    if (item == nullptr) throw DataError("unknown item_id '" + item_id + "'");
    return *item;
}

const Item* ItemSet::find(const std::string& item_id) const {
    const auto it = index_.find(item_id);
    return it == index_.end() ? nullptr : &items_[it->second];
}

std::vector<std::string> ItemSet::datasets() const {
    std::set<std::string> names;
    for (const auto& item : items_) names.insert(item.dataset);
    return {names.begin(), names.end()};
}

std::vector<std::string> ItemSet::groups() const {
    std::set<std::string> names;
    for (const auto& item : items_) names.insert(item.group);
    return {names.begin(), names.end()};
}

std::string_view to_string(Condition condition) {
    switch (condition) {
        case Condition::baseline: return "baseline";
        case Condition::top2: return "top2";
        case Condition::delegation: return "delegation";
    }
    return "baseline";
}

std::optional<Condition> parse_condition(std::string_view text) {
    if (text == "baseline") return Condition::baseline;
    if (text == "top2") return Condition::top2;
    if (text == "delegation") return Condition::delegation;
    return std::nullopt;
}

bool identity_less(const Response& a, const Response& b) {
    if (a.side != b.side) return a.side < b.side;
    if (a.side == Side::ai) return a.sample_index < b.sample_index;
    return a.participant_id < b.participant_id;
}

std::optional<std::string> canonical_decimal(std::string_view text) {
    std::size_t i = 0;
    bool negative = false;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
        negative = text[i] == '-';
        ++i;
    }
    const std::size_t int_begin = i;
    while (i < text.size() && is_digit(text[i])) ++i;
    std::string_view int_part = text.substr(int_begin, i - int_begin);
    std::string_view frac_part;
    if (i < text.size() && text[i] == '.') {
        ++i;
        const std::size_t frac_begin = i;
        while (i < text.size() && is_digit(text[i])) ++i;
        frac_part = text.substr(frac_begin, i - frac_begin);
    }
    if (i != text.size() || (int_part.empty() && frac_part.empty())) return std::nullopt;

    while (int_part.size() > 1 && int_part.front() == '0') int_part.remove_prefix(1);
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.remove_suffix(1);

    std::string out = int_part.empty() ? "0" : std::string(int_part);
    if (!frac_part.empty()) {
        out += '.';
        out += frac_part;
    }
    if (negative && out != "0") out.insert(out.begin(), '-');
    return out;
}

std::string normalize_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    }
    while (!out.empty() && (is_terminal_punct(out.back()) || is_space(out.back()))) out.pop_back();
    if (auto number = canonical_decimal(out)) return *number;
    return out;
}

CanonicalAnswer canonicalize_answer(std::string_view raw, const Item& item) {
    std::string text = normalize_text(raw);
    if (item.kind == AnswerKind::ft) return NormalizedText{std::move(text)};

    auto in_range = [&](int n) { return n >= 1 && n <= item.option_count; };

    // "option N" label (also "option #N" / "optionN").
    if (text.rfind("option", 0) == 0) {
        std::string_view rest = std::string_view(text).substr(6);
        while (!rest.empty() && (rest.front() == ' ' || rest.front() == '#')) rest.remove_prefix(1);
        if (auto n = parse_positive_int(rest); n && in_range(*n)) return OptionIndex{*n};
    }
    // Exact option text beats a bare number, so numeric option texts resolve by content.
    for (std::size_t k = 0; k < item.options.size(); ++k) {
        if (normalize_text(item.options[k]) == text) return OptionIndex{static_cast<int>(k) + 1};
    }
    if (auto n = parse_positive_int(text); n && in_range(*n)) return OptionIndex{*n};
    return Unresolvable{std::move(text)};
}

ItemSet parse_items(std::string_view jsonl, const GroupMap& groups) {
    std::vector<Item> items;
    std::set<std::string> seen;
    for_each_record(jsonl, [&](std::size_t line_no, const json& r) {
        Item item;
        item.item_id = require_string(r, "item_id", line_no);
        item.dataset = require_string(r, "dataset", line_no);
        const std::string kind = require_string(r, "kind", line_no);
        const std::string where = "line " + std::to_string(line_no) + " (item '" + item.item_id + "')";
        if (!seen.insert(item.item_id).second) {
            throw DataError(where + ": duplicate item_id");
        }
        if (kind == "MC") {
            item.kind = AnswerKind::mc;
        } else if (kind == "FT") {
            item.kind = AnswerKind::ft;
        } else {
            throw DataError(where + ": kind must be MC or FT");
        }
        if (r.contains("options")) item.options = r.at("options").get<std::vector<std::string>>();
        if (item.kind == AnswerKind::mc) {
            if (r.contains("option_count")) {
                item.option_count = r.at("option_count").get<int>();
            } else {
                item.option_count = static_cast<int>(item.options.size());
            }
            if (item.option_count < 2) throw DataError(where + ": MC item needs option_count >= 2");
            if (!item.options.empty() && static_cast<int>(item.options.size()) != item.option_count) {
                throw DataError(where + ": options length disagrees with option_count");
            }
        }
        if (!r.contains("gold")) throw DataError(where + ": missing field 'gold'");
        const json& gold = r.at("gold");
        if (gold.is_number_integer()) {
            item.gold_raw = std::to_string(gold.get<long long>());
        } else if (gold.is_string()) {
            item.gold_raw = gold.get<std::string>();
        } else {
            throw DataError(where + ": gold must be an integer or string");
        }
        item.gold = canonicalize_answer(item.gold_raw, item);
        if (item.kind == AnswerKind::mc && !std::holds_alternative<OptionIndex>(item.gold)) {
            throw DataError(where + ": gold '" + item.gold_raw + "' is not a valid option (1.." +
                            std::to_string(item.option_count) + ")");
        }
        if (r.contains("context_ref") && !r["context_ref"].is_null()) {
            item.context_ref = r["context_ref"].get<std::string>();
        }
        item.group = groups.group_of(item.dataset);
        items.push_back(std::move(item));
    });
    return ItemSet(std::move(items));
}

ResponseSet parse_responses(std::string_view jsonl, const ItemSet& items) {
    ResponseSet out;
    std::set<std::tuple<std::string, Side, int, std::string, Condition>> seen;
    for_each_record(jsonl, [&](std::size_t line_no, const json& r) {
        Response resp;
        resp.item_id = require_string(r, "item_id", line_no);
        const std::string where = "line " + std::to_string(line_no) + " (item '" + resp.item_id + "')";
        const Item* item = items.find(resp.item_id);
        if (item == nullptr) throw DataError(where + ": unknown item_id");
        const std::string side = require_string(r, "side", line_no);
        if (side == "ai") {
            resp.side = Side::ai;
            resp.sample_index = r.at("sample_index").get<int>();
            if (resp.sample_index < 0) throw DataError(where + ": negative sample_index");
        } else if (side == "human") {
            resp.side = Side::human;
            resp.participant_id = require_string(r, "participant_id", line_no);
            if (r.contains("condition")) {
                auto cond = parse_condition(r.at("condition").get<std::string>());
                if (!cond) throw DataError(where + ": unknown condition");
                resp.condition = *cond;
            }
        } else {
            throw DataError(where + ": side must be 'ai' or 'human'");
        }
        resp.raw_answer = require_string(r, "raw_answer", line_no);
        if (!r.contains("confidence") || !r["confidence"].is_number()) {
            throw DataError(where + ": missing numeric confidence");
        }
        resp.reported_confidence = r["confidence"].get<double>();
        resp.confidence = resp.side == Side::human ? resp.reported_confidence / 100.0 : resp.reported_confidence;
        if (!(resp.confidence >= 0.0 && resp.confidence <= 1.0)) {
            throw DataError(where + ": confidence out of range");
        }
        resp.canonical = canonicalize_answer(resp.raw_answer, *item);
        if (!seen.emplace(resp.item_id, resp.side, resp.sample_index, resp.participant_id, resp.condition).second) {
            throw DataError(where + ": duplicate response");
        }
        out.push_back(std::move(resp));
    });
    return out;
}

ItemSet load_items(const std::filesystem::path& path, const GroupMap& groups) {
    try {
        return parse_items(read_file(path), groups);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

ResponseSet load_responses(const std::filesystem::path& path, const ItemSet& items) {
    try {
        return parse_responses(read_file(path), items);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string serialize_items(const ItemSet& items) {
    std::string out;
    for (const auto& item : items.items()) {
        json r;
        r["item_id"] = item.item_id;
        r["dataset"] = item.dataset;
        r["kind"] = item.kind == AnswerKind::mc ? "MC" : "FT";
        if (item.kind == AnswerKind::mc) r["option_count"] = item.option_count;
        if (!item.options.empty()) r["options"] = item.options;
        r["gold"] = item.gold_raw;
        if (item.context_ref) r["context_ref"] = *item.context_ref;
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::string serialize_responses(const ResponseSet& responses) {
    std::string out;
    for (const auto& resp : responses) {
        json r;
        r["item_id"] = resp.item_id;
        if (resp.side == Side::ai) {
            r["side"] = "ai";
            r["sample_index"] = resp.sample_index;
        } else {
            r["side"] = "human";
            r["participant_id"] = resp.participant_id;
            r["condition"] = std::string(to_string(resp.condition));
        }
        r["raw_answer"] = resp.raw_answer;
        r["confidence"] = resp.reported_confidence;
        out += r.dump();
        out += '\n';
    }
    return out;
}

bool SplitAssignment::in_calibration(const std::string& item_id) const {
    const auto it = part.find(item_id);
    return it != part.end() && it->second == SplitPart::calibration;
}

std::size_t SplitAssignment::calibration_count() const {
    return static_cast<std::size_t>(
        std::count_if(part.begin(), part.end(), [](const auto& kv) { return kv.second == SplitPart::calibration; }));
}

std::size_t SplitAssignment::test_count() const { return part.size() - calibration_count(); }

SplitAssignment split_calibration_test(const ItemSet& items, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
    std::map<std::string, std::vector<std::string>> by_dataset;
    for (const auto& item : items.items()) by_dataset[item.dataset].push_back(item.item_id);

    SplitAssignment out;
    out.fraction = fraction;
    out.seed = seed;
    for (auto& [dataset, ids] : by_dataset) {
        if (ids.size() < 2) {
            throw DataError("dataset '" + dataset + "' has fewer than 2 items; cannot stratify");
        }
        std::sort(ids.begin(), ids.end());
        Pcg32 rng(seed, fnv1a64(dataset));
        shuffle(std::span<std::string>(ids), rng);
        const auto n_cal = static_cast<std::size_t>(std::round(fraction * static_cast<double>(ids.size())));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out.part[ids[i]] = i < n_cal ? SplitPart::calibration : SplitPart::test;
        }
    }
    return out;
}

ResponseSet cap_human_responses(const ResponseSet& responses, int max_per_item, std::uint64_t seed) {
    if (max_per_item < 1) throw ConfigError("cap must be >= 1");
    std::map<std::pair<std::string, Condition>, std::vector<std::string>> participants;
    for (const auto& r : responses) {
        if (r.side == Side::human) participants[{r.item_id, r.condition}].push_back(r.participant_id);
    }
    std::set<std::tuple<std::string, Condition, std::string>> kept;
    for (auto& [key, ids] : participants) {
        std::sort(ids.begin(), ids.end());
        if (ids.size() > static_cast<std::size_t>(max_per_item)) {
            Pcg32 rng(seed);
            shuffle(std::span<std::string>(ids), rng);
            ids.resize(static_cast<std::size_t>(max_per_item));
        }
        for (const auto& id : ids) kept.emplace(key.first, key.second, id);
    }

    ResponseSet out;
    for (const auto& r : responses) {
        if (r.side == Side::ai || kept.contains({r.item_id, r.condition, r.participant_id})) out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const Response& a, const Response& b) {
        if (a.item_id != b.item_id) return a.item_id < b.item_id;
        if (a.side != b.side || a.sample_index != b.sample_index || a.participant_id != b.participant_id) {
            return identity_less(a, b);
        }
        return a.condition < b.condition;
    });
    return out;
}

}  // namespace deferral
