#include "deferral/route.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <nlohmann/json.hpp>

#include "deferral/error.hpp"

namespace deferral {

namespace {

struct Candidate {
    Thresholds thresholds;
    std::size_t correct = 0;
    std::size_t routed_to_human = 0;
};

std::tuple<double, double, double> key_of(PolicyKind kind, const Thresholds& t) {
    if (kind == PolicyKind::two_threshold) return {t.human_threshold, t.ai_threshold, 0.0};
    return {t.threshold, 0.0, 0.0};
}

// True when `a` should replace `b` as the incumbent best.
bool better(PolicyKind kind, const Candidate& a, const Candidate& b) {
    if (a.correct != b.correct) return a.correct > b.correct;
    if (a.routed_to_human != b.routed_to_human) return a.routed_to_human < b.routed_to_human;
    return key_of(kind, a.thresholds) < key_of(kind, b.thresholds);
}

Candidate score(PolicyKind kind, const Thresholds& t, std::span<const RoutingObservation* const> obs) {
    Candidate c{t, 0, 0};
    for (const auto* o : obs) {
        const Source s = decide(kind, t, o->ai_conf, o->human_conf);
        if (s == Source::human) {
            ++c.routed_to_human;
            c.correct += o->human_correct ? 1 : 0;
        } else {
            c.correct += o->ai_correct ? 1 : 0;
        }
    }
    return c;
}

GroupFit search_group(PolicyKind kind, std::span<const RoutingObservation* const> obs, const std::vector<double>& grid) {
    std::optional<Candidate> best;
    auto consider = [&](const Thresholds& t) {
        Candidate c = score(kind, t, obs);
        if (!best || better(kind, c, *best)) best = c;
    };
    switch (kind) {
        case PolicyKind::compare: consider({}); break;
        case PolicyKind::one_threshold:
        case PolicyKind::one_threshold_compare:
            for (double t : grid) consider({t, 0.0, 0.0});
            break;
        case PolicyKind::two_threshold:
            for (double th : grid) {
                for (double ta : grid) consider({0.0, th, ta});
            }
            break;
    }
    return {best->thresholds, obs.size(), best->correct, best->routed_to_human};
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::one_threshold: return "1T";
        case PolicyKind::two_threshold: return "2T";
        case PolicyKind::one_threshold_compare: return "1TC";
        case PolicyKind::compare: return "compare";
    }
    return "compare";
}

PolicyKind parse_policy_kind(std::string_view text) {
    if (text == "1T" || text == "one_threshold") return PolicyKind::one_threshold;
    if (text == "2T" || text == "two_threshold") return PolicyKind::two_threshold;
    if (text == "1TC" || text == "one_threshold_compare") return PolicyKind::one_threshold_compare;
    if (text == "compare") return PolicyKind::compare;
    throw ConfigError("unknown policy kind '" + std::string(text) + "'");
}

std::string_view to_string(EvalMode mode) { return mode == EvalMode::majority ? "majority" : "individual"; }

Source decide(PolicyKind kind, const Thresholds& t, double ai_conf, double human_conf) {
    switch (kind) {
        case PolicyKind::one_threshold: return ai_conf >= t.threshold ? Source::ai : Source::human;
        case PolicyKind::two_threshold:
            return (human_conf > t.human_threshold && ai_conf < t.ai_threshold) ? Source::human : Source::ai;
        case PolicyKind::one_threshold_compare:
            return (ai_conf >= t.threshold || ai_conf > human_conf) ? Source::ai : Source::human;
        case PolicyKind::compare: return ai_conf > human_conf ? Source::ai : Source::human;
    }
    return Source::ai;
}

namespace {

const Thresholds& thresholds_for(const RoutingPolicy& policy, const std::string& group) {
    static const Thresholds none{};
    if (policy.kind == PolicyKind::compare) return none;
    const auto it = policy.groups.find(group);
    if (it == policy.groups.end()) {
        throw DataError("policy " + std::string(to_string(policy.kind)) + " has no thresholds for group '" + group + "'");
    }
    return it->second.thresholds;
}

}  // namespace

Source decide(const RoutingPolicy& policy, const std::string& group, double ai_conf, double human_conf) {
    return decide(policy.kind, thresholds_for(policy, group), ai_conf, human_conf);
}

std::optional<Source> decide_without_human(const RoutingPolicy& policy, const std::string& group, double ai_conf) {
    const Thresholds& t = thresholds_for(policy, group);
    switch (policy.kind) {
        case PolicyKind::one_threshold:
        case PolicyKind::one_threshold_compare:
            if (ai_conf >= t.threshold) return Source::ai;
            break;
        case PolicyKind::two_threshold:
            if (!(ai_conf < t.ai_threshold)) return Source::ai;
            break;
        case PolicyKind::compare: break;
    }
    return std::nullopt;
}

std::vector<double> threshold_grid(double step) {
    if (!(step > 0.0 && step <= 1.0)) throw ConfigError("grid step must lie in (0, 1]");
    const double inverse = 1.0 / step;
    const auto n = static_cast<long>(std::llround(inverse));
    if (std::abs(inverse - static_cast<double>(n)) > 1e-9 * inverse) {
        throw ConfigError("grid step must divide 1 evenly");
    }
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n) + 1);
    for (long k = 0; k <= n; ++k) grid.push_back(static_cast<double>(k) / static_cast<double>(n));
    return grid;
}

RoutingPolicy learn_policy(PolicyKind kind, std::span<const RoutingObservation> observations, double step) {
    std::vector<std::string> groups;
    for (const auto& o : observations) groups.push_back(o.group);
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    return learn_policy(kind, observations, groups, step);
}

RoutingPolicy learn_policy(PolicyKind kind, std::span<const RoutingObservation> observations,
                           const std::vector<std::string>& required_groups, double step) {
    const auto grid = threshold_grid(step);
    std::map<std::string, std::vector<const RoutingObservation*>> by_group;
    for (const auto& g : required_groups) by_group[g];
    for (const auto& o : observations) by_group[o.group].push_back(&o);

    RoutingPolicy policy;
    policy.kind = kind;
    policy.step = step;
    for (const auto& [group, obs] : by_group) {
        if (obs.empty()) throw DataError("group '" + group + "' has no calibration observations");
        policy.groups[group] = search_group(kind, obs, grid);
    }
    return policy;
}

double AccuracyRow::ai_accuracy() const { return ratio(ai_correct, observations); }
double AccuracyRow::hybrid_accuracy() const { return ratio(hybrid_correct, observations); }
double AccuracyRow::oracle_accuracy() const { return ratio(oracle_correct, observations); }
double AccuracyRow::human_accuracy() const { return ratio(human_correct, human_observations); }
double AccuracyRow::human_share() const { return ratio(routed_to_human, observations); }

namespace {

void add_decision(AccuracyRow& row, const RoutedDecision& d) {
    ++row.observations;
    row.ai_correct += d.ai_correct ? 1 : 0;
    row.hybrid_correct += d.chosen_correct ? 1 : 0;
    row.oracle_correct += (d.ai_correct || d.human_correct.value_or(false)) ? 1 : 0;
    if (d.human_correct) {
        ++row.human_observations;
        row.human_correct += *d.human_correct ? 1 : 0;
    }
    row.routed_to_human += d.source == Source::human ? 1 : 0;
}

RoutedDecision route_one(const RoutingPolicy& policy, const PairedItem& item, const Judgment* human) {
    RoutedDecision d;
    d.item_id = item.item_id;
    d.dataset = item.dataset;
    d.ai_conf = item.ai.confidence();
    d.ai_correct = item.ai.correct;
    if (human != nullptr) {
        d.participant_id = human->participant_id;
        d.human_conf = human->confidence();
        d.human_correct = human->correct;
    }
    if (item.pinned_to_ai) {
        d.source = Source::ai;
    } else {
        d.source = decide(policy, item.group, d.ai_conf, *d.human_conf);
    }
    d.chosen_correct = d.source == Source::ai ? d.ai_correct : *d.human_correct;
    return d;
}

}  // namespace

AccuracyReport evaluate_hybrid(const RoutingPolicy& policy, std::span<const PairedItem> items, EvalMode mode) {
    AccuracyReport report;
    report.kind = policy.kind;
    report.mode = mode;
    std::map<std::string, AccuracyRow> rows;

    for (const auto& item : items) {
        AccuracyRow& row = rows[item.dataset];
        row.dataset = item.dataset;
        if (mode == EvalMode::majority) {
            if (!item.human.majority && !item.pinned_to_ai) {
                throw DataError("item '" + item.item_id + "' has no human majority judgment");
            }
            const Judgment* human = item.human.majority ? &*item.human.majority : nullptr;
            report.decisions.push_back(route_one(policy, item, human));
            add_decision(row, report.decisions.back());
            continue;
        }
        if (item.human.individual.empty()) {
            std::optional<Source> source = item.pinned_to_ai ? std::optional<Source>(Source::ai)
                                                             : decide_without_human(policy, item.group, item.ai.confidence());
            if (!source) {
                ++row.unroutable;
                continue;
            }
            report.decisions.push_back(route_one(policy, PairedItem{item.item_id, item.dataset, item.group, item.ai, {}, true}, nullptr));
            add_decision(row, report.decisions.back());
            continue;
        }
        for (const auto& human : item.human.individual) {
            report.decisions.push_back(route_one(policy, item, &human));
            add_decision(row, report.decisions.back());
        }
    }

    report.overall.dataset = "All";
    for (auto& [name, row] : rows) {
        if (row.hybrid_correct > row.oracle_correct || row.human_correct > row.oracle_correct ||
            row.ai_correct > row.oracle_correct) {
            throw InvariantViolation("hybrid accuracy exceeds the oracle bound on dataset '" + name + "'");
        }
        report.overall.observations += row.observations;
        report.overall.ai_correct += row.ai_correct;
        report.overall.hybrid_correct += row.hybrid_correct;
        report.overall.oracle_correct += row.oracle_correct;
        report.overall.human_observations += row.human_observations;
        report.overall.human_correct += row.human_correct;
        report.overall.routed_to_human += row.routed_to_human;
        report.overall.unroutable += row.unroutable;
        report.rows.push_back(row);
    }
    return report;
}

std::vector<PairedItem> condition_overlay(std::span<const PairedItem> base,
                                          const std::map<std::string, HumanSide>& condition,
                                          const std::set<std::string>& subset) {
    std::set<std::string> seen;
    std::vector<PairedItem> out;
    out.reserve(base.size());
    for (const auto& item : base) {
        PairedItem copy = item;
        if (subset.contains(item.item_id)) {
            const auto it = condition.find(item.item_id);
            if (it == condition.end()) {
                throw DataError("subset item '" + item.item_id + "' has no condition judgments");
            }
            copy.human = it->second;
            copy.pinned_to_ai = false;
            seen.insert(item.item_id);
        } else {
            copy.pinned_to_ai = true;
        }
        out.push_back(std::move(copy));
    }
    if (seen.size() != subset.size()) throw DataError("subset contains items outside the judgment set");
    return out;
}

std::vector<RoutingObservation> routing_observations(std::span<const PairedItem> items, EvalMode mode) {
    std::vector<RoutingObservation> out;
    for (const auto& item : items) {
        if (item.pinned_to_ai) continue;
        if (mode == EvalMode::majority) {
            if (!item.human.majority) continue;
            out.push_back({item.group, item.ai.confidence(), item.human.majority->confidence(), item.ai.correct,
                           item.human.majority->correct});
        } else {
            for (const auto& h : item.human.individual) {
                out.push_back({item.group, item.ai.confidence(), h.confidence(), item.ai.correct, h.correct});
            }
        }
    }
    return out;
}

nlohmann::json to_json(const RoutingPolicy& policy) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(policy.kind));
    j["step"] = policy.step;
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [name, fit] : policy.groups) {
        nlohmann::json g;
        switch (policy.kind) {
            case PolicyKind::one_threshold:
            case PolicyKind::one_threshold_compare: g["threshold"] = fit.thresholds.threshold; break;
            case PolicyKind::two_threshold:
                g["human_threshold"] = fit.thresholds.human_threshold;
                g["ai_threshold"] = fit.thresholds.ai_threshold;
                break;
            case PolicyKind::compare: break;
        }
        g["observations"] = fit.observations;
        g["correct"] = fit.correct;
        g["routed_to_human"] = fit.routed_to_human;
        groups[name] = g;
    }
    j["groups"] = groups;
    return j;
}

RoutingPolicy routing_policy_from_json(const nlohmann::json& j) {
    RoutingPolicy policy;
    try {
        policy.kind = parse_policy_kind(j.at("kind").get<std::string>());
        policy.step = j.at("step").get<double>();
        for (const auto& [name, g] : j.at("groups").items()) {
            GroupFit fit;
            fit.thresholds.threshold = g.value("threshold", 0.0);
            fit.thresholds.human_threshold = g.value("human_threshold", 0.0);
            fit.thresholds.ai_threshold = g.value("ai_threshold", 0.0);
            for (double t : {fit.thresholds.threshold, fit.thresholds.human_threshold, fit.thresholds.ai_threshold}) {
                if (!(t >= 0.0 && t <= 1.0)) throw DataError("threshold outside [0, 1] in group '" + name + "'");
            }
            fit.observations = g.value("observations", std::size_t{0});
            fit.correct = g.value("correct", std::size_t{0});
            fit.routed_to_human = g.value("routed_to_human", std::size_t{0});
            policy.groups[name] = fit;
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed routing policy: ") + e.what());
    }
    return policy;
}

}  // namespace deferral
