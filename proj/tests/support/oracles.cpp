#include "oracles.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>

#include "deferral/rng.hpp"

namespace deferral::testing {

ReferenceFit isotonic_reference(std::span<const ScoredPair> pairs) {
    std::map<double, std::pair<double, double>> pooled;  // score -> (label sum, weight)
    for (const auto& p : pairs) {
        auto& [sum, weight] = pooled[p.score];
        sum += p.label ? 1.0 : 0.0;
        weight += 1.0;
    }
    ReferenceFit fit;
    std::vector<double> sums, weights;
    for (const auto& [score, sw] : pooled) {
        fit.scores.push_back(score);
        sums.push_back(sw.first);
        weights.push_back(sw.second);
    }
    const std::size_t n = fit.scores.size();
    for (std::size_t i = 0; i < n; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
            double worst = std::numeric_limits<double>::infinity();
            double s = 0.0, w = 0.0;
            for (std::size_t k = j; k < n; ++k) {
                s += sums[k];
                w += weights[k];
                if (k >= i) worst = std::min(worst, s / w);
            }
            best = std::max(best, worst);
        }
        fit.values.push_back(best);
    }
    return fit;
}

double auroc_bruteforce(std::span<const ScoredPair> pairs) {
    double wins = 0.0;
    std::size_t comparisons = 0;
    for (const auto& pos : pairs) {
        if (!pos.label) continue;
        for (const auto& neg : pairs) {
            if (neg.label) continue;
            ++comparisons;
            if (pos.score > neg.score) wins += 1.0;
            else if (pos.score == neg.score) wins += 0.5;
        }
    }
    return wins / static_cast<double>(comparisons);
}

bool reference_routes_to_ai(PolicyKind kind, const Thresholds& t, double ai_conf, double human_conf) {
    switch (kind) {
        case PolicyKind::one_threshold: return !(ai_conf < t.threshold);
        case PolicyKind::two_threshold: return !(human_conf > t.human_threshold && ai_conf < t.ai_threshold);
        case PolicyKind::one_threshold_compare: return !(ai_conf < t.threshold) || ai_conf > human_conf;
        case PolicyKind::compare: return ai_conf > human_conf;
    }
    return true;
}

std::vector<GridPoint> enumerate_grid(PolicyKind kind, std::span<const RoutingObservation> observations,
                                      int grid_steps) {
    auto evaluate = [&](const Thresholds& t) {
        GridPoint g{t, 0, 0};
        for (const auto& o : observations) {
            if (reference_routes_to_ai(kind, t, o.ai_conf, o.human_conf)) {
                g.correct += o.ai_correct ? 1 : 0;
            } else {
                ++g.routed_to_human;
                g.correct += o.human_correct ? 1 : 0;
            }
        }
        return g;
    };
    auto value = [&](int k) { return static_cast<double>(k) / static_cast<double>(grid_steps); };
    std::vector<GridPoint> out;
    if (kind == PolicyKind::compare) {
        out.push_back(evaluate({}));
    } else if (kind == PolicyKind::two_threshold) {
        for (int h = 0; h <= grid_steps; ++h) {
            for (int a = 0; a <= grid_steps; ++a) out.push_back(evaluate({0.0, value(h), value(a)}));
        }
    } else {
        for (int k = 0; k <= grid_steps; ++k) out.push_back(evaluate({value(k), 0.0, 0.0}));
    }
    return out;
}

std::vector<RoutingObservation> random_observations(std::uint64_t seed, std::size_t n, const std::string& group) {
    Pcg32 rng(seed, 17);
    std::vector<RoutingObservation> out;
    for (std::size_t i = 0; i < n; ++i) {
        RoutingObservation o;
        o.group = group;
        o.ai_conf = static_cast<double>(rng.bounded(21)) / 20.0;
        o.human_conf = static_cast<double>(rng.bounded(21)) / 20.0;
        // Correctness loosely follows confidence so that routing matters.
        o.ai_correct = rng.uniform() < 0.2 + 0.7 * o.ai_conf;
        o.human_correct = rng.uniform() < 0.2 + 0.6 * o.human_conf;
        out.push_back(o);
    }
    return out;
}

Judgment make_judgment(const std::string& item_id, Side side, bool correct, double confidence,
                       const std::string& participant) {
    Judgment j;
    j.item_id = item_id;
    j.side = side;
    j.participant_id = participant;
    j.answer = OptionIndex{correct ? 1 : 2};
    j.supporters = 1;
    j.total = 1;
    j.raw_confidence = confidence;
    j.calibrated_confidence = confidence;
    j.correct = correct;
    return j;
}

std::vector<PairedItem> oracle_table_fixture() {
    struct Block {
        std::size_t count;
        bool ai;
        bool human;
    };
    const Block blocks[] = {{390, true, true}, {266, true, false}, {85, false, true}, {211, false, false}};
    std::vector<PairedItem> items;
    std::size_t index = 0;
    std::size_t human_only_seen = 0;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.count; ++i, ++index) {
            char id[16];
            std::snprintf(id, sizeof id, "q-%04zu", index);
            PairedItem p;
            p.item_id = id;
            p.dataset = index % 2 == 0 ? "alpha" : "beta";
            p.group = p.dataset;
            double ai_conf = 0.6;
            if (!b.ai && b.human && human_only_seen++ < 4) ai_conf = 0.1;
            p.ai = make_judgment(id, Side::ai, b.ai, ai_conf);
            p.human.majority = make_judgment(id, Side::human, b.human, 0.3);
            p.human.individual.push_back(make_judgment(id, Side::human, b.human, 0.3, "P001"));
            items.push_back(std::move(p));
        }
    }
    return items;
}

std::vector<DelegationRecord> delegation_table_fixture() {
    struct Row {
        const char* dataset;
        std::size_t items;
        std::size_t subtasks;
        std::size_t routed;
    };
    const Row rows[] = {
        {"FACTS_search", 30, 146, 71}, {"QuALITY", 30, 208, 1},      {"Big-Bench", 77, 821, 189},
        {"GPQA_Diamond", 14, 99, 21},  {"Hidden_Agenda", 10, 99, 4}, {"HLE", 14, 141, 46},
        {"SHADE-Arena", 10, 133, 3},   {"Web_of_Lies", 10, 80, 10},
    };
    std::vector<DelegationRecord> out;
    for (const auto& r : rows) {
        std::size_t routed_left = r.routed;
        for (std::size_t i = 0; i < r.items; ++i) {
            DelegationRecord rec;
            char id[48];
            std::snprintf(id, sizeof id, "%s-%03zu", r.dataset, i);
            rec.item_id = id;
            rec.dataset = r.dataset;
            const std::size_t count = r.subtasks / r.items + (i < r.subtasks % r.items ? 1 : 0);
            for (std::size_t s = 0; s < count; ++s) {
                const bool routed = routed_left > 0;
                if (routed) --routed_left;
                rec.subtasks.push_back({rec.item_id + "/" + std::to_string(s), routed ? 0.55 : 0.92, routed, routed});
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace deferral::testing
