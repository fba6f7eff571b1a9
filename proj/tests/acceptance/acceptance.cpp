// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "deferral/aggregate.hpp"
#include "deferral/analyze.hpp"
#include "deferral/calibrate.hpp"
#include "deferral/config.hpp"
#include "deferral/error.hpp"
#include "deferral/numfmt.hpp"
#include "deferral/pipeline.hpp"
#include "deferral/report.hpp"
#include "deferral/rng.hpp"
#include "deferral/route.hpp"
#include "oracles.hpp"

using namespace deferral;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    enum class Status { pass, fail, skip } status = Status::pass;
    std::string detail;
};

// Collects failure messages; the first few are kept for the report line.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        if (++failures_ <= 3) messages_ += (messages_.empty() ? "" : "; ") + what;
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_ == 0) return {Outcome::Status::pass, summary};
        return {Outcome::Status::fail, std::to_string(failures_) + " failure(s): " + messages_};
    }

private:
    std::size_t failures_ = 0;
    std::string messages_;
};

std::string pct(double fraction) { return format_fixed(100.0 * fraction, 1); }

// Runs fn(i) for i in [0, n) on all hardware threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

std::vector<ScoredPair> tied_pairs(Pcg32& rng, std::size_t n, int levels) {
    std::vector<ScoredPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(rng.bounded(static_cast<std::uint32_t>(levels) + 1)) / levels;
        out.push_back({s, rng.uniform() < s});
    }
    return out;
}

Outcome isotonic_correctness() {
    Checker check;
    Pcg32 rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 1 + rng.bounded(50);
        const auto pairs = tied_pairs(rng, n, 2 + static_cast<int>(rng.bounded(15)));
        const auto blocks = pool_adjacent_violators(pairs);
        const auto ref = testing::isotonic_reference(pairs);
        for (std::size_t i = 0; i < ref.scores.size(); ++i) {
            const auto block = std::find_if(blocks.begin(), blocks.end(), [&](const IsotonicBlock& b) {
                return ref.scores[i] >= b.x_lo && ref.scores[i] <= b.x_hi;
            });
            check.expect(block != blocks.end() && std::abs(block->mean - ref.values[i]) <= 1e-12,
                         "trial " + std::to_string(trial) + " score " + format_full(ref.scores[i]));
        }
        if (trial % 100 == 0) {
            const auto map = fit_calibrator(pairs, CalibratorKind::isotonic);
            for (int q = 0; q < 1000; ++q) {
                double a = rng.uniform(), b = rng.uniform();
                if (a > b) std::swap(a, b);
                check.expect(apply_calibrator(map, a) <= apply_calibrator(map, b), "non-monotone map");
            }
        }
    }
    return check.outcome("1000 inputs agree within 1e-12; 10000 query pairs monotone");
}

Outcome auroc_equivalence() {
    Checker check;
    Pcg32 rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        auto pairs = tied_pairs(rng, 2 + rng.bounded(199), 1 + static_cast<int>(rng.bounded(20)));
        pairs[0].label = true;
        pairs[1].label = false;
        const double got = auroc(pairs).value();
        const double want = testing::auroc_bruteforce(pairs);
        worst = std::max(worst, std::abs(got - want));
        check.expect(std::abs(got - want) <= 1e-12, "trial " + std::to_string(trial));
    }
    return check.outcome("500 sets, max deviation " + format_full(worst));
}

Outcome grid_optimality() {
    Checker check;
    const std::vector<PolicyKind> kinds = {PolicyKind::one_threshold, PolicyKind::two_threshold,
                                           PolicyKind::one_threshold_compare};
    std::vector<std::string> errors(200);
    parallel_for(200, [&](std::size_t g) {
        const auto obs = testing::random_observations(1000 + g, 5 + g % 60, "g");
        for (auto kind : kinds) {
            const auto fit = learn_policy(kind, obs).groups.at("g");
            std::size_t best = 0;
            const auto grid = testing::enumerate_grid(kind, obs);
            for (const auto& p : grid) best = std::max(best, p.correct);
            std::size_t min_routed = obs.size();
            for (const auto& p : grid) {
                if (p.correct == best) min_routed = std::min(min_routed, p.routed_to_human);
            }
            if (fit.correct != best || fit.routed_to_human != min_routed) {
                errors[g] = "group " + std::to_string(g) + " " + std::string(to_string(kind));
            }
        }
    });
    for (const auto& e : errors) check.expect(e.empty(), e);
    return check.outcome("200 groups x 1T/2T/1TC optimal with minimal routing");
}

Outcome oracle_table() {
    Checker check;
    const auto items = testing::oracle_table_fixture();
    RoutingPolicy compare;
    compare.kind = PolicyKind::compare;
    const auto report = oracle_bound(paired_outcomes(items), evaluate_hybrid(compare, items, EvalMode::majority));
    const auto& q = report.quadrants;
    const std::string oracle = pct(report.overall.oracle_accuracy);
    const std::string headroom = pct(report.overall.headroom);
    const std::string human_only = format_fixed(q.percent(q.human_only), 1);
    check.expect(oracle == "77.8", "oracle " + oracle);
    check.expect(headroom == "8.9", "headroom " + headroom);
    check.expect(human_only == "8.9", "human-only " + human_only);
    return check.outcome("oracle " + oracle + "%, headroom +" + headroom + "pp, human-only " + human_only + "%");
}

Outcome delegation_table() {
    Checker check;
    const auto report = delegation_stats(testing::delegation_table_fixture(), 0.8);
    const std::string avg = format_fixed(report.overall.avg_subtasks(), 2);
    const std::string routed = format_fixed(report.overall.percent_routed(), 1);
    check.expect(avg == "8.86", "average subtasks " + avg);
    check.expect(routed == "20.0", "routed " + routed);
    check.expect(report.violations.empty(), "threshold violations");
    return check.outcome("average subtasks " + avg + ", routed " + routed + "%");
}

Outcome calibration_direction() {
    Checker check;
    Pcg32 rng(303);
    std::vector<ScoredPair> train, test;
    for (int i = 0; i < 2000; ++i) {
        const double s = rng.uniform();
        (i % 2 == 0 ? train : test).push_back({s, rng.uniform() < s * s});
    }
    const auto map = fit_calibrator(train, CalibratorKind::isotonic);
    std::vector<ScoredPair> calibrated;
    for (const auto& p : test) calibrated.push_back({apply_calibrator(map, p.score), p.label});
    const double raw_brier = brier(test), cal_brier = brier(calibrated);
    const double raw_ece = ece(test, 10), cal_ece = ece(calibrated, 10);
    check.expect(cal_brier < raw_brier, "Brier did not improve");
    check.expect(cal_ece < 0.05, "ECE " + format_fixed(cal_ece, 4));
    return check.outcome("Brier " + format_fixed(raw_brier, 4) + " -> " + format_fixed(cal_brier, 4) + ", ECE " +
                         format_fixed(raw_ece, 4) + " -> " + format_fixed(cal_ece, 4));
}

std::vector<PairedItem> random_paired_items(Pcg32& rng, std::size_t n) {
    std::vector<PairedItem> out;
    for (std::size_t i = 0; i < n; ++i) {
        PairedItem p;
        p.item_id = "it" + std::to_string(10000 + i);
        p.dataset = rng.bounded(3) == 0 ? "gamma" : "delta";
        p.group = p.dataset;
        const double a = static_cast<double>(rng.bounded(101)) / 100.0;
        const double h = static_cast<double>(rng.bounded(101)) / 100.0;
        p.ai = testing::make_judgment(p.item_id, Side::ai, rng.uniform() < a, a);
        p.human.majority = testing::make_judgment(p.item_id, Side::human, rng.uniform() < 0.5, h);
        out.push_back(std::move(p));
    }
    return out;
}

RoutingPolicy uniform_policy(PolicyKind kind, const Thresholds& t) {
    RoutingPolicy p;
    p.kind = kind;
    for (const char* g : {"gamma", "delta"}) p.groups[g] = GroupFit{t, 0, 0, 0};
    return p;
}

Outcome routing_degeneracies() {
    Checker check;
    Pcg32 rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        auto items = random_paired_items(rng, 10 + rng.bounded(200));
        std::size_t ai = 0, oracle = 0;
        for (const auto& p : items) {
            ai += p.ai.correct ? 1 : 0;
            oracle += (p.ai.correct || p.human.majority->correct) ? 1 : 0;
        }
        for (const auto& [kind, t] : std::vector<std::pair<PolicyKind, Thresholds>>{
                 {PolicyKind::one_threshold, {0.0, 0, 0}},
                 {PolicyKind::one_threshold_compare, {0.0, 0, 0}},
                 {PolicyKind::two_threshold, {0.0, 1.0, 0.0}}}) {
            const auto report = evaluate_hybrid(uniform_policy(kind, t), items, EvalMode::majority);
            check.expect(report.overall.hybrid_correct == ai, "trial " + std::to_string(trial) + " " +
                                                                   std::string(to_string(kind)));
        }
        for (auto& p : items) {
            p.ai.calibrated_confidence = p.ai.correct ? 1.0 : 0.0;
            p.human.majority->calibrated_confidence = p.human.majority->correct ? 1.0 : 0.0;
        }
        const auto report = evaluate_hybrid(uniform_policy(PolicyKind::compare, {}), items, EvalMode::majority);
        check.expect(report.overall.hybrid_correct == oracle, "trial " + std::to_string(trial) + " compare");
    }
    return check.outcome("100 fixtures: T=0 equals AI-alone, compare with oracle confidences equals oracle");
}

Outcome entropy_confidence() {
    Checker check;
    Item item;
    item.item_id = "e";
    item.dataset = "D";
    item.kind = AnswerKind::ft;
    item.gold = NormalizedText{normalize_text("answer a")};
    const EquivalenceOracle exact;
    auto clusters_of = [&](int k, int size) {
        std::vector<Response> rs;
        for (int c = 0; c < k; ++c) {
            for (int i = 0; i < size; ++i) {
                Response r;
                r.item_id = item.item_id;
                r.side = Side::ai;
                r.sample_index = static_cast<int>(rs.size());
                r.raw_answer = "answer " + std::string(1, static_cast<char>('a' + c));
                r.canonical = canonicalize_answer(r.raw_answer, item);
                r.confidence = r.reported_confidence = 0.5;
                rs.push_back(r);
            }
        }
        return cluster_responses(rs, exact);
    };
    for (int size : {1, 4, 20}) check.expect(computed_confidence(clusters_of(1, size), AnswerKind::ft) == 1.0, "single cluster");
    double worst = 0.0;
    for (int k = 2; k <= 10; ++k) {
        for (int size : {1, 2, 7}) {
            const double c = computed_confidence(clusters_of(k, size), AnswerKind::ft);
            worst = std::max(worst, std::abs(c));
            check.expect(std::abs(c) <= 1e-12, "k=" + std::to_string(k) + " gives " + format_full(c));
        }
    }
    return check.outcome("single cluster 1.0; k equal clusters max |c| " + format_full(worst));
}

Outcome statistical_null() {
    Checker check;
    constexpr int trials = 1000;
    constexpr std::size_t per_side = 150;
    constexpr double p_true = 0.6;
    std::vector<char> rejected(trials, 0), covered(trials, 0);
    parallel_for(trials, [&](std::size_t t) {
        Pcg32 rng(505, t);
        std::vector<bool> a(per_side), b(per_side);
        for (auto&& x : a) x = rng.uniform() < p_true;
        for (auto&& x : b) x = rng.uniform() < p_true;
        rejected[t] = permutation_test(a, b, 2000, 9000 + t) < 0.05;
        const Interval ci = bootstrap_ci(a, 2000, 7000 + t);
        covered[t] = ci.lo <= p_true && p_true <= ci.hi;
    });
    const double reject_rate = static_cast<double>(std::count(rejected.begin(), rejected.end(), 1)) / trials;
    const double coverage = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / trials;
    check.expect(reject_rate >= 0.03 && reject_rate <= 0.07, "rejection rate " + pct(reject_rate) + "%");
    check.expect(coverage >= 0.92 && coverage <= 0.98, "coverage " + pct(coverage) + "%");
    return check.outcome("rejection " + pct(reject_rate) + "%, coverage " + pct(coverage) + "%");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        out[fs::relative(e.path(), root).generic_string()] = buf.str();
    }
    return out;
}

Outcome end_to_end_determinism() {
    Checker check;
    const fs::path base = fs::temp_directory_path() / ("deferral-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(base);
    RunConfig config = load_config(fs::path(FIXTURE_DIR) / "fixture.conf");
    config.output_dir = base / "first";
    const auto first = run_pipeline(config);
    config.output_dir = base / "second";
    run_pipeline(config);
    const auto a = snapshot(base / "first");
    const auto b = snapshot(base / "second");
    check.expect(!a.empty() && a.size() == b.size(), "file sets differ");
    for (const auto& [name, bytes] : a) {
        const auto other = b.find(name);
        check.expect(other != b.end() && other->second == bytes, name + " differs");
    }
    fs::remove_all(base);
    return check.outcome(std::to_string(a.size()) + " files identical across two runs (" +
                         std::to_string(first.tables.size()) + " tables)");
}

Outcome released_data_reproduction() {
    const char* path = std::getenv("DEFERRAL_LAB_RELEASED_DATA");
    if (path == nullptr || *path == '\0') return {Outcome::Status::skip, "DEFERRAL_LAB_RELEASED_DATA not set"};
    Checker check;
    RunConfig config = load_config(path);
    validate(config);
    const auto corpus = prepare_corpus(config);
    const auto calibration = calibrate_stage(config, corpus);
    const auto routing = route_stage(config, corpus, calibration);
    const auto analysis = analyze_stage(config, corpus, calibration, routing);
    const auto evaluations = evaluate_all(config, corpus, calibration, routing);

    std::ostringstream summary;
    for (const auto& e : evaluations) {
        if (e.scope != "full" || e.condition != Condition::baseline || e.mode != EvalMode::majority) continue;
        if (e.kind == PolicyKind::one_threshold) {
            const std::string human = pct(e.report.overall.human_accuracy());
            const std::string ai = pct(e.report.overall.ai_accuracy());
            check.expect(human == "49.9", "human " + human);
            check.expect(ai == "68.9", "AI " + ai);
            summary << "human " << human << "%, AI " << ai << "%";
        }
        if (e.kind == PolicyKind::two_threshold) {
            const double hybrid = 100.0 * e.report.overall.hybrid_accuracy();
            check.expect(std::abs(hybrid - 69.3) <= 0.3, "2T hybrid " + format_fixed(hybrid, 2));
            summary << ", 2T " << format_fixed(hybrid, 1) << "%";
        }
    }
    const auto row = std::find_if(calibration.metrics.begin(), calibration.metrics.end(), [](const MetricRow& m) {
        return m.signal == "ai_direct" && m.calibrator == CalibratorKind::isotonic;
    });
    check.expect(row != calibration.metrics.end() && row->brier && row->ece, "no ai_direct isotonic metrics");
    if (row != calibration.metrics.end() && row->brier && row->ece) {
        check.expect(std::abs(*row->brier - 0.174) <= 0.005, "Brier " + format_fixed(*row->brier, 3));
        check.expect(std::abs(*row->ece - 0.077) <= 0.02, "ECE " + format_fixed(*row->ece, 3));
        summary << ", Brier " << format_fixed(*row->brier, 3) << ", ECE " << format_fixed(*row->ece, 3);
    }
    const auto& contrasts = analysis.overreliance.contrasts;
    const auto c = std::find_if(contrasts.begin(), contrasts.end(), [](const OverrelianceContrast& x) {
        return x.ai_correct && x.first == Condition::top2 && x.second == Condition::baseline;
    });
    check.expect(c != contrasts.end(), "no top2 vs baseline contrast");
    if (c != contrasts.end()) {
        const double diff = 100.0 * c->difference;
        check.expect(std::abs(diff - 17.4) <= 0.5, "overreliance " + format_fixed(diff, 1) + "pp");
        check.expect(c->p_value < 0.02, "overreliance p " + format_fixed(c->p_value, 4));
        summary << ", overreliance +" << format_fixed(diff, 1) << "pp (p=" << format_fixed(c->p_value, 3) << ")";
    }
    return check.outcome(summary.str());
}

struct Criterion {
    const char* name;
    double budget_seconds;
    Outcome (*run)();
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"isotonic-correctness", 10, isotonic_correctness},
        {"auroc-oracle-equivalence", 10, auroc_equivalence},
        {"grid-search-optimality", 60, grid_optimality},
        {"oracle-table-reproduction", 1, oracle_table},
        {"delegation-table-reproduction", 1, delegation_table},
        {"calibration-direction", 5, calibration_direction},
        {"routing-degeneracies", 10, routing_degeneracies},
        {"entropy-confidence", 1, entropy_confidence},
        {"statistical-null-calibration", 300, statistical_null},
        {"end-to-end-determinism", 120, end_to_end_determinism},
        {"released-data-reproduction", 600, released_data_reproduction},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {Outcome::Status::fail, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (outcome.status == Outcome::Status::pass && seconds > c.budget_seconds) {
            outcome = {Outcome::Status::fail, "over time budget of " + format_fixed(c.budget_seconds, 0) + " s; " +
                                                  outcome.detail};
        }
        const char* label = outcome.status == Outcome::Status::pass   ? "PASS"
                            : outcome.status == Outcome::Status::skip ? "SKIP"
                                                                      : "FAIL";
        failed += outcome.status == Outcome::Status::fail ? 1 : 0;
        std::printf("%s %s (%.2f s): %s\n", label, c.name, seconds, outcome.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
