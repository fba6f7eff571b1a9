#include "deferral/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "deferral/error.hpp"
#include "deferral/rng.hpp"

namespace deferral {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Runs fn(i) for i in [0, count) on up to `threads` workers; each index is
// written independently, so output never depends on the thread count.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || count < 2 * workers) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += workers) fn(i);
        });
    }
}

// Linear interpolation between order statistics, h = (n - 1) q.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval percentile_interval(std::vector<double> values, double level) {
    std::sort(values.begin(), values.end());
    const double alpha = 1.0 - level;
    return {quantile_sorted(values, alpha / 2.0), quantile_sorted(values, 1.0 - alpha / 2.0)};
}

double resampled_mean(const std::vector<bool>& obs, Pcg32& rng) {
    const auto n = static_cast<std::uint32_t>(obs.size());
    std::size_t hits = 0;
    for (std::uint32_t i = 0; i < n; ++i) hits += obs[rng.bounded(n)] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(n);
}

std::size_t count_true(const std::vector<bool>& v) {
    return static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
}

}  // namespace

std::vector<PairedOutcome> paired_outcomes(std::span<const PairedItem> items) {
    std::vector<PairedOutcome> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        if (!item.human.majority) throw DataError("item '" + item.item_id + "' has no human majority judgment");
        out.push_back({item.item_id, item.dataset, item.ai.correct, item.human.majority->correct, item.ai.confidence()});
    }
    return out;
}

double QuadrantCounts::percent(std::size_t count) const { return 100.0 * ratio(count, total()); }

QuadrantCounts agreement_quadrants(std::span<const PairedOutcome> outcomes) {
    QuadrantCounts q;
    for (const auto& o : outcomes) {
        if (o.ai_correct && o.human_correct) {
            ++q.both_correct;
        } else if (o.ai_correct) {
            ++q.ai_only;
        } else if (o.human_correct) {
            ++q.human_only;
        } else {
            ++q.neither;
        }
    }
    return q;
}

QuadrantConfidence confidence_by_category(std::span<const PairedOutcome> outcomes) {
    double sums[4] = {0, 0, 0, 0};
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& o : outcomes) {
        const int k = o.ai_correct ? (o.human_correct ? 0 : 1) : (o.human_correct ? 2 : 3);
        sums[k] += o.ai_conf;
        ++counts[k];
    }
    auto mean = [&](int k) -> std::optional<double> {
        if (counts[k] == 0) return std::nullopt;
        return sums[k] / static_cast<double>(counts[k]);
    };
    return {mean(0), mean(1), mean(2), mean(3)};
}

namespace {

OracleRow make_oracle_row(const std::string& dataset, const std::vector<PairedOutcome>& outcomes,
                          double hybrid_accuracy) {
    OracleRow row;
    row.dataset = dataset;
    row.n = outcomes.size();
    const QuadrantCounts q = agreement_quadrants(outcomes);
    row.human_accuracy = ratio(q.both_correct + q.human_only, row.n);
    row.ai_accuracy = ratio(q.both_correct + q.ai_only, row.n);
    row.oracle_accuracy = row.n == 0 ? 0.0 : 1.0 - ratio(q.neither, row.n);
    row.hybrid_accuracy = hybrid_accuracy;
    row.headroom = row.oracle_accuracy - row.ai_accuracy;
    row.captured = row.hybrid_accuracy - row.ai_accuracy;
    if (q.human_only > 0) row.capture_rate = row.captured / row.headroom;
    return row;
}

}  // namespace

OracleReport oracle_bound(std::span<const PairedOutcome> outcomes, const AccuracyReport& hybrid) {
    if (hybrid.mode != EvalMode::majority) throw DataError("oracle bound needs a majority-mode hybrid report");
    std::map<std::string, std::vector<PairedOutcome>> by_dataset;
    for (const auto& o : outcomes) by_dataset[o.dataset].push_back(o);
    std::map<std::string, const AccuracyRow*> hybrid_rows;
    for (const auto& row : hybrid.rows) hybrid_rows[row.dataset] = &row;

    OracleReport report;
    for (const auto& [dataset, rows] : by_dataset) {
        const auto it = hybrid_rows.find(dataset);
        if (it == hybrid_rows.end() || it->second->observations != rows.size()) {
            throw DataError("hybrid report does not cover dataset '" + dataset + "'");
        }
        report.rows.push_back(make_oracle_row(dataset, rows, it->second->hybrid_accuracy()));
    }
    if (hybrid.overall.observations != outcomes.size()) throw DataError("hybrid report covers different items");
    report.overall = make_oracle_row("All", std::vector<PairedOutcome>(outcomes.begin(), outcomes.end()),
                                     hybrid.overall.hybrid_accuracy());
    report.quadrants = agreement_quadrants(outcomes);
    for (const auto* row : {&report.overall}) {
        if (row->hybrid_accuracy > row->oracle_accuracy) throw InvariantViolation("hybrid accuracy exceeds oracle");
    }
    return report;
}

double SubsetSpec::fraction_for(const std::string& dataset) const {
    const auto it = per_dataset.find(dataset);
    return it == per_dataset.end() ? default_fraction : it->second;
}

std::set<std::string> select_low_confidence_subset(std::span<const ConfidenceEntry> entries, const SubsetSpec& spec) {
    std::map<std::string, std::vector<const ConfidenceEntry*>> by_dataset;
    for (const auto& e : entries) by_dataset[e.dataset].push_back(&e);
    std::set<std::string> out;
    for (auto& [dataset, list] : by_dataset) {
        const double fraction = spec.fraction_for(dataset);
        if (!(fraction > 0.0 && fraction <= 1.0)) {
            throw ConfigError("subset fraction for '" + dataset + "' must lie in (0, 1]");
        }
        std::sort(list.begin(), list.end(), [](const ConfidenceEntry* a, const ConfidenceEntry* b) {
            if (a->confidence != b->confidence) return a->confidence < b->confidence;
            return a->item_id < b->item_id;
        });
        // Tolerance keeps products like 0.1 * 300 = 30.000000000000004 from rounding the wrong way.
        const double target = fraction * static_cast<double>(list.size());
        const double count = spec.rounding == SubsetRounding::floor ? std::floor(target + 1e-9) : std::ceil(target - 1e-9);
        const auto take = std::min(list.size(), static_cast<std::size_t>(count));
        for (std::size_t i = 0; i < take; ++i) out.insert(list[i]->item_id);
    }
    return out;
}

Interval bootstrap_ci(const std::vector<bool>& observations, int n_resamples, std::uint64_t seed, double level,
                      int threads) {
    if (observations.empty()) throw DataError("bootstrap of an empty sample");
    if (n_resamples < 1) throw ConfigError("bootstrap needs at least one resample");
    std::vector<double> means(static_cast<std::size_t>(n_resamples));
    parallel_for(means.size(), threads, [&](std::size_t r) {
        Pcg32 rng(seed, r);
        means[r] = resampled_mean(observations, rng);
    });
    return percentile_interval(std::move(means), level);
}

Interval bootstrap_diff_ci(const std::vector<bool>& a, const std::vector<bool>& b, int n_resamples, std::uint64_t seed,
                           double level, int threads) {
    if (a.empty() || b.empty()) throw DataError("bootstrap of an empty sample");
    if (n_resamples < 1) throw ConfigError("bootstrap needs at least one resample");
    std::vector<double> diffs(static_cast<std::size_t>(n_resamples));
    parallel_for(diffs.size(), threads, [&](std::size_t r) {
        Pcg32 rng(seed, r);
        const double ma = resampled_mean(a, rng);
        const double mb = resampled_mean(b, rng);
        diffs[r] = ma - mb;
    });
    return percentile_interval(std::move(diffs), level);
}

double permutation_test(const std::vector<bool>& a, const std::vector<bool>& b, int n_permutations, std::uint64_t seed,
                        int threads) {
    if (a.empty() || b.empty()) throw DataError("permutation test needs two non-empty groups");
    if (n_permutations < 1) throw ConfigError("permutation test needs at least one permutation");
    const auto na = static_cast<std::int64_t>(a.size());
    const auto nb = static_cast<std::int64_t>(b.size());
    std::vector<bool> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto total_true = static_cast<std::int64_t>(count_true(a) + count_true(b));

    // mean(a) - mean(b) scaled by na * nb stays an exact integer.
    auto scaled_stat = [&](std::int64_t ka) { return ka * nb - (total_true - ka) * na; };
    const std::int64_t observed = std::abs(scaled_stat(static_cast<std::int64_t>(count_true(a))));

    std::vector<char> extreme(static_cast<std::size_t>(n_permutations), 0);
    parallel_for(extreme.size(), threads, [&](std::size_t p) {
        Pcg32 rng(seed, p);
        std::vector<char> labels(pooled.begin(), pooled.end());
        const auto n = static_cast<std::uint32_t>(labels.size());
        std::int64_t ka = 0;
        // Partial Fisher-Yates: positions [0, na) become a uniform random relabelling of group a.
        for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(na); ++i) {
            const std::uint32_t j = i + rng.bounded(n - i);
            std::swap(labels[i], labels[j]);
            ka += labels[i];
        }
        extreme[p] = std::abs(scaled_stat(ka)) >= observed ? 1 : 0;
    });
    const auto hits = static_cast<double>(std::count(extreme.begin(), extreme.end(), 1));
    return (1.0 + hits) / (1.0 + static_cast<double>(n_permutations));
}

ZTest two_proportion_ztest(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
    if (n1 == 0 || n2 == 0) throw DataError("z-test needs non-empty samples");
    if (k1 > n1 || k2 > n2) throw DataError("z-test successes exceed sample size");
    const double p1 = ratio(k1, n1);
    const double p2 = ratio(k2, n2);
    const double pooled = ratio(k1 + k2, n1 + n2);
    if (pooled <= 0.0 || pooled >= 1.0) return {0.0, 1.0, true};
    const double se =
        std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
    const double z = (p1 - p2) / se;
    return {z, std::erfc(std::abs(z) / std::sqrt(2.0)), false};
}

OverrelianceReport overreliance_report(std::span<const ConditionObservations> items,
                                       const ResamplingSettings& settings) {
    const Condition conditions[] = {Condition::baseline, Condition::top2, Condition::delegation};
    // (ai_correct, condition) -> observations
    std::map<std::pair<bool, Condition>, std::vector<bool>> obs;
    std::map<std::pair<bool, Condition>, std::size_t> item_counts;
    for (const auto& item : items) {
        for (const auto& [condition, judgments] : item.individual) {
            if (judgments.empty()) continue;
            auto& bucket = obs[{item.ai_correct, condition}];
            for (const auto& j : judgments) bucket.push_back(j.correct);
            ++item_counts[{item.ai_correct, condition}];
        }
    }

    auto stream_seed = [](std::uint64_t seed, bool ai_correct, Condition a, Condition b) {
        const std::string label = std::string(ai_correct ? "correct" : "incorrect") + "/" + std::string(to_string(a)) +
                                  "/" + std::string(to_string(b));
        return seed ^ fnv1a64(label);
    };

    OverrelianceReport report;
    for (bool ai_correct : {true, false}) {
        for (Condition c : conditions) {
            const auto it = obs.find({ai_correct, c});
            if (it == obs.end()) continue;
            const std::vector<bool>& v = it->second;
            OverrelianceCell cell;
            cell.condition = c;
            cell.ai_correct = ai_correct;
            cell.observations = v.size();
            cell.items = item_counts[{ai_correct, c}];
            cell.accuracy = ratio(count_true(v), v.size());
            cell.ci = bootstrap_ci(v, settings.bootstrap_resamples,
                                   stream_seed(settings.bootstrap_seed, ai_correct, c, c), settings.level,
                                   settings.threads);
            report.cells.push_back(cell);
        }
        const std::pair<Condition, Condition> pairs[] = {{Condition::top2, Condition::baseline},
                                                          {Condition::delegation, Condition::baseline},
                                                          {Condition::top2, Condition::delegation}};
        for (const auto& [first, second] : pairs) {
            const auto ia = obs.find({ai_correct, first});
            const auto ib = obs.find({ai_correct, second});
            if (ia == obs.end() || ib == obs.end()) continue;
            const std::vector<bool>& a = ia->second;
            const std::vector<bool>& b = ib->second;
            OverrelianceContrast contrast;
            contrast.ai_correct = ai_correct;
            contrast.first = first;
            contrast.second = second;
            contrast.difference = ratio(count_true(a), a.size()) - ratio(count_true(b), b.size());
            contrast.ci = bootstrap_diff_ci(a, b, settings.bootstrap_resamples,
                                            stream_seed(settings.bootstrap_seed, ai_correct, first, second),
                                            settings.level, settings.threads);
            contrast.p_value = permutation_test(a, b, settings.permutations,
                                                stream_seed(settings.permutation_seed, ai_correct, first, second),
                                                settings.threads);
            report.contrasts.push_back(contrast);
        }
    }
    return report;
}

std::vector<DelegationRecord> parse_decompositions(std::string_view jsonl, const ItemSet* items, double threshold) {
    std::vector<DelegationRecord> out;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no);
        try {
            const auto r = nlohmann::json::parse(line);
            DelegationRecord rec;
            rec.item_id = r.at("item_id").get<std::string>();
            rec.dataset = r.value("dataset", "");
            if (rec.dataset.empty() && items != nullptr) {
                if (const Item* item = items->find(rec.item_id)) rec.dataset = item->dataset;
            }
            if (rec.dataset.empty()) throw DataError(where + ": cannot resolve dataset of item '" + rec.item_id + "'");
            for (const auto& s : r.at("subtasks")) {
                Subtask t;
                t.text_ref = s.value("text_ref", "");
                t.ai_confidence = s.at("ai_confidence").get<double>();
                if (!(t.ai_confidence >= 0.0 && t.ai_confidence <= 1.0)) {
                    throw DataError(where + ": ai_confidence outside [0, 1]");
                }
                t.routed_to_human = s.contains("routed_to_human") ? s.at("routed_to_human").get<bool>()
                                                                   : t.ai_confidence < threshold;
                t.human_answer_present = s.value("human_answer_present", false);
                rec.subtasks.push_back(std::move(t));
            }
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": malformed decomposition record: " + e.what());
        }
    }
    return out;
}

std::vector<DelegationRecord> load_decompositions(const std::filesystem::path& path, const ItemSet* items,
                                                  double threshold) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_decompositions(buf.str(), items, threshold);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

double DelegationRow::avg_subtasks() const { return ratio(subtasks, items); }
double DelegationRow::avg_routed() const { return ratio(routed, items); }
double DelegationRow::avg_kept() const { return ratio(subtasks - routed, items); }
double DelegationRow::percent_routed() const { return 100.0 * ratio(routed, subtasks); }

DelegationReport delegation_stats(std::span<const DelegationRecord> records, double threshold) {
    struct Acc {
        DelegationRow row;
        double routed_conf = 0.0;
        double kept_conf = 0.0;
    };
    std::map<std::string, Acc> by_dataset;
    Acc overall;
    overall.row.dataset = "All";
    DelegationReport report;
    report.threshold = threshold;

    for (const auto& rec : records) {
        Acc& acc = by_dataset[rec.dataset];
        acc.row.dataset = rec.dataset;
        for (Acc* a : {&acc, &overall}) ++a->row.items;
        for (std::size_t i = 0; i < rec.subtasks.size(); ++i) {
            const Subtask& s = rec.subtasks[i];
            for (Acc* a : {&acc, &overall}) {
                ++a->row.subtasks;
                if (s.routed_to_human) {
                    ++a->row.routed;
                    a->routed_conf += s.ai_confidence;
                } else {
                    a->kept_conf += s.ai_confidence;
                }
            }
            if (s.routed_to_human != (s.ai_confidence < threshold)) {
                report.violations.push_back({rec.item_id, i, s.ai_confidence, s.routed_to_human});
            }
        }
    }
    auto finish = [](Acc& a) {
        a.row.mean_conf_routed = a.row.routed > 0 ? a.routed_conf / static_cast<double>(a.row.routed) : 0.0;
        const std::size_t kept = a.row.subtasks - a.row.routed;
        a.row.mean_conf_kept = kept > 0 ? a.kept_conf / static_cast<double>(kept) : 0.0;
        return a.row;
    };
    for (auto& [name, acc] : by_dataset) report.rows.push_back(finish(acc));
    report.overall = finish(overall);
    return report;
}

}  // namespace deferral
