#include "deferral/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "deferral/error.hpp"
#include "deferral/numfmt.hpp"

namespace deferral {

namespace {

using nlohmann::json;

double ratio(std::size_t k, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n); }

std::string signed_fixed(double v, int decimals) {
    std::string s = format_fixed(v, decimals);
    if (s.front() != '-') s.insert(s.begin(), '+');
    return s;
}

std::string calibrator_label(CalibratorKind kind) {
    switch (kind) {
        case CalibratorKind::identity: return "Original";
        case CalibratorKind::isotonic: return "Isotonic";
        case CalibratorKind::platt: return "Platt";
        case CalibratorKind::temperature: return "Temperature";
        case CalibratorKind::histogram: return "Histogram";
    }
    return "Original";
}

std::string condition_prefix(Condition c, bool short_form) {
    switch (c) {
        case Condition::baseline: return short_form ? "B" : "Base";
        case Condition::top2: return short_form ? "T2" : "Top2";
        case Condition::delegation: return short_form ? "S" : "Sub";
    }
    return "";
}

std::string condition_title(Condition c) {
    switch (c) {
        case Condition::baseline: return "Baseline";
        case Condition::top2: return "Top-2";
        case Condition::delegation: return "Subtask";
    }
    return "";
}

std::string condition_long(Condition c) {
    switch (c) {
        case Condition::baseline: return "Baseline (Unassisted)";
        case Condition::top2: return "Top-2 Assistance";
        case Condition::delegation: return "Subtask Delegation";
    }
    return "";
}

std::string policy_long(PolicyKind k) {
    switch (k) {
        case PolicyKind::one_threshold: return "1-threshold";
        case PolicyKind::two_threshold: return "2-threshold";
        case PolicyKind::one_threshold_compare: return "1-threshold+compare";
        case PolicyKind::compare: return "compare";
    }
    return "";
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

std::string mode_title(EvalMode m) { return m == EvalMode::majority ? "Majority vote" : "Individual responses"; }

bool is_threshold_kind(PolicyKind k) { return k != PolicyKind::compare; }

struct Context {
    const RunConfig& cfg;
    const StageArtifacts& a;
    CalibratedCorpus cc;
    std::vector<PairedItem> test_items;
    std::vector<Evaluation> evals;

    const Evaluation* find(const std::string& scope, Condition c, EvalMode m, PolicyKind k) const {
        for (const auto& e : evals) {
            if (e.scope == scope && e.condition == c && e.mode == m && e.kind == k) return &e;
        }
        return nullptr;
    }
    bool has_condition(Condition c) const {
        return std::find(cfg.conditions.begin(), cfg.conditions.end(), c) != cfg.conditions.end();
    }
};

const AccuracyRow* row_for(const AccuracyReport& report, const std::string& dataset) {
    if (dataset == "All") return &report.overall;
    for (const auto& r : report.rows) {
        if (r.dataset == dataset) return &r;
    }
    return nullptr;
}

// ---- individual tables ----

struct BaselineCounts {
    std::size_t n = 0, ai = 0, maj_n = 0, maj = 0, ind_n = 0, ind = 0;
    bool mc = false, ft = false;
};

Table baseline_table(const Context& ctx, BaselineCounts& overall_out) {
    std::map<std::string, BaselineCounts> per;
    std::set<std::string> excluded;
    for (const auto& rec : ctx.a.corpus.records) {
        if (rec.in_calibration) continue;
        auto& c = per[rec.pair.dataset];
        if (rec.excluded) excluded.insert(rec.pair.dataset);
        ++c.n;
        c.ai += rec.pair.ai.correct ? 1 : 0;
        (rec.kind == AnswerKind::mc ? c.mc : c.ft) = true;
        if (rec.pair.human.majority) {
            ++c.maj_n;
            c.maj += rec.pair.human.majority->correct ? 1 : 0;
        }
        for (const auto& j : rec.pair.human.individual) {
            ++c.ind_n;
            c.ind += j.correct ? 1 : 0;
        }
    }
    Table t;
    t.id = "baseline_accuracy";
    t.title = "Baseline accuracy on the test split";
    t.columns = {"Dataset", "Type", "N (test)", "Human Maj", "Human Ind", "AI Acc"};
    BaselineCounts overall;
    auto make_row = [](const std::string& name, const BaselineCounts& c, const std::string& type) {
        Row r;
        r.cells = {Cell::str(name), Cell::str(type), Cell::count(c.n),
                   c.maj_n ? Cell::percent(ratio(c.maj, c.maj_n)) : Cell::none(),
                   c.ind_n ? Cell::percent(ratio(c.ind, c.ind_n)) : Cell::none(), Cell::percent(ratio(c.ai, c.n))};
        return r;
    };
    std::vector<std::string> order;
    for (const auto& [name, c] : per) {
        if (!excluded.contains(name)) order.push_back(name);
    }
    for (const auto& name : excluded) order.push_back(name);
    for (const auto& name : order) {
        const auto& c = per[name];
        const std::string type = c.mc && c.ft ? "MC/FT" : (c.mc ? "MC" : "FT");
        const bool ex = excluded.contains(name);
        t.rows.push_back(make_row(ex ? name + "*" : name, c, type));
        if (ex) continue;
        overall.n += c.n;
        overall.ai += c.ai;
        overall.maj_n += c.maj_n;
        overall.maj += c.maj;
        overall.ind_n += c.ind_n;
        overall.ind += c.ind;
    }
    Row all = make_row(excluded.empty() ? "Overall" : "Overall (excl. starred)", overall, "--");
    all.emphasis = true;
    t.rows.push_back(all);
    if (!excluded.empty()) t.notes.push_back("* excluded from hybrid analyses by configuration.");
    overall_out = overall;
    return t;
}

std::vector<PolicyKind> best_pool(const RunConfig& cfg) {
    std::vector<PolicyKind> out;
    for (auto k : cfg.policies) {
        if (is_threshold_kind(k)) out.push_back(k);
    }
    if (out.empty()) out = cfg.policies;
    return out;
}

Table summary_table(const Context& ctx) {
    Table t;
    t.id = "hybrid_summary";
    t.title = "Hybrid accuracy on the full test split (best threshold policy per condition)";
    t.columns = {"", "Human", "AI"};
    for (auto c : ctx.cfg.conditions) t.columns.push_back(condition_title(c) + " (best)");
    const auto pool = best_pool(ctx.cfg);
    for (auto mode : ctx.cfg.modes) {
        const Evaluation* base = ctx.find("full", Condition::baseline, mode, pool.front());
        if (!base) continue;
        const auto& o = base->report.overall;
        const double human = o.human_accuracy();
        const double ai = o.ai_accuracy();
        Row acc, vs;
        acc.cells = {Cell::str(mode == EvalMode::majority ? "Maj." : "Ind."), Cell::percent(human), Cell::percent(ai)};
        vs.cells = {Cell::str("vs AI"), Cell::pp(human - ai), Cell::none()};
        for (auto c : ctx.cfg.conditions) {
            std::size_t best = 0;
            std::size_t n = 0;
            std::vector<std::string> labels;
            for (auto k : pool) {
                const Evaluation* e = ctx.find("full", c, mode, k);
                if (!e) continue;
                const auto& r = e->report.overall;
                n = r.observations;
                if (labels.empty() || r.hybrid_correct > best) {
                    best = r.hybrid_correct;
                    labels = {std::string(to_string(k))};
                } else if (r.hybrid_correct == best) {
                    labels.emplace_back(to_string(k));
                }
            }
            std::string label;
            for (const auto& l : labels) label += (label.empty() ? "" : "/") + l;
            Cell cell = Cell::percent(ratio(best, n));
            cell.label = "(" + label + ")";
            acc.cells.push_back(cell);
            vs.cells.push_back(Cell::pp(ratio(best, n) - ai));
        }
        t.rows.push_back(acc);
        t.rows.push_back(vs);
    }
    return t;
}

std::vector<std::string> datasets_of(const AccuracyReport& r) {
    std::vector<std::string> out;
    for (const auto& row : r.rows) out.push_back(row.dataset);
    return out;
}

Table wide_table(const Context& ctx, const std::string& scope) {
    const bool subset = scope == "subset";
    Table t;
    t.id = subset ? "hybrid_subset_per_dataset" : "hybrid_full_per_dataset";
    t.title = subset ? "Per-dataset hybrid accuracy on the low-confidence test subset"
                     : "Per-dataset hybrid accuracy on the full test split";
    t.columns = {"Dataset", "N", "Human"};
    const bool t2_raw = subset && ctx.has_condition(Condition::top2);
    if (t2_raw) t.columns.push_back("T2 Raw");
    t.columns.push_back("AI");
    for (auto c : ctx.cfg.conditions) {
        for (auto k : ctx.cfg.policies) t.columns.push_back(condition_prefix(c, subset) + " " + std::string(to_string(k)));
    }
    for (auto mode : ctx.cfg.modes) {
        const Evaluation* base = ctx.find(scope, Condition::baseline, mode, ctx.cfg.policies.front());
        if (!base) continue;
        auto names = datasets_of(base->report);
        names.push_back("All");
        for (const auto& name : names) {
            const AccuracyRow* b = row_for(base->report, name);
            Row r;
            r.section = mode_title(mode);
            r.emphasis = name == "All";
            r.cells = {Cell::str(name), Cell::count(b->observations),
                       b->human_observations ? Cell::percent(b->human_accuracy()) : Cell::none()};
            if (t2_raw) {
                const Evaluation* e = ctx.find(scope, Condition::top2, mode, ctx.cfg.policies.front());
                const AccuracyRow* x = e ? row_for(e->report, name) : nullptr;
                r.cells.push_back(x && x->human_observations ? Cell::percent(x->human_accuracy()) : Cell::none());
            }
            r.cells.push_back(Cell::percent(b->ai_accuracy()));
            for (auto c : ctx.cfg.conditions) {
                for (auto k : ctx.cfg.policies) {
                    const Evaluation* e = ctx.find(scope, c, mode, k);
                    const AccuracyRow* x = e ? row_for(e->report, name) : nullptr;
                    r.cells.push_back(x && x->observations ? Cell::percent(x->hybrid_accuracy()) : Cell::none());
                }
            }
            t.rows.push_back(std::move(r));
        }
    }
    if (subset) t.notes.push_back("AI is the majority vote over sampled responses; T2 Raw is top-2 assisted human accuracy without routing.");
    else t.notes.push_back("For assisted conditions, items outside the low-confidence subset are answered by the AI.");
    return t;
}

Table subset_oracle_table(const Context& ctx) {
    Table t;
    t.id = "subset_oracle";
    t.title = "Raw and perfect-routing accuracy on the low-confidence test subset";
    t.columns = {"Dataset", "N"};
    for (auto c : ctx.cfg.conditions) t.columns.push_back(condition_title(c));
    t.columns.push_back("AI");
    for (auto c : ctx.cfg.conditions) t.columns.push_back("O(" + condition_title(c) + ")");
    const auto kind = ctx.cfg.policies.front();
    for (auto mode : ctx.cfg.modes) {
        const Evaluation* base = ctx.find("subset", Condition::baseline, mode, kind);
        if (!base) continue;
        auto names = datasets_of(base->report);
        names.push_back("All");
        for (const auto& name : names) {
            const AccuracyRow* b = row_for(base->report, name);
            Row r;
            r.section = mode_title(mode);
            r.emphasis = name == "All";
            r.cells = {Cell::str(name), Cell::count(b->observations)};
            std::vector<Cell> oracle;
            for (auto c : ctx.cfg.conditions) {
                const Evaluation* e = ctx.find("subset", c, mode, kind);
                const AccuracyRow* x = e ? row_for(e->report, name) : nullptr;
                r.cells.push_back(x && x->human_observations ? Cell::percent(x->human_accuracy()) : Cell::none());
                oracle.push_back(x && x->observations ? Cell::percent(x->oracle_accuracy()) : Cell::none());
            }
            r.cells.push_back(Cell::percent(b->ai_accuracy()));
            for (auto& o : oracle) r.cells.push_back(std::move(o));
            t.rows.push_back(std::move(r));
        }
    }
    t.notes.push_back("O(X) is the per-observation maximum of X and AI correctness.");
    return t;
}

Table policy_table(const Evaluation& e) {
    Table t;
    t.id = "hybrid_" + e.scope + "_" + std::string(to_string(e.condition)) + "_" + std::string(to_string(e.mode)) + "_" +
           lower(to_string(e.kind));
    t.title = "Hybrid routing, " + policy_long(e.kind) + ", " + std::string(to_string(e.condition)) + ", " +
              std::string(to_string(e.mode)) + (e.scope == "subset" ? ", low-confidence test subset" : ", full test split");
    t.columns = {"Dataset", "N", "Human", "AI", "Hybrid", "Oracle", "To human", "Unroutable"};
    auto add = [&](const AccuracyRow& x, bool emphasis) {
        Row r;
        r.emphasis = emphasis;
        r.cells = {Cell::str(x.dataset),
                   Cell::count(x.observations),
                   x.human_observations ? Cell::percent(x.human_accuracy()) : Cell::none(),
                   Cell::percent(x.ai_accuracy()),
                   Cell::percent(x.hybrid_accuracy()),
                   Cell::percent(x.oracle_accuracy()),
                   Cell::percent(x.human_share()),
                   Cell::count(x.unroutable)};
        t.rows.push_back(std::move(r));
    };
    for (const auto& x : e.report.rows) add(x, false);
    add(e.report.overall, true);
    return t;
}

Table metric_table(const std::string& id, const std::string& title, const std::vector<MetricRow>& rows, bool auroc_first) {
    Table t;
    t.id = id;
    t.title = title;
    if (auroc_first) t.columns = {"Method", "Calibration", "N", "AUROC", "ECE", "Brier", "Accuracy"};
    else t.columns = {"Confidence Method", "Calibration", "N", "ECE", "Brier", "AUROC", "Accuracy"};
    for (const auto& m : rows) {
        auto opt = [](const std::optional<double>& v) { return v ? Cell::real(*v) : Cell::none(); };
        Row r;
        r.cells = {Cell::str(m.signal), Cell::str(calibrator_label(m.calibrator)), Cell::count(m.n)};
        if (auroc_first) {
            r.cells.push_back(opt(m.auroc));
            r.cells.push_back(opt(m.ece));
            r.cells.push_back(opt(m.brier));
        } else {
            r.cells.push_back(opt(m.ece));
            r.cells.push_back(opt(m.brier));
            r.cells.push_back(opt(m.auroc));
        }
        r.cells.push_back(Cell::percent(m.accuracy));
        t.rows.push_back(std::move(r));
        if (!m.note.empty()) t.notes.push_back(m.signal + " / " + calibrator_label(m.calibrator) + ": " + m.note);
    }
    t.notes.push_back("Calibrators are fitted on the calibration split and scored on the test split.");
    return t;
}

Table curve_table(const ReliabilityCurve& curve) {
    Table t;
    t.id = "reliability_" + curve.id;
    t.title = "Reliability curve: " + curve.id;
    t.columns = {"bin_mean_score", "bin_accuracy", "bin_count"};
    for (const auto& p : curve.points) {
        Row r;
        r.cells = {Cell::real(p.mean_score), Cell::real(p.accuracy), Cell::count(p.count)};
        t.rows.push_back(std::move(r));
    }
    return t;
}

Table quadrant_table(const std::vector<PairedOutcome>& outcomes) {
    Table t;
    t.id = "agreement_quadrants";
    t.title = "Agreement between majority human correctness and AI correctness (test split)";
    t.columns = {"Dataset", "N", "Both correct", "Both %", "AI only", "AI only %", "Human only", "Human only %",
                 "Neither", "Neither %"};
    std::map<std::string, std::vector<PairedOutcome>> by;
    for (const auto& o : outcomes) by[o.dataset].push_back(o);
    auto add = [&](const std::string& name, const QuadrantCounts& q, bool emphasis) {
        Row r;
        r.emphasis = emphasis;
        r.cells = {Cell::str(name),
                   Cell::count(q.total()),
                   Cell::count(q.both_correct),
                   Cell::percent(q.percent(q.both_correct) / 100.0),
                   Cell::count(q.ai_only),
                   Cell::percent(q.percent(q.ai_only) / 100.0),
                   Cell::count(q.human_only),
                   Cell::percent(q.percent(q.human_only) / 100.0),
                   Cell::count(q.neither),
                   Cell::percent(q.percent(q.neither) / 100.0)};
        t.rows.push_back(std::move(r));
    };
    for (const auto& [name, list] : by) add(name, agreement_quadrants(list), false);
    add("All", agreement_quadrants(outcomes), true);
    return t;
}

Table oracle_overall_table(const OracleReport& o, PolicyKind kind) {
    Table t;
    t.id = "oracle_overall";
    t.title = "Oracle upper bound and error decomposition (majority vote, test split)";
    t.columns = {"Method", "Accuracy", "Category", "Count", "%"};
    const auto& q = o.quadrants;
    const auto& ov = o.overall;
    auto row = [&](const std::string& method, double acc, const std::string& cat, std::size_t count) {
        Row r;
        r.cells = {Cell::str(method), Cell::percent(acc), Cell::str(cat), Cell::count(count),
                   Cell::percent(q.percent(count) / 100.0)};
        t.rows.push_back(std::move(r));
    };
    row("Human alone", ov.human_accuracy, "Both correct", q.both_correct);
    row("AI alone", ov.ai_accuracy, "AI only correct", q.ai_only);
    row("Hybrid " + policy_long(kind), ov.hybrid_accuracy, "Human only correct", q.human_only);
    row("Oracle (human OR AI)", ov.oracle_accuracy, "Neither correct", q.neither);
    Row head, cap, rate;
    head.cells = {Cell::str("Headroom (Oracle - AI)"), Cell::pp(ov.headroom), Cell::none(), Cell::none(), Cell::none()};
    cap.cells = {Cell::str("Captured (Hybrid - AI)"), Cell::pp(ov.captured), Cell::none(), Cell::none(), Cell::none()};
    rate.cells = {Cell::str("Capture rate"), ov.capture_rate ? Cell::percent(*ov.capture_rate) : Cell::none(),
                  Cell::none(), Cell::none(), Cell::none()};
    t.rows.push_back(head);
    t.rows.push_back(cap);
    t.rows.push_back(rate);
    return t;
}

Table oracle_confidence_table(const std::vector<PairedOutcome>& outcomes, const AccuracyReport& hybrid) {
    Table t;
    t.id = "oracle_confidence";
    t.title = "Mean calibrated AI confidence by agreement category (test split)";
    t.columns = {"Category", "Items", "Mean AI Confidence"};
    const QuadrantConfidence qc = confidence_by_category(outcomes);
    const QuadrantCounts q = agreement_quadrants(outcomes);
    auto add = [&](const std::string& name, std::size_t n, const std::optional<double>& v) {
        Row r;
        r.cells = {Cell::str(name), Cell::count(n), v ? Cell::real(*v) : Cell::none()};
        t.rows.push_back(std::move(r));
    };
    add("Both correct", q.both_correct, qc.both_correct);
    add("AI only correct", q.ai_only, qc.ai_only);
    add("Human only correct", q.human_only, qc.human_only);
    add("Neither correct", q.neither, qc.neither);

    std::map<std::string, const RoutedDecision*> decisions;
    for (const auto& d : hybrid.decisions) decisions[d.item_id] = &d;
    double routed_sum = 0.0, kept_sum = 0.0;
    std::size_t routed = 0, kept = 0;
    for (const auto& o : outcomes) {
        if (o.ai_correct || !o.human_correct) continue;
        const auto it = decisions.find(o.item_id);
        if (it == decisions.end()) continue;
        if (it->second->source == Source::human) {
            ++routed;
            routed_sum += o.ai_conf;
        } else {
            ++kept;
            kept_sum += o.ai_conf;
        }
    }
    add("Human only correct, routed to human", routed,
        routed ? std::optional<double>(routed_sum / static_cast<double>(routed)) : std::nullopt);
    add("Human only correct, kept with AI", kept,
        kept ? std::optional<double>(kept_sum / static_cast<double>(kept)) : std::nullopt);
    return t;
}

Table oracle_dataset_table(const OracleReport& o) {
    Table t;
    t.id = "oracle_per_dataset";
    t.title = "Per-dataset oracle analysis (majority vote, test split)";
    t.columns = {"Dataset", "N", "Human", "AI", "Hybrid", "Oracle", "Headroom", "Captured"};
    auto add = [&](const OracleRow& x, bool emphasis) {
        Row r;
        r.emphasis = emphasis;
        r.cells = {Cell::str(x.dataset),          Cell::count(x.n),
                   Cell::percent(x.human_accuracy), Cell::percent(x.ai_accuracy),
                   Cell::percent(x.hybrid_accuracy), Cell::percent(x.oracle_accuracy),
                   Cell::signed_points(x.headroom), Cell::signed_points(x.captured)};
        t.rows.push_back(std::move(r));
    };
    for (const auto& x : o.rows) add(x, false);
    add(o.overall, true);
    t.notes.push_back("Headroom = Oracle - AI; Captured = Hybrid - AI (percentage points).");
    return t;
}

Table overreliance_accuracy_table(const AnalysisResult& a) {
    Table t;
    t.id = "overreliance_accuracy";
    t.title = "Human accuracy by condition and AI correctness (low-confidence test subset)";
    t.columns = {"AI Correctness", "Condition", "Obs.", "Items", "Accuracy [95% CI]"};
    for (bool correct : {true, false}) {
        for (const auto& c : a.overreliance.cells) {
            if (c.ai_correct != correct) continue;
            Row r;
            r.cells = {Cell::str(correct ? "Correct" : "Incorrect"), Cell::str(condition_long(c.condition)),
                       Cell::count(c.observations), Cell::count(c.items),
                       Cell::percent_with_ci(c.accuracy, c.ci.lo, c.ci.hi)};
            t.rows.push_back(std::move(r));
        }
    }
    t.notes.push_back("Intervals are percentile bootstraps over raw observations within each cell.");
    return t;
}

Table overreliance_contrast_table(const AnalysisResult& a, const RunConfig& cfg) {
    Table t;
    t.id = "overreliance_contrasts";
    t.title = "Pairwise accuracy differences within each AI-correctness group (low-confidence test subset)";
    t.columns = {"AI Correctness", "Comparison", "Diff (pp)", "95% CI", "p"};
    for (bool correct : {true, false}) {
        for (const auto& c : a.overreliance.contrasts) {
            if (c.ai_correct != correct) continue;
            Row r;
            r.cells = {Cell::str(correct ? "Correct" : "Incorrect"),
                       Cell::str(condition_title(c.first) + " vs " + condition_title(c.second)),
                       Cell::signed_points(c.difference), Cell::interval_pp(c.ci.lo, c.ci.hi), Cell::p_value(c.p_value)};
            t.rows.push_back(std::move(r));
        }
    }
    t.notes.push_back("p-values from two-sided permutation tests (" + std::to_string(cfg.resampling.permutations) +
                      " permutations, add-one smoothed); intervals from " +
                      std::to_string(cfg.resampling.bootstrap_resamples) +
                      " bootstrap resamples of raw observations.");
    return t;
}

Table delegation_table(const DelegationReport& d) {
    Table t;
    t.id = "delegation_breakdown";
    t.title = "Subtask delegation: routing breakdown by dataset";
    t.columns = {"Dataset", "N items", "Avg subtasks", "Avg to human", "Avg to AI", "% to human"};
    auto add = [&](const DelegationRow& x, bool emphasis) {
        Row r;
        r.emphasis = emphasis;
        r.cells = {Cell::str(x.dataset),          Cell::count(x.items),           Cell::real(x.avg_subtasks(), 2),
                   Cell::real(x.avg_routed(), 2), Cell::real(x.avg_kept(), 2), Cell::percent(x.percent_routed() / 100.0)};
        t.rows.push_back(std::move(r));
    };
    for (const auto& x : d.rows) add(x, false);
    add(d.overall, true);
    t.notes.push_back("Subtasks with AI confidence below " + format_full(d.threshold) + " are flagged for human input.");
    if (!d.violations.empty()) {
        t.notes.push_back(std::to_string(d.violations.size()) +
                          " subtasks carry a routing flag that disagrees with the threshold rule.");
    }
    return t;
}

Table position_table(const PreparedCorpus& corpus, const ZTest& z, const std::string& dataset) {
    const auto& p = corpus.positions;
    Table t;
    t.id = "position_bias";
    t.title = "Option 1 selection rate: " + dataset + " vs other multiple-choice datasets";
    t.columns = {"", dataset, "Other MC Datasets"};
    Row rate, expected, n, zrow, prow;
    rate.cells = {Cell::str("Human Option 1 selection rate"), Cell::percent(ratio(p.target_option1, p.target_total)),
                  Cell::percent(ratio(p.other_option1, p.other_total))};
    expected.cells = {Cell::str("Expected rate (uniform over options)"), Cell::percent(p.target_expected),
                      Cell::percent(p.other_expected)};
    n.cells = {Cell::str("Responses"), Cell::count(p.target_total), Cell::count(p.other_total)};
    zrow.cells = {Cell::str("Two-proportion z"), Cell::real(z.z, 2), Cell::none()};
    prow.cells = {Cell::str("p"), Cell::p_value(z.p), Cell::none()};
    t.rows = {rate, expected, n, zrow, prow};
    t.notes.push_back("Counts use every baseline human response before capping.");
    if (z.degenerate) t.notes.push_back("Pooled proportion is 0 or 1; the test is degenerate.");
    return t;
}

Table subset_summary_table(const Context& ctx) {
    Table t;
    t.id = "subset_summary";
    t.title = "Low-confidence subset membership";
    t.columns = {"Dataset", "Selected", "Incomplete", "Calibration", "Test"};
    struct Counts {
        std::size_t selected = 0, incomplete = 0, cal = 0, test = 0;
    };
    std::map<std::string, Counts> per;
    for (const auto& item : ctx.cc.items) {
        auto& c = per[item.dataset];
        const bool in = ctx.a.routing.subset.contains(item.item_id);
        const bool bad = ctx.a.routing.subset_incomplete.contains(item.item_id);
        if (!in && !bad) continue;
        ++c.selected;
        if (bad) {
            ++c.incomplete;
            continue;
        }
        (ctx.cc.calibration_ids.contains(item.item_id) ? c.cal : c.test) += 1;
    }
    Counts all;
    auto add = [&](const std::string& name, const Counts& c, bool emphasis) {
        Row r;
        r.emphasis = emphasis;
        r.cells = {Cell::str(name), Cell::count(c.selected), Cell::count(c.incomplete), Cell::count(c.cal),
                   Cell::count(c.test)};
        t.rows.push_back(std::move(r));
    };
    for (const auto& [name, c] : per) {
        add(name, c, false);
        all.selected += c.selected;
        all.incomplete += c.incomplete;
        all.cal += c.cal;
        all.test += c.test;
    }
    add("All", all, true);
    t.notes.push_back("Incomplete items lack data for a requested assisted condition and are left out of subset analyses.");
    return t;
}

Table policies_table(const RoutingResult& routing) {
    Table t;
    t.id = "routing_policies";
    t.title = "Learned routing thresholds";
    t.columns = {"Policy", "Group", "T", "T_h", "T_a", "Cal obs", "Cal correct", "Cal to human"};
    for (const auto& [key, policy] : routing.policies) {
        for (const auto& [group, fit] : policy.groups) {
            Row r;
            const bool one = policy.kind == PolicyKind::one_threshold || policy.kind == PolicyKind::one_threshold_compare;
            const bool two = policy.kind == PolicyKind::two_threshold;
            r.cells = {Cell::str(key),
                       Cell::str(group),
                       one ? Cell::real(fit.thresholds.threshold, 2) : Cell::none(),
                       two ? Cell::real(fit.thresholds.human_threshold, 2) : Cell::none(),
                       two ? Cell::real(fit.thresholds.ai_threshold, 2) : Cell::none(),
                       Cell::count(fit.observations),
                       Cell::count(fit.correct),
                       Cell::count(fit.routed_to_human)};
            t.rows.push_back(std::move(r));
        }
    }
    return t;
}

void check(bool ok, const std::string& message) {
    if (!ok) throw InvariantViolation(message);
}

// ---- rendering helpers ----

std::string md_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '|') out += "\\|";
        else out += ch;
    }
    return out;
}

std::string display(const Cell& c) {
    std::string out;
    switch (c.kind) {
        case Cell::Kind::empty: return "--";
        case Cell::Kind::text: out = md_escape(c.text); break;
        case Cell::Kind::count: out = format_fixed(c.value, 0); break;
        case Cell::Kind::percent: out = format_fixed(c.value, 1) + "%"; break;
        case Cell::Kind::pp: out = signed_fixed(c.value, 1) + "pp"; break;
        case Cell::Kind::signed_num: out = signed_fixed(c.value, 1); break;
        case Cell::Kind::real: out = format_fixed(c.value, c.decimals); break;
        case Cell::Kind::pvalue: out = c.value < 0.001 ? "<0.001" : format_fixed(c.value, 3); break;
        case Cell::Kind::percent_ci:
            out = format_fixed(c.value, 1) + "% [" + format_fixed(c.lo, 1) + ", " + format_fixed(c.hi, 1) + "]";
            break;
        case Cell::Kind::interval: out = "[" + signed_fixed(c.lo, 1) + ", " + signed_fixed(c.hi, 1) + "]"; break;
    }
    if (!c.label.empty()) out += " " + md_escape(c.label);
    return out;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    return out + "\"";
}

std::string machine_value(const Cell& c) {
    switch (c.kind) {
        case Cell::Kind::empty: return "";
        case Cell::Kind::text: return c.text;
        case Cell::Kind::count: return format_fixed(c.value, 0);
        default: return format_full(c.value);
    }
}

json json_value(const Cell& c) {
    switch (c.kind) {
        case Cell::Kind::empty: return nullptr;
        case Cell::Kind::text: return c.text;
        case Cell::Kind::count: return static_cast<std::uint64_t>(c.value);
        default: return c.value;
    }
}

struct ColumnShape {
    bool value = true;
    bool bounds = false;
    bool label = false;
};

std::vector<ColumnShape> shapes(const Table& t) {
    std::vector<ColumnShape> out(t.columns.size());
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.cells.size() && i < out.size(); ++i) {
            const auto& c = r.cells[i];
            if (c.kind == Cell::Kind::percent_ci || c.kind == Cell::Kind::interval) out[i].bounds = true;
            if (c.kind == Cell::Kind::interval) out[i].value = false;
            if (!c.label.empty()) out[i].label = true;
        }
    }
    return out;
}

bool has_sections(const Table& t) {
    return std::any_of(t.rows.begin(), t.rows.end(), [](const Row& r) { return !r.section.empty(); });
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

}  // namespace

Cell Cell::str(std::string s) {
    Cell c;
    c.kind = Kind::text;
    c.text = std::move(s);
    return c;
}
Cell Cell::count(std::size_t n) {
    Cell c;
    c.kind = Kind::count;
    c.value = static_cast<double>(n);
    return c;
}
Cell Cell::percent(double fraction) {
    Cell c;
    c.kind = Kind::percent;
    c.value = fraction * 100.0;
    return c;
}
Cell Cell::pp(double diff) {
    Cell c;
    c.kind = Kind::pp;
    c.value = diff * 100.0;
    return c;
}
Cell Cell::signed_points(double diff) {
    Cell c;
    c.kind = Kind::signed_num;
    c.value = diff * 100.0;
    return c;
}
Cell Cell::real(double v, int decimals) {
    Cell c;
    c.kind = Kind::real;
    c.value = v;
    c.decimals = decimals;
    return c;
}
Cell Cell::p_value(double p) {
    Cell c;
    c.kind = Kind::pvalue;
    c.value = p;
    return c;
}
Cell Cell::percent_with_ci(double fraction, double lo, double hi) {
    Cell c;
    c.kind = Kind::percent_ci;
    c.value = fraction * 100.0;
    c.lo = lo * 100.0;
    c.hi = hi * 100.0;
    return c;
}
Cell Cell::interval_pp(double lo, double hi) {
    Cell c;
    c.kind = Kind::interval;
    c.lo = lo * 100.0;
    c.hi = hi * 100.0;
    return c;
}

const Table* ReportBundle::find(const std::string& id) const {
    for (const auto& t : tables) {
        if (t.id == id) return &t;
    }
    return nullptr;
}

std::string render_markdown(const Table& t) {
    std::ostringstream out;
    out << "# " << t.title << "\n\n";
    out << "|";
    for (const auto& c : t.columns) out << " " << md_escape(c) << " |";
    out << "\n|";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i == 0 ? " :-- |" : " --: |");
    out << "\n";
    std::string section;
    for (const auto& r : t.rows) {
        if (r.section != section) {
            section = r.section;
            out << "| **" << md_escape(section) << "** |";
            for (std::size_t i = 1; i < t.columns.size(); ++i) out << "  |";
            out << "\n";
        }
        out << "|";
        for (const auto& c : r.cells) {
            const std::string text = display(c);
            if (r.emphasis && c.kind != Cell::Kind::empty && !text.empty()) out << " **" << text << "** |";
            else out << " " << text << " |";
        }
        out << "\n";
    }
    if (!t.notes.empty()) {
        out << "\n";
        for (const auto& n : t.notes) out << n << "\n";
    }
    return out.str();
}

std::string render_csv(const Table& t) {
    const auto shape = shapes(t);
    const bool sections = has_sections(t);
    std::vector<std::string> header;
    if (sections) header.push_back("section");
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
        const std::string name = t.columns[i].empty() ? "label" : t.columns[i];
        if (shape[i].value) header.push_back(name);
        if (shape[i].bounds) {
            header.push_back(name + " lo");
            header.push_back(name + " hi");
        }
        if (shape[i].label) header.push_back(name + " label");
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_quote(fields[i]);
        out << "\n";
    };
    line(header);
    for (const auto& r : t.rows) {
        std::vector<std::string> fields;
        if (sections) fields.push_back(r.section);
        for (std::size_t i = 0; i < t.columns.size(); ++i) {
            const Cell c = i < r.cells.size() ? r.cells[i] : Cell::none();
            const bool bounded = c.kind == Cell::Kind::percent_ci || c.kind == Cell::Kind::interval;
            if (shape[i].value) fields.push_back(c.kind == Cell::Kind::interval ? "" : machine_value(c));
            if (shape[i].bounds) {
                fields.push_back(bounded ? format_full(c.lo) : "");
                fields.push_back(bounded ? format_full(c.hi) : "");
            }
            if (shape[i].label) fields.push_back(c.label);
        }
        line(fields);
    }
    return out.str();
}

json render_json(const Table& t) {
    json j;
    j["id"] = t.id;
    j["title"] = t.title;
    j["columns"] = t.columns;
    j["rows"] = json::array();
    for (const auto& r : t.rows) {
        json cells = json::array();
        for (const auto& c : r.cells) {
            if (c.kind == Cell::Kind::percent_ci) {
                cells.push_back({{"value", c.value}, {"lo", c.lo}, {"hi", c.hi}});
            } else if (c.kind == Cell::Kind::interval) {
                cells.push_back({{"lo", c.lo}, {"hi", c.hi}});
            } else if (!c.label.empty()) {
                cells.push_back({{"value", json_value(c)}, {"label", c.label}});
            } else {
                cells.push_back(json_value(c));
            }
        }
        json row = {{"cells", cells}};
        if (!r.section.empty()) row["section"] = r.section;
        if (r.emphasis) row["summary"] = true;
        j["rows"].push_back(std::move(row));
    }
    j["notes"] = t.notes;
    return j;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw DataError("SHA-256 computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "' for hashing");
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

ReportBundle build_bundle(const RunConfig& cfg, const StageArtifacts& a) {
    Context ctx{cfg, a, apply_calibration(a.corpus, a.calibration), {}, {}};
    for (const auto& item : ctx.cc.items) {
        if (!ctx.cc.calibration_ids.contains(item.item_id)) ctx.test_items.push_back(item);
    }
    ctx.evals = evaluate_all(cfg, a.corpus, a.calibration, a.routing);

    ReportBundle bundle;
    BaselineCounts base;
    bundle.tables.push_back(baseline_table(ctx, base));

    // Cross-table consistency against the baseline table.
    for (const auto& e : ctx.evals) {
        if (e.scope != "full") continue;
        const auto& o = e.report.overall;
        const std::string where = "hybrid table " + policy_key(e.scope, e.condition, e.mode, e.kind);
        if (e.mode == EvalMode::majority) {
            check(o.observations == base.n && o.ai_correct == base.ai,
                  where + ": AI-alone accuracy differs from the baseline table");
        }
        if (e.condition == Condition::baseline) {
            if (e.mode == EvalMode::majority) {
                check(o.human_observations == base.maj_n && o.human_correct == base.maj,
                      where + ": human accuracy differs from the baseline table");
            } else {
                check(o.human_observations == base.ind_n && o.human_correct == base.ind,
                      where + ": human accuracy differs from the baseline table");
            }
        }
        check(o.hybrid_correct <= o.oracle_correct, where + ": hybrid accuracy exceeds the oracle bound");
    }
    if (!ctx.cfg.policies.empty()) bundle.tables.push_back(summary_table(ctx));
    bundle.tables.push_back(wide_table(ctx, "full"));
    if (!a.routing.subset.empty() && ctx.find("subset", Condition::baseline, cfg.modes.front(), cfg.policies.front())) {
        bundle.tables.push_back(wide_table(ctx, "subset"));
        bundle.tables.push_back(subset_oracle_table(ctx));
    }
    for (const auto& e : ctx.evals) bundle.tables.push_back(policy_table(e));

    bundle.tables.push_back(metric_table("calibration_metrics", "Calibration metrics on the test split",
                                         a.calibration.metrics, false));
    bundle.tables.push_back(metric_table("confidence_signals", "AI confidence signals by calibrator (test split)",
                                         a.calibration.signals, true));
    for (const auto& curve : a.calibration.curves) bundle.tables.push_back(curve_table(curve));

    const bool have_majority = std::all_of(ctx.test_items.begin(), ctx.test_items.end(),
                                           [](const PairedItem& p) { return p.human.majority.has_value(); });
    const auto pool = best_pool(cfg);
    PolicyKind oracle_kind = pool.front();
    if (std::find(pool.begin(), pool.end(), PolicyKind::two_threshold) != pool.end()) {
        oracle_kind = PolicyKind::two_threshold;
    }
    const Evaluation* hybrid = ctx.find("full", Condition::baseline, EvalMode::majority, oracle_kind);
    if (have_majority && !ctx.test_items.empty()) {
        const auto outcomes = paired_outcomes(ctx.test_items);
        const QuadrantCounts q = agreement_quadrants(outcomes);
        check(q.total() == base.n, "quadrant total differs from the baseline test count");
        check(q.both_correct + q.ai_only == base.ai, "quadrant-derived AI accuracy differs from the baseline table");
        check(q.both_correct + q.human_only == base.maj,
              "quadrant-derived human accuracy differs from the baseline table");
        bundle.tables.push_back(quadrant_table(outcomes));
        if (hybrid) {
            const OracleReport oracle = oracle_bound(outcomes, hybrid->report);
            for (const auto& e : ctx.evals) {
                if (e.scope == "full" && e.mode == EvalMode::majority) {
                    check(e.report.overall.ai_correct <= e.report.overall.oracle_correct,
                          "AI accuracy exceeds the oracle bound");
                }
            }
            check(oracle.overall.oracle_accuracy >= oracle.overall.hybrid_accuracy &&
                      oracle.overall.oracle_accuracy >= oracle.overall.ai_accuracy &&
                      oracle.overall.oracle_accuracy >= oracle.overall.human_accuracy,
                  "oracle does not dominate its components");
            bundle.tables.push_back(oracle_overall_table(oracle, oracle_kind));
            bundle.tables.push_back(oracle_confidence_table(outcomes, hybrid->report));
            bundle.tables.push_back(oracle_dataset_table(oracle));
        }
    }

    if (!a.analysis.overreliance.cells.empty()) {
        bundle.tables.push_back(overreliance_accuracy_table(a.analysis));
        bundle.tables.push_back(overreliance_contrast_table(a.analysis, cfg));
    }
    if (a.analysis.delegation) bundle.tables.push_back(delegation_table(*a.analysis.delegation));
    if (a.analysis.position_test) {
        bundle.tables.push_back(position_table(a.corpus, *a.analysis.position_test, cfg.bias_dataset));
    }
    bundle.tables.push_back(subset_summary_table(ctx));
    bundle.tables.push_back(policies_table(a.routing));

    // Manifest: configuration hash, input digests and the table index.
    const std::string canonical = canonical_text(cfg);
    json m;
    m["artifact"] = artifact_name;
    m["version"] = artifact_version;
    m["config_sha256"] = sha256_hex(canonical);
    json lines = json::array();
    std::istringstream in(canonical);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    m["config"] = lines;
    json inputs = json::object();
    auto digest = [&](const std::string& name, const std::filesystem::path& p) {
        inputs[name] = {{"path", p.generic_string()}, {"sha256", sha256_file(p)},
                        {"bytes", std::filesystem::file_size(p)}};
    };
    digest("items", cfg.items);
    digest("responses", cfg.responses);
    if (cfg.decompositions) digest("decompositions", *cfg.decompositions);
    if (cfg.adjudication) digest("adjudication", *cfg.adjudication);
    m["inputs"] = inputs;
    json notes = json::array();
    notes.push_back(std::to_string(a.corpus.response_count) + " responses read; " +
                    std::to_string(a.corpus.human_dropped_by_cap) + " human responses dropped by capping.");
    notes.push_back(std::to_string(a.routing.subset.size()) + " subset items complete; " +
                    std::to_string(a.routing.subset_incomplete.size()) + " excluded for incomplete condition data.");
    notes.push_back("Bootstrap intervals resample raw observations (not items).");
    for (const auto& n : a.calibration.notes) notes.push_back(n);
    m["notes"] = notes;
    json ids = json::array();
    for (const auto& t : bundle.tables) ids.push_back(t.id);
    m["tables"] = ids;
    bundle.manifest = std::move(m);
    return bundle;
}

void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir, const std::vector<std::string>& formats) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    auto wants = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
    for (const auto& t : bundle.tables) {
        if (wants("md")) write_file(dir / (t.id + ".md"), render_markdown(t));
        if (wants("csv")) write_file(dir / (t.id + ".csv"), render_csv(t));
        if (wants("json")) write_file(dir / (t.id + ".json"), render_json(t).dump(2) + "\n");
    }
    json manifest = bundle.manifest;
    manifest["formats"] = formats;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::filesystem::path artifact_path(const RunConfig& config, const std::string& name) {
    return config.output_dir / "artifacts" / (name + ".json");
}

void write_artifact(const RunConfig& config, const std::string& name, const json& j) {
    const auto path = artifact_path(config, name);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw ConfigError("cannot create '" + path.parent_path().string() + "': " + ec.message());
    write_file(path, j.dump(1) + "\n");
}

json read_artifact(const RunConfig& config, const std::string& name) {
    const auto path = artifact_path(config, name);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing artifact '" + path.string() + "'; run the earlier stage first");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("artifact '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

ReportBundle run_pipeline(const RunConfig& config) {
    run_stage("config", [&] { validate(config); });
    StageArtifacts a;
    a.corpus = run_stage("ingest", [&] { return prepare_corpus(config); });
    write_artifact(config, "judgments", to_json(a.corpus));
    a.calibration = run_stage("calibrate", [&] { return calibrate_stage(config, a.corpus); });
    write_artifact(config, "calibration", to_json(a.calibration));
    a.routing = run_stage("route", [&] { return route_stage(config, a.corpus, a.calibration); });
    write_artifact(config, "policies", to_json(a.routing));
    a.analysis = run_stage("analyze", [&] { return analyze_stage(config, a.corpus, a.calibration, a.routing); });
    write_artifact(config, "analysis", to_json(a.analysis));
    ReportBundle bundle = run_stage("report", [&] { return build_bundle(config, a); });
    emit_report(bundle, config.output_dir, config.formats);
    return bundle;
}

}  // namespace deferral
