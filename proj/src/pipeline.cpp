#include "deferral/pipeline.hpp"

#include <algorithm>

#include "deferral/error.hpp"

namespace deferral {

namespace {

using nlohmann::json;

struct ItemResponses {
    std::vector<Response> ai;
    std::map<Condition, std::vector<Response>> human;
};

HumanSide human_side(const Item& item, const std::vector<Response>& responses, const EquivalenceOracle& oracle,
                     const RunConfig& config) {
    HumanSide side;
    side.majority = judge(item, responses, oracle, config.human_confidence, config.high_conf_threshold);
    side.individual = individual_judgments(item, responses, oracle);
    return side;
}

bool is_option_one(const CanonicalAnswer& answer) {
    const auto* opt = std::get_if<OptionIndex>(&answer);
    return opt && opt->value == 1;
}

std::vector<ScoredPair> pairs_of(const std::vector<std::pair<double, bool>>& raw) {
    std::vector<ScoredPair> out;
    out.reserve(raw.size());
    for (const auto& [s, l] : raw) out.push_back({s, l});
    return out;
}

double accuracy_of(std::span<const ScoredPair> pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t k = 0;
    for (const auto& p : pairs) k += p.label ? 1 : 0;
    return static_cast<double>(k) / static_cast<double>(pairs.size());
}

std::vector<ScoredPair> mapped(const CalibrationMap& map, std::span<const ScoredPair> pairs) {
    std::vector<ScoredPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({apply_calibrator(map, p.score), p.label});
    return out;
}

const std::vector<CalibratorKind>& metric_calibrators() {
    static const std::vector<CalibratorKind> kinds = {CalibratorKind::identity, CalibratorKind::platt,
                                                      CalibratorKind::isotonic, CalibratorKind::temperature,
                                                      CalibratorKind::histogram};
    return kinds;
}

// Fits every calibrator on `cal`, scores it on `test`, and optionally records reliability curves.
void evaluate_source(const std::string& name, const std::vector<ScoredPair>& cal, const std::vector<ScoredPair>& test,
                     int bins, std::vector<MetricRow>& rows, std::vector<ReliabilityCurve>* curves) {
    for (auto kind : metric_calibrators()) {
        MetricRow row;
        row.signal = name;
        row.calibrator = kind;
        row.n = test.size();
        row.accuracy = accuracy_of(test);
        try {
            const CalibrationMap map = fit_calibrator(cal, kind);
            const auto scored = mapped(map, test);
            if (!scored.empty()) {
                row.ece = ece(scored, bins);
                row.brier = brier(scored);
                row.auroc = auroc(scored);
            }
            if (curves) curves->push_back({name + "_" + std::string(to_string(kind)), reliability_curve(scored, bins)});
        } catch (const DataError& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }
}

void calibrate_side(HumanSide& side, const CalibrationMap& map) {
    if (side.majority) side.majority->calibrated_confidence = apply_calibrator(map, side.majority->raw_confidence);
    for (auto& j : side.individual) j.calibrated_confidence = apply_calibrator(map, j.raw_confidence);
}

bool complete(const HumanSide* side) { return side && side->majority && !side->individual.empty(); }

std::vector<std::string> groups_of(const std::vector<PairedItem>& items) {
    std::vector<std::string> out;
    for (const auto& i : items) out.push_back(i.group);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// Items restricted to `ids`, with the condition's human side swapped in.
std::vector<PairedItem> condition_items(const CalibratedCorpus& corpus, Condition condition,
                                        const std::set<std::string>& ids) {
    std::vector<PairedItem> out;
    for (const auto& item : corpus.items) {
        if (!ids.contains(item.item_id)) continue;
        PairedItem copy = item;
        if (condition != Condition::baseline) copy.human = corpus.assisted.at(condition).at(item.item_id);
        out.push_back(std::move(copy));
    }
    return out;
}

// ---- JSON helpers ----

json answer_json(const CanonicalAnswer& a) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, OptionIndex>) return {{"option", v.value}};
            else if constexpr (std::is_same_v<T, NormalizedText>) return {{"text", v.value}};
            else return {{"unresolvable", v.value}};
        },
        a);
}

CanonicalAnswer answer_from(const json& j) {
    if (j.contains("option")) return OptionIndex{j.at("option").get<int>()};
    if (j.contains("text")) return NormalizedText{j.at("text").get<std::string>()};
    return Unresolvable{j.at("unresolvable").get<std::string>()};
}

Condition condition_from(const json& j) {
    auto c = parse_condition(j.get<std::string>());
    if (!c) throw DataError("unknown condition '" + j.get<std::string>() + "' in artifact");
    return *c;
}

json judgment_json(const Judgment& x) {
    json j = {{"item_id", x.item_id},
              {"side", x.side == Side::ai ? "ai" : "human"},
              {"condition", std::string(to_string(x.condition))},
              {"answer", answer_json(x.answer)},
              {"supporters", x.supporters},
              {"total", x.total},
              {"raw_confidence", x.raw_confidence},
              {"correct", x.correct}};
    if (!x.participant_id.empty()) j["participant_id"] = x.participant_id;
    if (x.calibrated_confidence) j["calibrated_confidence"] = *x.calibrated_confidence;
    return j;
}

Judgment judgment_from(const json& j) {
    Judgment x;
    x.item_id = j.at("item_id").get<std::string>();
    x.side = j.at("side").get<std::string>() == "ai" ? Side::ai : Side::human;
    x.condition = condition_from(j.at("condition"));
    x.participant_id = j.value("participant_id", std::string{});
    x.answer = answer_from(j.at("answer"));
    x.supporters = j.at("supporters").get<std::size_t>();
    x.total = j.at("total").get<std::size_t>();
    x.raw_confidence = j.at("raw_confidence").get<double>();
    if (j.contains("calibrated_confidence")) x.calibrated_confidence = j.at("calibrated_confidence").get<double>();
    x.correct = j.at("correct").get<bool>();
    return x;
}

json side_json(const HumanSide& s) {
    json j;
    j["majority"] = s.majority ? judgment_json(*s.majority) : json(nullptr);
    j["individual"] = json::array();
    for (const auto& x : s.individual) j["individual"].push_back(judgment_json(x));
    return j;
}

HumanSide side_from(const json& j) {
    HumanSide s;
    if (!j.at("majority").is_null()) s.majority = judgment_from(j.at("majority"));
    for (const auto& x : j.at("individual")) s.individual.push_back(judgment_from(x));
    return s;
}

json metric_json(const MetricRow& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"signal", r.signal},       {"calibrator", std::string(to_string(r.calibrator))},
            {"n", r.n},                 {"accuracy", r.accuracy},
            {"ece", opt(r.ece)},        {"brier", opt(r.brier)},
            {"auroc", opt(r.auroc)},    {"note", r.note}};
}

MetricRow metric_from(const json& j) {
    auto opt = [](const json& v) { return v.is_null() ? std::optional<double>{} : std::optional<double>(v.get<double>()); };
    MetricRow r;
    r.signal = j.at("signal").get<std::string>();
    r.calibrator = parse_calibrator(j.at("calibrator").get<std::string>());
    r.n = j.at("n").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.ece = opt(j.at("ece"));
    r.brier = opt(j.at("brier"));
    r.auroc = opt(j.at("auroc"));
    r.note = j.at("note").get<std::string>();
    return r;
}

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }
Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json delegation_row_json(const DelegationRow& r) {
    return {{"dataset", r.dataset},
            {"items", r.items},
            {"subtasks", r.subtasks},
            {"routed", r.routed},
            {"mean_conf_routed", r.mean_conf_routed},
            {"mean_conf_kept", r.mean_conf_kept}};
}

DelegationRow delegation_row_from(const json& j) {
    DelegationRow r;
    r.dataset = j.at("dataset").get<std::string>();
    r.items = j.at("items").get<std::size_t>();
    r.subtasks = j.at("subtasks").get<std::size_t>();
    r.routed = j.at("routed").get<std::size_t>();
    r.mean_conf_routed = j.at("mean_conf_routed").get<double>();
    r.mean_conf_kept = j.at("mean_conf_kept").get<double>();
    return r;
}

}  // namespace

PreparedCorpus prepare_corpus(const RunConfig& config) {
    const ItemSet items = load_items(config.items, config.groups);
    const ResponseSet responses = load_responses(config.responses, items);
    const EquivalenceOracle oracle =
        config.adjudication ? EquivalenceOracle::from_adjudication_file(*config.adjudication) : EquivalenceOracle{};
    const ResponseSet capped = cap_human_responses(responses, config.cap_max, config.cap_seed);

    PreparedCorpus corpus;
    corpus.response_count = responses.size();
    corpus.human_dropped_by_cap = responses.size() - capped.size();
    corpus.split = split_calibration_test(items, config.split_fraction, config.split_seed);

    double target_expected = 0.0;
    double other_expected = 0.0;
    for (const auto& r : responses) {
        if (r.side != Side::human || r.condition != Condition::baseline) continue;
        const Item& item = items.at(r.item_id);
        if (item.kind != AnswerKind::mc || item.option_count <= 0) continue;
        const double expected = 1.0 / item.option_count;
        if (item.dataset == config.bias_dataset) {
            ++corpus.positions.target_total;
            corpus.positions.target_option1 += is_option_one(r.canonical) ? 1 : 0;
            target_expected += expected;
        } else {
            ++corpus.positions.other_total;
            corpus.positions.other_option1 += is_option_one(r.canonical) ? 1 : 0;
            other_expected += expected;
        }
    }
    if (corpus.positions.target_total > 0) {
        corpus.positions.target_expected = target_expected / static_cast<double>(corpus.positions.target_total);
    }
    if (corpus.positions.other_total > 0) {
        corpus.positions.other_expected = other_expected / static_cast<double>(corpus.positions.other_total);
    }

    std::map<std::string, ItemResponses> by_item;
    for (const auto& r : capped) {
        auto& slot = by_item[r.item_id];
        if (r.side == Side::ai) slot.ai.push_back(r);
        else slot.human[r.condition].push_back(r);
    }

    std::vector<const Item*> ordered;
    for (const auto& item : items.items()) ordered.push_back(&item);
    std::sort(ordered.begin(), ordered.end(), [](const Item* a, const Item* b) { return a->item_id < b->item_id; });

    for (const Item* item : ordered) {
        const auto found = by_item.find(item->item_id);
        if (found == by_item.end() || found->second.ai.empty()) {
            throw DataError("item '" + item->item_id + "': no AI responses");
        }
        const ItemResponses& slot = found->second;
        ItemRecord rec;
        rec.kind = item->kind;
        rec.in_calibration = corpus.split.in_calibration(item->item_id);
        rec.excluded = config.is_excluded(item->dataset);
        rec.pair.item_id = item->item_id;
        rec.pair.dataset = item->dataset;
        rec.pair.group = item->group;
        rec.pair.ai = judge(*item, slot.ai, oracle, config.ai_confidence, config.high_conf_threshold);
        const ClusterSet clusters = cluster_responses(slot.ai, oracle);
        rec.ai_signals = ensemble_signals(clusters, config.high_conf_threshold);
        rec.ai_computed = computed_confidence(clusters, item->kind);
        for (const auto& [condition, list] : slot.human) {
            HumanSide side = human_side(*item, list, oracle, config);
            if (condition == Condition::baseline) rec.pair.human = std::move(side);
            else corpus.assisted[condition][item->item_id] = std::move(side);
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

CalibrationResult calibrate_stage(const RunConfig& config, const PreparedCorpus& corpus) {
    CalibrationResult result;
    std::vector<std::pair<double, bool>> ai_cal, ai_test, human_cal, human_test;
    std::vector<std::pair<double, bool>> computed_cal, computed_test;
    std::map<std::string, std::vector<std::pair<double, bool>>> signal_cal, signal_test;

    for (const auto& rec : corpus.records) {
        if (rec.excluded) continue;
        auto& ai = rec.in_calibration ? ai_cal : ai_test;
        ai.emplace_back(rec.pair.ai.raw_confidence, rec.pair.ai.correct);
        if (rec.pair.human.majority) {
            auto& h = rec.in_calibration ? human_cal : human_test;
            h.emplace_back(rec.pair.human.majority->raw_confidence, rec.pair.human.majority->correct);
        }
        if (rec.kind == AnswerKind::mc) {
            auto& c = rec.in_calibration ? computed_cal : computed_test;
            c.emplace_back(rec.ai_computed, rec.pair.ai.correct);
        }
        auto& sig = rec.in_calibration ? signal_cal : signal_test;
        for (const auto& [name, value] : rec.ai_signals) sig[name].emplace_back(value, rec.pair.ai.correct);
        sig["computed"].emplace_back(rec.ai_computed, rec.pair.ai.correct);
    }

    try {
        result.ai_map = fit_calibrator(pairs_of(ai_cal), config.calibrator);
    } catch (const DataError& e) {
        throw DataError(std::string("AI calibration map: ") + e.what());
    }
    result.ai_map.meta = {"ai", config.ai_confidence.name(), "calibration"};
    try {
        result.human_map = fit_calibrator(pairs_of(human_cal), config.calibrator);
    } catch (const DataError& e) {
        throw DataError(std::string("human calibration map: ") + e.what());
    }
    result.human_map.meta = {"human", config.human_confidence.name(), "calibration"};

    for (auto condition : config.conditions) {
        if (condition == Condition::baseline) continue;
        std::vector<std::pair<double, bool>> pairs;
        const auto it = corpus.assisted.find(condition);
        if (it != corpus.assisted.end()) {
            for (const auto& rec : corpus.records) {
                if (rec.excluded || !rec.in_calibration) continue;
                const auto side = it->second.find(rec.pair.item_id);
                if (side == it->second.end() || !side->second.majority) continue;
                pairs.emplace_back(side->second.majority->raw_confidence, side->second.majority->correct);
            }
        }
        try {
            CalibrationMap map = fit_calibrator(pairs_of(pairs), config.calibrator);
            map.meta = {"human", config.human_confidence.name(), "calibration:" + std::string(to_string(condition))};
            result.condition_maps.emplace(condition, std::move(map));
        } catch (const DataError& e) {
            CalibrationMap map = result.human_map;
            map.meta.split = "calibration:baseline-fallback";
            result.condition_maps.emplace(condition, std::move(map));
            result.notes.push_back(std::string(to_string(condition)) + " human map fell back to the baseline map: " +
                                   e.what());
        }
    }

    const int bins = config.ece_bins;
    evaluate_source("ai_" + config.ai_confidence.name(), pairs_of(ai_cal), pairs_of(ai_test), bins, result.metrics,
                    &result.curves);
    if (config.ai_confidence.kind != ConfidenceMethod::Kind::computed) {
        evaluate_source("ai_computed_mc", pairs_of(computed_cal), pairs_of(computed_test), bins, result.metrics, nullptr);
    }
    evaluate_source("human", pairs_of(human_cal), pairs_of(human_test), bins, result.metrics, &result.curves);

    std::vector<std::string> names = signal_names();
    names.push_back("computed");
    for (const auto& name : names) {
        evaluate_source(name, pairs_of(signal_cal[name]), pairs_of(signal_test[name]), bins, result.signals, nullptr);
    }
    return result;
}

CalibratedCorpus apply_calibration(const PreparedCorpus& corpus, const CalibrationResult& calibration) {
    CalibratedCorpus out;
    for (const auto& rec : corpus.records) {
        if (rec.excluded) continue;
        PairedItem item = rec.pair;
        item.ai.calibrated_confidence = apply_calibrator(calibration.ai_map, item.ai.raw_confidence);
        calibrate_side(item.human, calibration.human_map);
        if (rec.in_calibration) out.calibration_ids.insert(item.item_id);
        out.items.push_back(std::move(item));
    }
    std::set<std::string> kept;
    for (const auto& item : out.items) kept.insert(item.item_id);
    for (const auto& [condition, sides] : corpus.assisted) {
        const auto map_it = calibration.condition_maps.find(condition);
        const CalibrationMap& map = map_it != calibration.condition_maps.end() ? map_it->second : calibration.human_map;
        auto& target = out.assisted[condition];
        for (const auto& [id, side] : sides) {
            if (!kept.contains(id)) continue;
            HumanSide copy = side;
            calibrate_side(copy, map);
            target.emplace(id, std::move(copy));
        }
    }
    return out;
}

std::string policy_key(const std::string& scope, Condition condition, EvalMode mode, PolicyKind kind) {
    return scope + "/" + std::string(to_string(condition)) + "/" + std::string(to_string(mode)) + "/" +
           std::string(to_string(kind));
}

RoutingResult route_stage(const RunConfig& config, const PreparedCorpus& corpus, const CalibrationResult& calibration) {
    const CalibratedCorpus cc = apply_calibration(corpus, calibration);
    RoutingResult result;

    std::vector<ConfidenceEntry> entries;
    for (const auto& item : cc.items) entries.push_back({item.item_id, item.dataset, item.ai.confidence()});
    for (const auto& id : select_low_confidence_subset(entries, config.subset)) {
        bool ok = true;
        const auto base = std::find_if(cc.items.begin(), cc.items.end(), [&](const PairedItem& p) { return p.item_id == id; });
        ok = complete(&base->human);
        for (auto condition : config.conditions) {
            if (condition == Condition::baseline || !ok) continue;
            const auto sides = cc.assisted.find(condition);
            const HumanSide* side = nullptr;
            if (sides != cc.assisted.end()) {
                const auto it = sides->second.find(id);
                if (it != sides->second.end()) side = &it->second;
            }
            ok = complete(side);
        }
        (ok ? result.subset : result.subset_incomplete).insert(id);
    }

    std::vector<PairedItem> calibration_items;
    std::set<std::string> subset_cal, subset_test;
    for (const auto& item : cc.items) {
        const bool cal = cc.calibration_ids.contains(item.item_id);
        if (cal) calibration_items.push_back(item);
        if (result.subset.contains(item.item_id)) (cal ? subset_cal : subset_test).insert(item.item_id);
    }
    const auto full_groups = groups_of(cc.items);

    for (auto mode : config.modes) {
        for (auto kind : config.policies) {
            const auto obs = routing_observations(calibration_items, mode);
            try {
                result.policies[policy_key("full", Condition::baseline, mode, kind)] =
                    learn_policy(kind, obs, full_groups, config.grid_step);
            } catch (const DataError& e) {
                throw DataError("learning " + policy_key("full", Condition::baseline, mode, kind) + ": " + e.what());
            }
        }
    }

    if (subset_test.empty()) return result;
    const auto test_groups = groups_of(condition_items(cc, Condition::baseline, subset_test));
    for (auto condition : config.conditions) {
        const auto cal_items = condition_items(cc, condition, subset_cal);
        for (auto mode : config.modes) {
            const auto obs = routing_observations(cal_items, mode);
            for (auto kind : config.policies) {
                const auto key = policy_key("subset", condition, mode, kind);
                try {
                    result.policies[key] = learn_policy(kind, obs, test_groups, config.grid_step);
                } catch (const DataError& e) {
                    throw DataError("learning " + key + " on the subset calibration portion: " + e.what());
                }
            }
        }
    }
    return result;
}

std::vector<Evaluation> evaluate_all(const RunConfig& config, const PreparedCorpus& corpus,
                                     const CalibrationResult& calibration, const RoutingResult& routing) {
    const CalibratedCorpus cc = apply_calibration(corpus, calibration);
    std::vector<PairedItem> test_items;
    std::set<std::string> subset_test;
    for (const auto& item : cc.items) {
        if (cc.calibration_ids.contains(item.item_id)) continue;
        test_items.push_back(item);
        if (routing.subset.contains(item.item_id)) subset_test.insert(item.item_id);
    }

    auto policy = [&](const std::string& key) -> const RoutingPolicy& {
        const auto it = routing.policies.find(key);
        if (it == routing.policies.end()) throw DataError("routing artifact has no policy '" + key + "'");
        return it->second;
    };

    std::vector<Evaluation> out;
    for (auto condition : config.conditions) {
        for (auto mode : config.modes) {
            for (auto kind : config.policies) {
                Evaluation e{"full", condition, mode, kind, {}};
                if (condition == Condition::baseline) {
                    e.report = evaluate_hybrid(policy(policy_key("full", condition, mode, kind)), test_items, mode);
                } else if (subset_test.empty()) {
                    auto pinned = condition_overlay(test_items, {}, {});
                    RoutingPolicy any;
                    any.kind = kind;
                    e.report = evaluate_hybrid(any, pinned, mode);
                } else {
                    const auto overlay = condition_overlay(test_items, cc.assisted.at(condition), subset_test);
                    e.report = evaluate_hybrid(policy(policy_key("subset", condition, mode, kind)), overlay, mode);
                }
                out.push_back(std::move(e));
            }
        }
    }
    if (subset_test.empty()) return out;
    for (auto condition : config.conditions) {
        const auto items = condition_items(cc, condition, subset_test);
        for (auto mode : config.modes) {
            for (auto kind : config.policies) {
                Evaluation e{"subset", condition, mode, kind, {}};
                e.report = evaluate_hybrid(policy(policy_key("subset", condition, mode, kind)), items, mode);
                out.push_back(std::move(e));
            }
        }
    }
    return out;
}

AnalysisResult analyze_stage(const RunConfig& config, const PreparedCorpus& corpus,
                             const CalibrationResult& calibration, const RoutingResult& routing) {
    AnalysisResult result;
    const CalibratedCorpus cc = apply_calibration(corpus, calibration);

    std::vector<ConditionObservations> observations;
    for (const auto& item : cc.items) {
        if (cc.calibration_ids.contains(item.item_id) || !routing.subset.contains(item.item_id)) continue;
        ConditionObservations obs;
        obs.item_id = item.item_id;
        obs.ai_correct = item.ai.correct;
        for (auto condition : config.conditions) {
            obs.individual[condition] = condition == Condition::baseline
                                            ? item.human.individual
                                            : cc.assisted.at(condition).at(item.item_id).individual;
        }
        observations.push_back(std::move(obs));
    }
    result.overreliance_items = observations.size();
    if (!observations.empty()) result.overreliance = overreliance_report(observations, config.resampling);

    if (config.decompositions) {
        const ItemSet items = load_items(config.items, config.groups);
        const auto records = load_decompositions(*config.decompositions, &items, config.delegation_threshold);
        result.delegation = delegation_stats(records, config.delegation_threshold);
    }

    const auto& pos = corpus.positions;
    if (pos.target_total > 0 && pos.other_total > 0) {
        result.position_test =
            two_proportion_ztest(pos.target_option1, pos.target_total, pos.other_option1, pos.other_total);
    }
    return result;
}

// ---- serialization ----

json to_json(const PreparedCorpus& corpus) {
    json j;
    j["split"] = {{"fraction", corpus.split.fraction}, {"seed", corpus.split.seed}};
    j["response_count"] = corpus.response_count;
    j["human_dropped_by_cap"] = corpus.human_dropped_by_cap;
    const auto& p = corpus.positions;
    j["positions"] = {{"target_option1", p.target_option1}, {"target_total", p.target_total},
                      {"target_expected", p.target_expected}, {"other_option1", p.other_option1},
                      {"other_total", p.other_total}, {"other_expected", p.other_expected}};
    j["records"] = json::array();
    for (const auto& r : corpus.records) {
        json rec = {{"item_id", r.pair.item_id},
                    {"dataset", r.pair.dataset},
                    {"group", r.pair.group},
                    {"kind", r.kind == AnswerKind::mc ? "mc" : "ft"},
                    {"split", r.in_calibration ? "calibration" : "test"},
                    {"excluded", r.excluded},
                    {"ai", judgment_json(r.pair.ai)},
                    {"human", side_json(r.pair.human)},
                    {"ai_computed", r.ai_computed},
                    {"ai_signals", r.ai_signals}};
        j["records"].push_back(std::move(rec));
    }
    j["assisted"] = json::object();
    for (const auto& [condition, sides] : corpus.assisted) {
        json block = json::object();
        for (const auto& [id, side] : sides) block[id] = side_json(side);
        j["assisted"][std::string(to_string(condition))] = std::move(block);
    }
    return j;
}

PreparedCorpus prepared_corpus_from_json(const json& j) {
    PreparedCorpus corpus;
    corpus.split.fraction = j.at("split").at("fraction").get<double>();
    corpus.split.seed = j.at("split").at("seed").get<std::uint64_t>();
    corpus.response_count = j.at("response_count").get<std::size_t>();
    corpus.human_dropped_by_cap = j.at("human_dropped_by_cap").get<std::size_t>();
    const auto& p = j.at("positions");
    corpus.positions = {p.at("target_option1").get<std::size_t>(), p.at("target_total").get<std::size_t>(),
                        p.at("target_expected").get<double>(),     p.at("other_option1").get<std::size_t>(),
                        p.at("other_total").get<std::size_t>(),    p.at("other_expected").get<double>()};
    for (const auto& rec : j.at("records")) {
        ItemRecord r;
        r.pair.item_id = rec.at("item_id").get<std::string>();
        r.pair.dataset = rec.at("dataset").get<std::string>();
        r.pair.group = rec.at("group").get<std::string>();
        r.kind = rec.at("kind").get<std::string>() == "mc" ? AnswerKind::mc : AnswerKind::ft;
        r.in_calibration = rec.at("split").get<std::string>() == "calibration";
        r.excluded = rec.at("excluded").get<bool>();
        r.pair.ai = judgment_from(rec.at("ai"));
        r.pair.human = side_from(rec.at("human"));
        r.ai_computed = rec.at("ai_computed").get<double>();
        r.ai_signals = rec.at("ai_signals").get<SignalVector>();
        corpus.split.part[r.pair.item_id] = r.in_calibration ? SplitPart::calibration : SplitPart::test;
        corpus.records.push_back(std::move(r));
    }
    for (const auto& [name, block] : j.at("assisted").items()) {
        auto& sides = corpus.assisted[condition_from(json(name))];
        for (const auto& [id, side] : block.items()) sides.emplace(id, side_from(side));
    }
    return corpus;
}

json to_json(const CalibrationResult& r) {
    json j;
    j["ai_map"] = to_json(r.ai_map);
    j["human_map"] = to_json(r.human_map);
    j["condition_maps"] = json::object();
    for (const auto& [c, map] : r.condition_maps) j["condition_maps"][std::string(to_string(c))] = to_json(map);
    j["notes"] = r.notes;
    j["metrics"] = json::array();
    for (const auto& m : r.metrics) j["metrics"].push_back(metric_json(m));
    j["signals"] = json::array();
    for (const auto& m : r.signals) j["signals"].push_back(metric_json(m));
    j["curves"] = json::array();
    for (const auto& c : r.curves) {
        json points = json::array();
        for (const auto& pt : c.points) points.push_back({pt.mean_score, pt.accuracy, pt.count});
        j["curves"].push_back({{"id", c.id}, {"points", points}});
    }
    return j;
}

CalibrationResult calibration_result_from_json(const json& j) {
    CalibrationResult r;
    r.ai_map = calibration_map_from_json(j.at("ai_map"));
    r.human_map = calibration_map_from_json(j.at("human_map"));
    for (const auto& [name, map] : j.at("condition_maps").items()) {
        r.condition_maps.emplace(condition_from(json(name)), calibration_map_from_json(map));
    }
    r.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& m : j.at("metrics")) r.metrics.push_back(metric_from(m));
    for (const auto& m : j.at("signals")) r.signals.push_back(metric_from(m));
    for (const auto& c : j.at("curves")) {
        ReliabilityCurve curve;
        curve.id = c.at("id").get<std::string>();
        for (const auto& pt : c.at("points")) {
            curve.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>(), pt.at(2).get<std::size_t>()});
        }
        r.curves.push_back(std::move(curve));
    }
    return r;
}

json to_json(const RoutingResult& r) {
    json j;
    j["subset"] = r.subset;
    j["subset_incomplete"] = r.subset_incomplete;
    j["policies"] = json::object();
    for (const auto& [key, policy] : r.policies) j["policies"][key] = to_json(policy);
    return j;
}

RoutingResult routing_result_from_json(const json& j) {
    RoutingResult r;
    r.subset = j.at("subset").get<std::set<std::string>>();
    r.subset_incomplete = j.at("subset_incomplete").get<std::set<std::string>>();
    for (const auto& [key, policy] : j.at("policies").items()) r.policies.emplace(key, routing_policy_from_json(policy));
    return r;
}

json to_json(const AnalysisResult& r) {
    json j;
    j["overreliance_items"] = r.overreliance_items;
    j["overreliance"] = {{"cells", json::array()}, {"contrasts", json::array()}};
    for (const auto& c : r.overreliance.cells) {
        j["overreliance"]["cells"].push_back({{"condition", std::string(to_string(c.condition))},
                                             {"ai_correct", c.ai_correct},
                                             {"observations", c.observations},
                                             {"items", c.items},
                                             {"accuracy", c.accuracy},
                                             {"ci", interval_json(c.ci)}});
    }
    for (const auto& c : r.overreliance.contrasts) {
        j["overreliance"]["contrasts"].push_back({{"ai_correct", c.ai_correct},
                                                 {"first", std::string(to_string(c.first))},
                                                 {"second", std::string(to_string(c.second))},
                                                 {"difference", c.difference},
                                                 {"ci", interval_json(c.ci)},
                                                 {"p_value", c.p_value}});
    }
    if (r.delegation) {
        json d;
        d["threshold"] = r.delegation->threshold;
        d["rows"] = json::array();
        for (const auto& row : r.delegation->rows) d["rows"].push_back(delegation_row_json(row));
        d["overall"] = delegation_row_json(r.delegation->overall);
        d["violations"] = json::array();
        for (const auto& v : r.delegation->violations) {
            d["violations"].push_back({{"item_id", v.item_id},
                                       {"subtask_index", v.subtask_index},
                                       {"ai_confidence", v.ai_confidence},
                                       {"routed_to_human", v.routed_to_human}});
        }
        j["delegation"] = std::move(d);
    } else {
        j["delegation"] = nullptr;
    }
    if (r.position_test) {
        j["position_test"] = {{"z", r.position_test->z}, {"p", r.position_test->p},
                              {"degenerate", r.position_test->degenerate}};
    } else {
        j["position_test"] = nullptr;
    }
    return j;
}

AnalysisResult analysis_result_from_json(const json& j) {
    AnalysisResult r;
    r.overreliance_items = j.at("overreliance_items").get<std::size_t>();
    for (const auto& c : j.at("overreliance").at("cells")) {
        OverrelianceCell cell;
        cell.condition = condition_from(c.at("condition"));
        cell.ai_correct = c.at("ai_correct").get<bool>();
        cell.observations = c.at("observations").get<std::size_t>();
        cell.items = c.at("items").get<std::size_t>();
        cell.accuracy = c.at("accuracy").get<double>();
        cell.ci = interval_from(c.at("ci"));
        r.overreliance.cells.push_back(cell);
    }
    for (const auto& c : j.at("overreliance").at("contrasts")) {
        OverrelianceContrast con;
        con.ai_correct = c.at("ai_correct").get<bool>();
        con.first = condition_from(c.at("first"));
        con.second = condition_from(c.at("second"));
        con.difference = c.at("difference").get<double>();
        con.ci = interval_from(c.at("ci"));
        con.p_value = c.at("p_value").get<double>();
        r.overreliance.contrasts.push_back(con);
    }
    if (!j.at("delegation").is_null()) {
        const auto& d = j.at("delegation");
        DelegationReport rep;
        rep.threshold = d.at("threshold").get<double>();
        for (const auto& row : d.at("rows")) rep.rows.push_back(delegation_row_from(row));
        rep.overall = delegation_row_from(d.at("overall"));
        for (const auto& v : d.at("violations")) {
            rep.violations.push_back({v.at("item_id").get<std::string>(), v.at("subtask_index").get<std::size_t>(),
                                      v.at("ai_confidence").get<double>(), v.at("routed_to_human").get<bool>()});
        }
        r.delegation = std::move(rep);
    }
    if (!j.at("position_test").is_null()) {
        const auto& z = j.at("position_test");
        r.position_test = ZTest{z.at("z").get<double>(), z.at("p").get<double>(), z.at("degenerate").get<bool>()};
    }
    return r;
}

}  // namespace deferral
