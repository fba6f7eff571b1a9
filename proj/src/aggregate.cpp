#include "deferral/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "deferral/error.hpp"

namespace deferral {

namespace {

// Sums in sorted order so equal multisets give bit-identical results.
double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return total;
}

std::vector<double> confidences_of(const std::vector<Response>& members) {
    std::vector<double> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(m.confidence);
    return out;
}

}  // namespace

EquivalenceOracle EquivalenceOracle::from_adjudication_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read adjudication table " + path.string());
    EquivalenceOracle oracle;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto r = nlohmann::json::parse(line);
            if (r.at("equivalent").get<bool>()) {
                oracle.add_equivalent(r.at("a").get<std::string>(), r.at("b").get<std::string>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return oracle;
}

void EquivalenceOracle::add_equivalent(std::string_view a, std::string_view b) {
    std::string x = normalize_text(a);
    std::string y = normalize_text(b);
    if (x == y) return;
    if (y < x) std::swap(x, y);
    pairs_.emplace(std::move(x), std::move(y));
}

bool EquivalenceOracle::equivalent(const CanonicalAnswer& a, const CanonicalAnswer& b) const {
    if (a == b) return true;
    const auto* ta = std::get_if<NormalizedText>(&a);
    const auto* tb = std::get_if<NormalizedText>(&b);
    if (ta == nullptr || tb == nullptr || pairs_.empty()) return false;
    const auto key = ta->value < tb->value ? std::make_pair(ta->value, tb->value) : std::make_pair(tb->value, ta->value);
    return pairs_.contains(key);
}

double Cluster::mean_confidence() const {
    if (members.empty()) return 0.0;
    return sorted_sum(confidences_of(members)) / static_cast<double>(members.size());
}

ClusterSet cluster_responses(std::span<const Response> responses, const EquivalenceOracle& oracle) {
    if (responses.empty()) throw DataError("cannot cluster an empty response list");
    std::vector<Response> ordered(responses.begin(), responses.end());
    for (const auto& r : ordered) {
        if (r.item_id != ordered.front().item_id) throw DataError("responses span several items");
    }
    std::sort(ordered.begin(), ordered.end(), identity_less);

    ClusterSet out;
    out.total = ordered.size();
    for (auto& r : ordered) {
        auto it = std::find_if(out.clusters.begin(), out.clusters.end(),
                               [&](const Cluster& c) { return oracle.equivalent(r.canonical, c.representative); });
        if (it == out.clusters.end()) {
            out.clusters.push_back(Cluster{r.canonical, {}});
            it = std::prev(out.clusters.end());
        }
        it->members.push_back(std::move(r));
    }

    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < out.clusters.size(); ++i) keyed.emplace_back(out.clusters[i].mean_confidence(), i);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& x, const auto& y) {
        const Cluster& a = out.clusters[x.second];
        const Cluster& b = out.clusters[y.second];
        if (a.size() != b.size()) return a.size() > b.size();
        if (x.first != y.first) return x.first > y.first;
        return a.representative < b.representative;
    });
    std::vector<Cluster> sorted;
    sorted.reserve(keyed.size());
    for (const auto& [mean, idx] : keyed) sorted.push_back(std::move(out.clusters[idx]));
    out.clusters = std::move(sorted);
    return out;
}

MajorityAnswer select_majority(const ClusterSet& clusters) {
    if (clusters.clusters.empty()) throw DataError("empty cluster set");
    return {clusters.winner().representative, clusters.winner().size()};
}

double direct_ask_confidence(const ClusterSet& clusters) {
    if (clusters.clusters.empty()) throw DataError("empty cluster set");
    return clusters.winner().mean_confidence();
}

double normalized_entropy(const ClusterSet& clusters) {
    const std::size_t k = clusters.clusters.size();
    if (k <= 1) return 0.0;
    const auto total = static_cast<double>(clusters.total);
    double h = 0.0;
    for (const auto& c : clusters.clusters) {
        const double p = static_cast<double>(c.size()) / total;
        h -= p * std::log(p);
    }
    return std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
}

double computed_confidence(const ClusterSet& clusters, AnswerKind kind) {
    if (clusters.clusters.empty()) throw DataError("empty cluster set");
    if (kind == AnswerKind::mc) {
        return static_cast<double>(clusters.winner().size()) / static_cast<double>(clusters.total);
    }
    return 1.0 - normalized_entropy(clusters);
}

const std::vector<std::string>& signal_names() {
    static const std::vector<std::string> names = {
        "mean_conf",     "median_conf", "min_conf",       "max_conf",           "agreement_rate",
        "prediction_entropy", "cw_agreement", "composite", "top2_gap",           "frac_high_conf",
        "mean_conf_majority", "majority_vote_conf",
    };
    return names;
}

SignalVector ensemble_signals(const ClusterSet& clusters, double high_confidence_threshold) {
    if (clusters.clusters.empty()) throw DataError("empty cluster set");
    std::vector<double> all;
    for (const auto& c : clusters.clusters) {
        for (const auto& m : c.members) all.push_back(m.confidence);
    }
    std::sort(all.begin(), all.end());
    const auto n = static_cast<double>(all.size());
    const double total_conf = sorted_sum(all);
    const double mean = total_conf / n;
    const double median = all.size() % 2 == 1 ? all[all.size() / 2]
                                               : 0.5 * (all[all.size() / 2 - 1] + all[all.size() / 2]);
    const auto& winner = clusters.winner();
    const double agreement = static_cast<double>(winner.size()) / n;
    const double winner_conf = sorted_sum(confidences_of(winner.members));
    const double second = clusters.clusters.size() > 1 ? static_cast<double>(clusters.clusters[1].size()) : 0.0;
    const auto high = std::count_if(all.begin(), all.end(), [&](double c) { return c >= high_confidence_threshold; });
    const double majority_mean = winner.mean_confidence();

    SignalVector s;
    s["mean_conf"] = mean;
    s["median_conf"] = median;
    s["min_conf"] = all.front();
    s["max_conf"] = all.back();
    s["agreement_rate"] = agreement;
    s["prediction_entropy"] = normalized_entropy(clusters);
    s["cw_agreement"] = total_conf > 0.0 ? winner_conf / total_conf : 0.0;
    s["composite"] = agreement * mean;
    s["top2_gap"] = (static_cast<double>(winner.size()) - second) / n;
    s["frac_high_conf"] = static_cast<double>(high) / n;
    s["mean_conf_majority"] = majority_mean;
    s["majority_vote_conf"] = majority_mean;
    return s;
}

ConfidenceMethod ConfidenceMethod::parse(std::string_view text) {
    if (text == "direct_ask" || text == "direct") return {Kind::direct_ask, {}};
    if (text == "computed") return {Kind::computed, {}};
    const auto& names = signal_names();
    if (std::find(names.begin(), names.end(), text) != names.end()) return {Kind::signal, std::string(text)};
    throw ConfigError("unknown confidence method '" + std::string(text) + "'");
}

std::string ConfidenceMethod::name() const {
    switch (kind) {
        case Kind::direct_ask: return "direct_ask";
        case Kind::computed: return "computed";
        case Kind::signal: return signal;
    }
    return "direct_ask";
}

bool is_correct(const CanonicalAnswer& answer, const Item& item, const EquivalenceOracle& oracle) {
    return is_resolved(answer) && oracle.equivalent(answer, item.gold);
}

Judgment judge(const Item& item, std::span<const Response> responses, const EquivalenceOracle& oracle,
               const ConfidenceMethod& method, double high_confidence_threshold) {
    if (responses.empty()) throw DataError("item '" + item.item_id + "': no responses to judge");
    for (const auto& r : responses) {
        if (r.item_id != item.item_id) throw DataError("item '" + item.item_id + "': foreign response");
    }
    const ClusterSet clusters = cluster_responses(responses, oracle);
    const MajorityAnswer majority = select_majority(clusters);

    Judgment j;
    j.item_id = item.item_id;
    j.side = responses.front().side;
    j.condition = responses.front().condition;
    j.answer = majority.answer;
    j.supporters = majority.supporters;
    j.total = clusters.total;
    switch (method.kind) {
        case ConfidenceMethod::Kind::direct_ask: j.raw_confidence = direct_ask_confidence(clusters); break;
        case ConfidenceMethod::Kind::computed: j.raw_confidence = computed_confidence(clusters, item.kind); break;
        case ConfidenceMethod::Kind::signal:
            j.raw_confidence = ensemble_signals(clusters, high_confidence_threshold).at(method.signal);
            break;
    }
    j.correct = is_correct(j.answer, item, oracle);
    return j;
}

std::vector<Judgment> individual_judgments(const Item& item, std::span<const Response> human_responses,
                                           const EquivalenceOracle& oracle) {
    std::vector<Response> ordered(human_responses.begin(), human_responses.end());
    std::sort(ordered.begin(), ordered.end(), identity_less);
    std::vector<Judgment> out;
    out.reserve(ordered.size());
    for (const auto& r : ordered) {
        Judgment j;
        j.item_id = item.item_id;
        j.side = Side::human;
        j.condition = r.condition;
        j.participant_id = r.participant_id;
        j.answer = r.canonical;
        j.supporters = 1;
        j.total = 1;
        j.raw_confidence = r.confidence;
        j.correct = is_correct(r.canonical, item, oracle);
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace deferral
