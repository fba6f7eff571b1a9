#include "deferral/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "deferral/error.hpp"

namespace deferral {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

int bin_index(double score, int bins) {
    const auto idx = static_cast<int>(std::floor(clamp01(score) * bins));
    return std::min(idx, bins - 1);
}

void require_two_classes(std::span<const ScoredPair> pairs, std::string_view method) {
    const bool any_true = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return p.label; });
    const bool any_false = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return !p.label; });
    if (!any_true || !any_false) {
        throw DegenerateLabels(std::string(method) + " calibration needs both label classes");
    }
}

PlattMap fit_platt(std::span<const ScoredPair> pairs) {
    constexpr double ridge = 1e-6;
    constexpr int max_iterations = 100;
    constexpr double step_tolerance = 1e-8;

    auto nll = [&](double a, double b) {
        double total = 0.0;
        for (const auto& p : pairs) {
            const double f = a * p.score + b;
            total += softplus(f) - (p.label ? f : 0.0);
        }
        return total;
    };

    double a = 0.0;
    double b = 0.0;
    double current = nll(a, b);
    for (int iter = 0; iter < max_iterations; ++iter) {
        double ga = 0.0, gb = 0.0, haa = ridge, hab = 0.0, hbb = ridge;
        for (const auto& p : pairs) {
            const double prob = sigmoid(a * p.score + b);
            const double r = prob - (p.label ? 1.0 : 0.0);
            const double w = prob * (1.0 - prob);
            ga += r * p.score;
            gb += r;
            haa += w * p.score * p.score;
            hab += w * p.score;
            hbb += w;
        }
        const double det = haa * hbb - hab * hab;
        if (!(det > 0.0)) break;
        double da = (hbb * ga - hab * gb) / det;
        double db = (haa * gb - hab * ga) / det;

        // Backtrack so the likelihood never gets worse.
        double scale = 1.0;
        double next = nll(a - da, b - db);
        for (int halving = 0; halving < 40 && next > current; ++halving) {
            scale *= 0.5;
            next = nll(a - scale * da, b - scale * db);
        }
        if (next > current) break;
        da *= scale;
        db *= scale;
        a -= da;
        b -= db;
        current = next;
        if (std::max(std::abs(da), std::abs(db)) < step_tolerance) break;
    }
    return {a, b};
}

double logit_clamped(double score, double eps) {
    const double s = std::clamp(score, eps, 1.0 - eps);
    return std::log(s / (1.0 - s));
}

TemperatureMap fit_temperature(std::span<const ScoredPair> pairs) {
    constexpr double eps = 1e-6;
    constexpr double lo_bound = 0.05;
    constexpr double hi_bound = 20.0;
    constexpr double tolerance = 1e-6;

    std::vector<double> logits;
    logits.reserve(pairs.size());
    for (const auto& p : pairs) logits.push_back(logit_clamped(p.score, eps));
    auto nll = [&](double t) {
        double total = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const double f = logits[i] / t;
            total += softplus(f) - (pairs[i].label ? f : 0.0);
        }
        return total;
    };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = lo_bound;
    double hi = hi_bound;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = nll(x1);
    double f2 = nll(x2);
    while (hi - lo > tolerance) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = nll(x2);
        }
    }
    return {0.5 * (lo + hi), eps};
}

HistogramMap fit_histogram(std::span<const ScoredPair> pairs, int bins) {
    std::vector<double> sums(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const auto& p : pairs) {
        const auto b = static_cast<std::size_t>(bin_index(p.score, bins));
        sums[b] += p.label ? 1.0 : 0.0;
        ++counts[b];
    }
    HistogramMap map;
    for (int i = 0; i <= bins; ++i) map.edges.push_back(static_cast<double>(i) / bins);
    map.values.assign(static_cast<std::size_t>(bins), 0.0);
    for (int i = 0; i < bins; ++i) {
        // Nearest non-empty bin; scanning distance outward, lower index first.
        for (int d = 0; d < bins; ++d) {
            const int lower = i - d;
            const int upper = i + d;
            if (lower >= 0 && counts[static_cast<std::size_t>(lower)] > 0) {
                map.values[static_cast<std::size_t>(i)] =
                    sums[static_cast<std::size_t>(lower)] / static_cast<double>(counts[static_cast<std::size_t>(lower)]);
                break;
            }
            if (upper < bins && counts[static_cast<std::size_t>(upper)] > 0) {
                map.values[static_cast<std::size_t>(i)] =
                    sums[static_cast<std::size_t>(upper)] / static_cast<double>(counts[static_cast<std::size_t>(upper)]);
                break;
            }
        }
    }
    return map;
}

}  // namespace

std::vector<IsotonicBlock> pool_adjacent_violators(std::span<const ScoredPair> pairs) {
    std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredPair& a, const ScoredPair& b) { return a.score < b.score; });

    struct Acc {
        IsotonicBlock block;
        double x_sum = 0.0;
        double y_sum = 0.0;
    };
    std::vector<Acc> stack;
    std::size_t i = 0;
    while (i < sorted.size()) {
        // Pre-pool equal scores.
        Acc acc;
        acc.block.x_lo = acc.block.x_hi = sorted[i].score;
        while (i < sorted.size() && sorted[i].score == acc.block.x_lo) {
            acc.block.weight += 1.0;
            acc.x_sum += sorted[i].score;
            acc.y_sum += sorted[i].label ? 1.0 : 0.0;
            ++i;
        }
        acc.block.mean = acc.y_sum / acc.block.weight;
        stack.push_back(acc);
        while (stack.size() >= 2 && stack[stack.size() - 2].block.mean > stack.back().block.mean) {
            Acc top = stack.back();
            stack.pop_back();
            Acc& prev = stack.back();
            prev.block.x_hi = top.block.x_hi;
            prev.block.weight += top.block.weight;
            prev.x_sum += top.x_sum;
            prev.y_sum += top.y_sum;
            prev.block.mean = prev.y_sum / prev.block.weight;
        }
    }
    std::vector<IsotonicBlock> out;
    out.reserve(stack.size());
    for (auto& acc : stack) {
        acc.block.x_center = acc.x_sum / acc.block.weight;
        out.push_back(acc.block);
    }
    return out;
}

std::string_view to_string(CalibratorKind kind) {
    switch (kind) {
        case CalibratorKind::identity: return "identity";
        case CalibratorKind::isotonic: return "isotonic";
        case CalibratorKind::platt: return "platt";
        case CalibratorKind::temperature: return "temperature";
        case CalibratorKind::histogram: return "histogram";
    }
    return "identity";
}

CalibratorKind parse_calibrator(std::string_view text) {
    for (auto kind : {CalibratorKind::identity, CalibratorKind::isotonic, CalibratorKind::platt,
                      CalibratorKind::temperature, CalibratorKind::histogram}) {
        if (to_string(kind) == text) return kind;
    }
    if (text == "raw" || text == "original") return CalibratorKind::identity;
    throw ConfigError("unknown calibrator '" + std::string(text) + "'");
}

CalibratorKind CalibrationMap::kind() const {
    switch (params.index()) {
        case 1: return CalibratorKind::isotonic;
        case 2: return CalibratorKind::platt;
        case 3: return CalibratorKind::temperature;
        case 4: return CalibratorKind::histogram;
        default: return CalibratorKind::identity;
    }
}

CalibrationMap fit_calibrator(std::span<const ScoredPair> pairs, CalibratorKind kind) {
    if (pairs.size() < 2) throw DataError("calibration needs at least 2 pairs");
    for (const auto& p : pairs) {
        if (!(p.score >= 0.0 && p.score <= 1.0)) throw DataError("calibration score outside [0, 1]");
    }
    CalibrationMap map;
    map.training_count = pairs.size();
    switch (kind) {
        case CalibratorKind::identity: map.params = IdentityMap{}; break;
        case CalibratorKind::isotonic: {
            IsotonicMap iso;
            for (const auto& block : pool_adjacent_violators(pairs)) iso.knots.emplace_back(block.x_center, block.mean);
            map.params = std::move(iso);
            break;
        }
        case CalibratorKind::platt:
            require_two_classes(pairs, "platt");
            map.params = fit_platt(pairs);
            break;
        case CalibratorKind::temperature:
            require_two_classes(pairs, "temperature");
            map.params = fit_temperature(pairs);
            break;
        case CalibratorKind::histogram: map.params = fit_histogram(pairs, default_histogram_bins); break;
    }
    return map;
}

double apply_calibrator(const CalibrationMap& map, double score) {
    const double s = clamp01(score);
    return std::visit(
        [s](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, IdentityMap>) {
                return s;
            } else if constexpr (std::is_same_v<T, IsotonicMap>) {
                const auto& k = m.knots;
                if (k.empty()) return s;
                if (s <= k.front().first) return clamp01(k.front().second);
                if (s >= k.back().first) return clamp01(k.back().second);
                const auto hi = std::upper_bound(k.begin(), k.end(), s,
                                                 [](double v, const auto& knot) { return v < knot.first; });
                const auto lo = std::prev(hi);
                const double t = (s - lo->first) / (hi->first - lo->first);
                return clamp01(lo->second + t * (hi->second - lo->second));
            } else if constexpr (std::is_same_v<T, PlattMap>) {
                return clamp01(sigmoid(m.a * s + m.b));
            } else if constexpr (std::is_same_v<T, TemperatureMap>) {
                return clamp01(sigmoid(logit_clamped(s, m.epsilon) / m.temperature));
            } else {
                const int bins = static_cast<int>(m.values.size());
                if (bins == 0) return s;
                return clamp01(m.values[static_cast<std::size_t>(bin_index(s, bins))]);
            }
        },
        map.params);
}

double brier(std::span<const ScoredPair> pairs) {
    if (pairs.empty()) throw DataError("brier score of an empty set");
    double total = 0.0;
    for (const auto& p : pairs) {
        const double d = p.score - (p.label ? 1.0 : 0.0);
        total += d * d;
    }
    return total / static_cast<double>(pairs.size());
}

std::vector<ReliabilityPoint> reliability_curve(std::span<const ScoredPair> pairs, int bins) {
    if (bins < 1) throw ConfigError("bin count must be >= 1");
    std::vector<double> score_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> label_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const auto& p : pairs) {
        const auto b = static_cast<std::size_t>(bin_index(p.score, bins));
        score_sum[b] += p.score;
        label_sum[b] += p.label ? 1.0 : 0.0;
        ++counts[b];
    }
    std::vector<ReliabilityPoint> out;
    for (std::size_t b = 0; b < counts.size(); ++b) {
        if (counts[b] == 0) continue;
        const auto n = static_cast<double>(counts[b]);
        out.push_back({score_sum[b] / n, label_sum[b] / n, counts[b]});
    }
    return out;
}

double ece(std::span<const ScoredPair> pairs, int bins) {
    if (pairs.empty()) throw DataError("ECE of an empty set");
    const auto total = static_cast<double>(pairs.size());
    double out = 0.0;
    for (const auto& point : reliability_curve(pairs, bins)) {
        out += static_cast<double>(point.count) / total * std::abs(point.mean_score - point.accuracy);
    }
    return out;
}

std::optional<double> auroc(std::span<const ScoredPair> pairs) {
    std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
    std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.score < b.score; });
    double positive_rank_sum = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        std::size_t tied_pos = 0;
        while (j < sorted.size() && sorted[j].score == sorted[i].score) {
            if (sorted[j].label) ++tied_pos;
            ++j;
        }
        // Ranks i+1 .. j share the mid-rank.
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        positive_rank_sum += mid_rank * static_cast<double>(tied_pos);
        n_pos += tied_pos;
        i = j;
    }
    const std::size_t n_neg = sorted.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double np = static_cast<double>(n_pos);
    const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

nlohmann::json to_json(const CalibrationMap& map) {
    nlohmann::json j;
    j["method"] = std::string(to_string(map.kind()));
    std::visit(
        [&j](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, IsotonicMap>) {
                nlohmann::json knots = nlohmann::json::array();
                for (const auto& [x, y] : m.knots) knots.push_back({x, y});
                j["knots"] = knots;
            } else if constexpr (std::is_same_v<T, PlattMap>) {
                j["a"] = m.a;
                j["b"] = m.b;
            } else if constexpr (std::is_same_v<T, TemperatureMap>) {
                j["temperature"] = m.temperature;
                j["epsilon"] = m.epsilon;
            } else if constexpr (std::is_same_v<T, HistogramMap>) {
                j["edges"] = m.edges;
                j["values"] = m.values;
            }
        },
        map.params);
    j["training_count"] = map.training_count;
    j["meta"] = {{"side", map.meta.side}, {"confidence_method", map.meta.confidence_method}, {"split", map.meta.split}};
    return j;
}

CalibrationMap calibration_map_from_json(const nlohmann::json& j) {
    CalibrationMap map;
    try {
        switch (parse_calibrator(j.at("method").get<std::string>())) {
            case CalibratorKind::identity: map.params = IdentityMap{}; break;
            case CalibratorKind::isotonic: {
                IsotonicMap iso;
                for (const auto& knot : j.at("knots")) iso.knots.emplace_back(knot.at(0).get<double>(), knot.at(1).get<double>());
                for (std::size_t i = 1; i < iso.knots.size(); ++i) {
                    if (!(iso.knots[i].first > iso.knots[i - 1].first) || iso.knots[i].second < iso.knots[i - 1].second) {
                        throw DataError("isotonic knots must be increasing in x and non-decreasing in y");
                    }
                }
                map.params = std::move(iso);
                break;
            }
            case CalibratorKind::platt: map.params = PlattMap{j.at("a").get<double>(), j.at("b").get<double>()}; break;
            case CalibratorKind::temperature: {
                TemperatureMap t{j.at("temperature").get<double>(), j.value("epsilon", 1e-6)};
                if (!(t.temperature > 0.0)) throw DataError("temperature must be positive");
                map.params = t;
                break;
            }
            case CalibratorKind::histogram: {
                HistogramMap h{j.at("edges").get<std::vector<double>>(), j.at("values").get<std::vector<double>>()};
                if (h.edges.size() != h.values.size() + 1) throw DataError("histogram edges/values size mismatch");
                map.params = std::move(h);
                break;
            }
        }
        map.training_count = j.value("training_count", std::size_t{0});
        if (j.contains("meta")) {
            const auto& meta = j.at("meta");
            map.meta = {meta.value("side", ""), meta.value("confidence_method", ""), meta.value("split", "")};
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed calibration map: ") + e.what());
    }
    return map;
}

}  // namespace deferral
