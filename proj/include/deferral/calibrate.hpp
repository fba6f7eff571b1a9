#pragma once

// Post-hoc calibration maps and calibration/discrimination metrics.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace deferral {

struct ScoredPair {
    double score = 0.0;  // in [0, 1]
    bool label = false;
};

// One pooled block from pool-adjacent-violators.
struct IsotonicBlock {
    double x_lo = 0.0;
    double x_hi = 0.0;
    double x_center = 0.0;  // weight-averaged score of the block
    double weight = 0.0;    // number of training pairs
    double mean = 0.0;      // mean label
};

// Pools pairs with equal scores, then runs weighted PAVA on the sorted
// unique scores. Returned blocks are sorted by score with non-decreasing means.
std::vector<IsotonicBlock> pool_adjacent_violators(std::span<const ScoredPair> pairs);

struct IsotonicMap {
    std::vector<std::pair<double, double>> knots;  // (x, y), x strictly increasing
};

struct PlattMap {
    double a = 0.0;
    double b = 0.0;
};

struct TemperatureMap {
    double temperature = 1.0;
    double epsilon = 1e-6;
};

struct HistogramMap {
    std::vector<double> edges;  // bins + 1 values from 0 to 1
    std::vector<double> values;
};

struct IdentityMap {};

enum class CalibratorKind { identity, isotonic, platt, temperature, histogram };

std::string_view to_string(CalibratorKind kind);
CalibratorKind parse_calibrator(std::string_view text);  // throws ConfigError

struct CalibrationMeta {
    std::string side;
    std::string confidence_method;
    std::string split;
};

struct CalibrationMap {
    std::variant<IdentityMap, IsotonicMap, PlattMap, TemperatureMap, HistogramMap> params;
    std::size_t training_count = 0;
    CalibrationMeta meta;

    CalibratorKind kind() const;
};

inline constexpr int default_histogram_bins = 10;

// Throws DataError for fewer than 2 pairs and DegenerateLabels when Platt or
// temperature scaling sees a single label class.
CalibrationMap fit_calibrator(std::span<const ScoredPair> pairs, CalibratorKind kind);

double apply_calibrator(const CalibrationMap& map, double score);

double brier(std::span<const ScoredPair> pairs);

// Equal-width bins; score s falls in bin min(floor(s * bins), bins - 1).
double ece(std::span<const ScoredPair> pairs, int bins = 10);

// Mann-Whitney AUROC with half credit for ties; nullopt when one class is absent.
std::optional<double> auroc(std::span<const ScoredPair> pairs);

struct ReliabilityPoint {
    double mean_score = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

std::vector<ReliabilityPoint> reliability_curve(std::span<const ScoredPair> pairs, int bins = 10);

nlohmann::json to_json(const CalibrationMap& map);
CalibrationMap calibration_map_from_json(const nlohmann::json& j);

}  // namespace deferral
