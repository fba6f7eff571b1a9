#pragma once

// Independent reference implementations and hand-built fixtures shared by the
// unit and acceptance suites. Nothing here calls the library code it checks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deferral/analyze.hpp"
#include "deferral/calibrate.hpp"
#include "deferral/route.hpp"

namespace deferral::testing {

// Isotonic least-squares fit by the max-min formula over weighted block means:
// fit(i) = max_{j <= i} min_{k >= i} mean(y[j..k]). One value per distinct
// score, in ascending score order.
struct ReferenceFit {
    std::vector<double> scores;
    std::vector<double> values;
};
ReferenceFit isotonic_reference(std::span<const ScoredPair> pairs);

// Average over every positive x negative pair: 1 for a win, 0.5 for a tie.
double auroc_bruteforce(std::span<const ScoredPair> pairs);

// Policy rules written out again from their definitions.
bool reference_routes_to_ai(PolicyKind kind, const Thresholds& t, double ai_conf, double human_conf);

struct GridPoint {
    Thresholds thresholds;
    std::size_t correct = 0;
    std::size_t routed_to_human = 0;
};

// Every grid point of a kind's parameter space with its calibration outcome.
std::vector<GridPoint> enumerate_grid(PolicyKind kind, std::span<const RoutingObservation> observations,
                                      int grid_steps = 100);

// Random observations for a single group; confidences lie on a coarse grid so
// that ties with thresholds and between sides are common.
std::vector<RoutingObservation> random_observations(std::uint64_t seed, std::size_t n, const std::string& group);

Judgment make_judgment(const std::string& item_id, Side side, bool correct, double confidence,
                       const std::string& participant = {});

// 952 test items in four quadrants (390 both, 266 AI only, 85 human only,
// 211 neither) over two datasets. Human correctness comes from a majority
// judgment; four human-only items carry low AI confidence so a compare policy
// recovers exactly those four.
std::vector<PairedItem> oracle_table_fixture();

// 195 decomposed items whose per-dataset subtask and routed counts match the
// published delegation breakdown (1,727 subtasks, 345 routed).
std::vector<DelegationRecord> delegation_table_fixture();

}  // namespace deferral::testing
