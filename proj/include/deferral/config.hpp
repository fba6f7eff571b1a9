#pragma once

// Run configuration: a key=value file, overridable key by key from the CLI.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deferral/aggregate.hpp"
#include "deferral/analyze.hpp"
#include "deferral/calibrate.hpp"
#include "deferral/corpus.hpp"
#include "deferral/route.hpp"

namespace deferral {

inline constexpr const char* config_env_var = "DEFERRAL_LAB_CONFIG";

struct RunConfig {
    std::filesystem::path items;
    std::filesystem::path responses;
    std::optional<std::filesystem::path> decompositions;
    std::optional<std::filesystem::path> adjudication;
    std::filesystem::path output_dir = "deferral-out";

    double split_fraction = 0.4;
    std::uint64_t split_seed = 42;
    int cap_max = 3;
    std::uint64_t cap_seed = 42;

    ConfidenceMethod ai_confidence;
    ConfidenceMethod human_confidence;
    CalibratorKind calibrator = CalibratorKind::isotonic;
    int ece_bins = 10;
    double grid_step = 0.01;
    double high_conf_threshold = default_high_confidence_threshold;
    double delegation_threshold = 0.8;

    GroupMap groups = GroupMap::with_default_deception_merge();
    SubsetSpec subset{0.10, {{"Big-Bench", 0.20}}, SubsetRounding::floor};
    std::vector<std::string> excluded_datasets;

    ResamplingSettings resampling;

    std::vector<EvalMode> modes = {EvalMode::majority, EvalMode::individual};
    std::vector<Condition> conditions = {Condition::baseline, Condition::top2, Condition::delegation};
    std::vector<PolicyKind> policies = {PolicyKind::one_threshold, PolicyKind::two_threshold,
                                        PolicyKind::one_threshold_compare, PolicyKind::compare};
    std::vector<std::string> formats = {"md", "csv", "json"};
    std::string bias_dataset = "GPQA_Diamond";

    bool is_excluded(const std::string& dataset) const;
};

// Applies one key=value setting; relative paths resolve against `base_dir`.
// Throws ConfigError on unknown keys or unparsable values.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir = {});

// Parses a config file body ('#' starts a comment, blank lines ignored).
void apply_config_text(RunConfig& config, std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Range checks plus existence of every referenced input path.
void validate(const RunConfig& config);

// Sorted key=value lines covering every field except output_dir, so two
// runs that differ only in where they write hash identically.
std::string canonical_text(const RunConfig& config);

// Every recognised key, for CLI flag generation and documentation.
const std::vector<std::string>& config_keys();

}  // namespace deferral
