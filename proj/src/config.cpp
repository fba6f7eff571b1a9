#include "deferral/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "deferral/error.hpp"
#include "deferral/numfmt.hpp"

namespace deferral {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view value) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        auto comma = value.find(',', start);
        if (comma == std::string_view::npos) comma = value.size();
        auto part = trim(value.substr(start, comma - start));
        if (!part.empty()) out.emplace_back(part);
        start = comma + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ',';
        out += p;
    }
    return out;
}

double parse_double(std::string_view key, std::string_view value) {
    double out = 0.0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || end != value.data() + value.size()) {
        throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + std::string(value) + "'");
    }
    return out;
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
    std::int64_t out = 0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || end != value.data() + value.size()) {
        throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" + std::string(value) + "'");
    }
    return out;
}

std::uint64_t parse_seed(std::string_view key, std::string_view value) {
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || end != value.data() + value.size()) {
        throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer seed, got '" +
                          std::string(value) + "'");
    }
    return out;
}

std::filesystem::path resolve(std::string_view value, const std::filesystem::path& base_dir) {
    std::filesystem::path p{std::string(value)};
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p.lexically_normal();
}

EvalMode parse_mode(std::string_view text) {
    if (text == "majority") return EvalMode::majority;
    if (text == "individual") return EvalMode::individual;
    throw ConfigError("unknown evaluation mode '" + std::string(text) + "'");
}

SubsetRounding parse_rounding(std::string_view text) {
    if (text == "floor") return SubsetRounding::floor;
    if (text == "ceil") return SubsetRounding::ceil;
    throw ConfigError("unknown subset rounding '" + std::string(text) + "' (expected floor or ceil)");
}

constexpr std::string_view group_prefix = "group.";
constexpr std::string_view subset_prefix = "subset.fraction.";

}  // namespace

bool RunConfig::is_excluded(const std::string& dataset) const {
    return std::find(excluded_datasets.begin(), excluded_datasets.end(), dataset) != excluded_datasets.end();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "items", "responses", "decompositions", "adjudication", "output_dir",
        "split.fraction", "split.seed", "cap.max", "cap.seed",
        "confidence.ai", "confidence.human", "calibrator", "ece.bins", "grid.step",
        "signals.high_conf_threshold", "delegation.threshold",
        "group.<dataset>", "subset.fraction.default", "subset.fraction.<dataset>", "subset.rounding",
        "exclude.datasets", "bootstrap.resamples", "bootstrap.seed", "permutation.count", "permutation.seed",
        "bootstrap.level", "threads", "modes", "conditions", "policies", "formats", "bias.dataset",
    };
    return keys;
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view raw_value,
                   const std::filesystem::path& base_dir) {
    const std::string_view value = trim(raw_value);
    if (key == "items") c.items = resolve(value, base_dir);
    else if (key == "responses") c.responses = resolve(value, base_dir);
    else if (key == "decompositions") {
        if (value.empty()) c.decompositions.reset();
        else c.decompositions = resolve(value, base_dir);
    } else if (key == "adjudication") {
        if (value.empty()) c.adjudication.reset();
        else c.adjudication = resolve(value, base_dir);
    } else if (key == "output_dir") c.output_dir = resolve(value, base_dir);
    else if (key == "split.fraction") c.split_fraction = parse_double(key, value);
    else if (key == "split.seed") c.split_seed = parse_seed(key, value);
    else if (key == "cap.max") c.cap_max = static_cast<int>(parse_int(key, value));
    else if (key == "cap.seed") c.cap_seed = parse_seed(key, value);
    else if (key == "confidence.ai") c.ai_confidence = ConfidenceMethod::parse(value);
    else if (key == "confidence.human") c.human_confidence = ConfidenceMethod::parse(value);
    else if (key == "calibrator") c.calibrator = parse_calibrator(value);
    else if (key == "ece.bins") c.ece_bins = static_cast<int>(parse_int(key, value));
    else if (key == "grid.step") c.grid_step = parse_double(key, value);
    else if (key == "signals.high_conf_threshold") c.high_conf_threshold = parse_double(key, value);
    else if (key == "delegation.threshold") c.delegation_threshold = parse_double(key, value);
    else if (key.starts_with(group_prefix) && key.size() > group_prefix.size()) {
        if (value.empty()) throw ConfigError("config key '" + std::string(key) + "': empty group label");
        c.groups.set(std::string(key.substr(group_prefix.size())), std::string(value));
    } else if (key == "subset.fraction.default") c.subset.default_fraction = parse_double(key, value);
    else if (key.starts_with(subset_prefix) && key.size() > subset_prefix.size()) {
        c.subset.per_dataset[std::string(key.substr(subset_prefix.size()))] = parse_double(key, value);
    } else if (key == "subset.rounding") c.subset.rounding = parse_rounding(value);
    else if (key == "exclude.datasets") c.excluded_datasets = split_list(value);
    else if (key == "bootstrap.resamples") c.resampling.bootstrap_resamples = static_cast<int>(parse_int(key, value));
    else if (key == "bootstrap.seed") c.resampling.bootstrap_seed = parse_seed(key, value);
    else if (key == "bootstrap.level") c.resampling.level = parse_double(key, value);
    else if (key == "permutation.count") c.resampling.permutations = static_cast<int>(parse_int(key, value));
    else if (key == "permutation.seed") c.resampling.permutation_seed = parse_seed(key, value);
    else if (key == "threads") c.resampling.threads = static_cast<int>(parse_int(key, value));
    else if (key == "modes") {
        c.modes.clear();
        for (const auto& m : split_list(value)) c.modes.push_back(parse_mode(m));
    } else if (key == "conditions") {
        c.conditions.clear();
        for (const auto& name : split_list(value)) {
            auto cond = parse_condition(name);
            if (!cond) throw ConfigError("unknown condition '" + name + "'");
            c.conditions.push_back(*cond);
        }
    } else if (key == "policies") {
        c.policies.clear();
        for (const auto& p : split_list(value)) c.policies.push_back(parse_policy_kind(p));
    } else if (key == "formats") {
        c.formats = split_list(value);
        for (const auto& f : c.formats) {
            if (f != "md" && f != "csv" && f != "json") throw ConfigError("unknown format '" + f + "'");
        }
    } else if (key == "bias.dataset") c.bias_dataset = std::string(value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view text, const std::filesystem::path& base_dir) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        start = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        try {
            apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1), base_dir);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig config;
    apply_config_text(config, buf.str(), path.parent_path());
    return config;
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& message) {
        if (!ok) throw ConfigError(message);
    };
    require(!c.items.empty(), "items path is not set");
    require(!c.responses.empty(), "responses path is not set");
    auto exists = [&](const std::filesystem::path& p, const char* what) {
        require(std::filesystem::is_regular_file(p), std::string(what) + " file '" + p.string() + "' does not exist");
    };
    exists(c.items, "items");
    exists(c.responses, "responses");
    if (c.decompositions) exists(*c.decompositions, "decompositions");
    if (c.adjudication) exists(*c.adjudication, "adjudication");
    require(c.split_fraction > 0.0 && c.split_fraction < 1.0, "split.fraction must lie in (0, 1)");
    require(c.cap_max >= 1, "cap.max must be at least 1");
    require(c.ece_bins >= 1 && c.ece_bins <= 1000, "ece.bins must lie in [1, 1000]");
    require(c.grid_step > 0.0 && c.grid_step <= 1.0, "grid.step must lie in (0, 1]");
    threshold_grid(c.grid_step);
    require(c.high_conf_threshold >= 0.0 && c.high_conf_threshold <= 1.0,
            "signals.high_conf_threshold must lie in [0, 1]");
    require(c.delegation_threshold >= 0.0 && c.delegation_threshold <= 1.0, "delegation.threshold must lie in [0, 1]");
    require(c.subset.default_fraction > 0.0 && c.subset.default_fraction <= 1.0,
            "subset.fraction.default must lie in (0, 1]");
    for (const auto& [dataset, f] : c.subset.per_dataset) {
        require(f > 0.0 && f <= 1.0, "subset.fraction." + dataset + " must lie in (0, 1]");
    }
    require(c.resampling.bootstrap_resamples >= 1, "bootstrap.resamples must be positive");
    require(c.resampling.permutations >= 1, "permutation.count must be positive");
    require(c.resampling.level > 0.0 && c.resampling.level < 1.0, "bootstrap.level must lie in (0, 1)");
    require(c.resampling.threads >= 1 && c.resampling.threads <= 256, "threads must lie in [1, 256]");
    require(!c.modes.empty(), "modes must not be empty");
    require(!c.conditions.empty(), "conditions must not be empty");
    require(std::find(c.conditions.begin(), c.conditions.end(), Condition::baseline) != c.conditions.end(),
            "conditions must include baseline");
    require(!c.policies.empty(), "policies must not be empty");
}

std::string canonical_text(const RunConfig& c) {
    std::map<std::string, std::string> kv;
    kv["items"] = c.items.generic_string();
    kv["responses"] = c.responses.generic_string();
    kv["decompositions"] = c.decompositions ? c.decompositions->generic_string() : "";
    kv["adjudication"] = c.adjudication ? c.adjudication->generic_string() : "";
    kv["split.fraction"] = format_full(c.split_fraction);
    kv["split.seed"] = std::to_string(c.split_seed);
    kv["cap.max"] = std::to_string(c.cap_max);
    kv["cap.seed"] = std::to_string(c.cap_seed);
    kv["confidence.ai"] = c.ai_confidence.name();
    kv["confidence.human"] = c.human_confidence.name();
    kv["calibrator"] = std::string(to_string(c.calibrator));
    kv["ece.bins"] = std::to_string(c.ece_bins);
    kv["grid.step"] = format_full(c.grid_step);
    kv["signals.high_conf_threshold"] = format_full(c.high_conf_threshold);
    kv["delegation.threshold"] = format_full(c.delegation_threshold);
    for (const auto& [dataset, group] : c.groups.entries()) kv["group." + dataset] = group;
    kv["subset.fraction.default"] = format_full(c.subset.default_fraction);
    for (const auto& [dataset, f] : c.subset.per_dataset) kv["subset.fraction." + dataset] = format_full(f);
    kv["subset.rounding"] = c.subset.rounding == SubsetRounding::floor ? "floor" : "ceil";
    auto excluded = c.excluded_datasets;
    std::sort(excluded.begin(), excluded.end());
    kv["exclude.datasets"] = join(excluded);
    kv["bootstrap.resamples"] = std::to_string(c.resampling.bootstrap_resamples);
    kv["bootstrap.seed"] = std::to_string(c.resampling.bootstrap_seed);
    kv["bootstrap.level"] = format_full(c.resampling.level);
    kv["permutation.count"] = std::to_string(c.resampling.permutations);
    kv["permutation.seed"] = std::to_string(c.resampling.permutation_seed);
    kv["threads"] = std::to_string(c.resampling.threads);
    std::vector<std::string> names;
    for (auto m : c.modes) names.emplace_back(to_string(m));
    kv["modes"] = join(names);
    names.clear();
    for (auto cond : c.conditions) names.emplace_back(to_string(cond));
    kv["conditions"] = join(names);
    names.clear();
    for (auto p : c.policies) names.emplace_back(to_string(p));
    kv["policies"] = join(names);
    kv["formats"] = join(c.formats);
    kv["bias.dataset"] = c.bias_dataset;

    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

}  // namespace deferral
