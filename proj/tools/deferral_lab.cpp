// deferral-lab: command-line driver for the calibration, routing and analysis pipeline.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deferral/config.hpp"
#include "deferral/error.hpp"
#include "deferral/pipeline.hpp"
#include "deferral/report.hpp"

namespace {

using namespace deferral;

// Flag name -> config key, for every scalar config field.
const std::vector<std::pair<std::string, std::string>>& scalar_flags() {
    static const std::vector<std::pair<std::string, std::string>> flags = {
        {"--items", "items"},
        {"--responses", "responses"},
        {"--decompositions", "decompositions"},
        {"--adjudication", "adjudication"},
        {"--output-dir", "output_dir"},
        {"--split-fraction", "split.fraction"},
        {"--split-seed", "split.seed"},
        {"--cap-max", "cap.max"},
        {"--cap-seed", "cap.seed"},
        {"--ai-confidence", "confidence.ai"},
        {"--human-confidence", "confidence.human"},
        {"--calibrator", "calibrator"},
        {"--ece-bins", "ece.bins"},
        {"--grid-step", "grid.step"},
        {"--high-conf-threshold", "signals.high_conf_threshold"},
        {"--delegation-threshold", "delegation.threshold"},
        {"--subset-default", "subset.fraction.default"},
        {"--subset-rounding", "subset.rounding"},
        {"--exclude-datasets", "exclude.datasets"},
        {"--bootstrap-resamples", "bootstrap.resamples"},
        {"--bootstrap-seed", "bootstrap.seed"},
        {"--bootstrap-level", "bootstrap.level"},
        {"--permutations", "permutation.count"},
        {"--permutation-seed", "permutation.seed"},
        {"--threads", "threads"},
        {"--modes", "modes"},
        {"--conditions", "conditions"},
        {"--policies", "policies"},
        {"--formats", "formats"},
        {"--bias-dataset", "bias.dataset"},
    };
    return flags;
}

struct Overrides {
    std::string config_path;
    std::map<std::string, std::string> scalars;  // config key -> value
    std::vector<std::string> groups;             // DATASET=GROUP
    std::vector<std::string> subset_fractions;   // DATASET=FRACTION
};

std::pair<std::string, std::string> split_pair(const std::string& text, const char* flag) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(std::string(flag) + " expects DATASET=VALUE, got '" + text + "'");
    }
    return {text.substr(0, eq), text.substr(eq + 1)};
}

RunConfig resolve_config(const Overrides& o) {
    RunConfig config;
    std::string path = o.config_path;
    if (path.empty()) {
        if (const char* env = std::getenv(config_env_var)) path = env;
    }
    if (!path.empty()) config = load_config(path);
    for (const auto& [flag, key] : scalar_flags()) {
        const auto it = o.scalars.find(key);
        if (it != o.scalars.end()) apply_setting(config, key, it->second);
    }
    for (const auto& g : o.groups) {
        const auto [dataset, group] = split_pair(g, "--group");
        apply_setting(config, "group." + dataset, group);
    }
    for (const auto& s : o.subset_fractions) {
        const auto [dataset, fraction] = split_pair(s, "--subset-fraction");
        apply_setting(config, "subset.fraction." + dataset, fraction);
    }
    return config;
}

PreparedCorpus load_corpus(const RunConfig& c) {
    return run_stage("calibrate", [&] { return prepared_corpus_from_json(read_artifact(c, "judgments")); });
}
CalibrationResult load_calibration(const RunConfig& c) {
    return run_stage("route", [&] { return calibration_result_from_json(read_artifact(c, "calibration")); });
}
RoutingResult load_routing(const RunConfig& c) {
    return run_stage("analyze", [&] { return routing_result_from_json(read_artifact(c, "policies")); });
}
AnalysisResult load_analysis(const RunConfig& c) {
    return run_stage("report", [&] { return analysis_result_from_json(read_artifact(c, "analysis")); });
}

void print_tables(const ReportBundle& bundle, const RunConfig& config) {
    std::cout << "wrote " << bundle.tables.size() << " tables to " << config.output_dir.string() << "\n";
}

int run(const std::string& command, const Overrides& overrides) {
    const RunConfig config = run_stage("config", [&] {
        RunConfig c = resolve_config(overrides);
        validate(c);
        return c;
    });

    if (command == "all") {
        print_tables(run_pipeline(config), config);
        return 0;
    }
    if (command == "ingest-check") {
        const PreparedCorpus corpus = run_stage("ingest", [&] { return prepare_corpus(config); });
        write_artifact(config, "judgments", to_json(corpus));
        std::cout << "items: " << corpus.records.size() << " (calibration " << corpus.split.calibration_count()
                  << ", test " << corpus.split.test_count() << ")\n"
                  << "responses: " << corpus.response_count << " (" << corpus.human_dropped_by_cap
                  << " human responses dropped by capping)\n";
        return 0;
    }
    if (command == "calibrate") {
        const PreparedCorpus corpus = load_corpus(config);
        const CalibrationResult cal = run_stage("calibrate", [&] { return calibrate_stage(config, corpus); });
        write_artifact(config, "calibration", to_json(cal));
        std::cout << "calibration maps fitted on " << cal.ai_map.training_count << " AI and "
                  << cal.human_map.training_count << " human calibration pairs\n";
        return 0;
    }
    if (command == "route") {
        const PreparedCorpus corpus = load_corpus(config);
        const CalibrationResult cal = load_calibration(config);
        const RoutingResult routing = run_stage("route", [&] { return route_stage(config, corpus, cal); });
        write_artifact(config, "policies", to_json(routing));
        std::cout << "learned " << routing.policies.size() << " policies; subset has " << routing.subset.size()
                  << " complete items\n";
        return 0;
    }
    if (command == "analyze") {
        const PreparedCorpus corpus = load_corpus(config);
        const CalibrationResult cal = load_calibration(config);
        const RoutingResult routing = load_routing(config);
        const AnalysisResult analysis =
            run_stage("analyze", [&] { return analyze_stage(config, corpus, cal, routing); });
        write_artifact(config, "analysis", to_json(analysis));
        std::cout << "analysis written for " << analysis.overreliance_items << " subset test items\n";
        return 0;
    }
    if (command == "report") {
        StageArtifacts a{load_corpus(config), load_calibration(config), load_routing(config), load_analysis(config)};
        const ReportBundle bundle = run_stage("report", [&] { return build_bundle(config, a); });
        emit_report(bundle, config.output_dir, config.formats);
        print_tables(bundle, config);
        return 0;
    }
    throw ConfigError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibrated human-AI routing and complementarity analysis"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides overrides;
    app.add_option("-c,--config", overrides.config_path,
                   std::string("Config file (key=value); defaults to $") + config_env_var);
    for (const auto& [flag, key] : scalar_flags()) {
        app.add_option_function<std::string>(
            flag, [&overrides, key = key](const std::string& v) { overrides.scalars[key] = v; },
            "Overrides config key '" + key + "'");
    }
    app.add_option("--group", overrides.groups, "DATASET=GROUP, overrides config key 'group.<dataset>'");
    app.add_option("--subset-fraction", overrides.subset_fractions,
                   "DATASET=FRACTION, overrides config key 'subset.fraction.<dataset>'");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"ingest-check", "Parse inputs, cap, split and aggregate; writes the judgments artifact"},
        {"calibrate", "Fit calibration maps and metrics; writes the calibration artifact"},
        {"route", "Select the low-confidence subset and learn routing policies"},
        {"analyze", "Overreliance, delegation and positional-bias statistics"},
        {"report", "Build and emit every table from the persisted artifacts"},
        {"all", "Run every stage and emit the report"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config_error);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, overrides);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config_error);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data_error);
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return static_cast<int>(ExitCode::invariant_violation);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data_error);
    }
}
