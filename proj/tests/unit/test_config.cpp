#include <catch2/catch_amalgamated.hpp>

#include "deferral/config.hpp"
#include "deferral/error.hpp"
#include "helpers.hpp"

using namespace deferral;

TEST_CASE("config text sets fields, skips comments and resolves relative paths", "[config]") {
    RunConfig c;
    apply_config_text(c,
                      "# a comment\n"
                      "items = data/items.jsonl   # trailing comment\n"
                      "responses=/abs/responses.jsonl\n"
                      "\n"
                      "split.fraction = 0.3\n"
                      "split.seed = 7\n"
                      "confidence.ai = computed\n"
                      "calibrator = platt\n"
                      "group.Alpha = shared\n"
                      "group.Beta = shared\n"
                      "subset.fraction.default = 0.25\n"
                      "subset.fraction.Alpha = 0.5\n"
                      "subset.rounding = ceil\n"
                      "exclude.datasets = X, Y\n"
                      "modes = individual\n"
                      "conditions = baseline,top2\n"
                      "policies = 2T, compare\n"
                      "formats = csv\n",
                      "/base/dir");
    CHECK(c.items == std::filesystem::path("/base/dir/data/items.jsonl"));
    CHECK(c.responses == std::filesystem::path("/abs/responses.jsonl"));
    CHECK(c.split_fraction == 0.3);
    CHECK(c.split_seed == 7);
    CHECK(c.ai_confidence.kind == ConfidenceMethod::Kind::computed);
    CHECK(c.calibrator == CalibratorKind::platt);
    CHECK(c.groups.group_of("Alpha") == c.groups.group_of("Beta"));
    CHECK(c.subset.fraction_for("Alpha") == 0.5);
    CHECK(c.subset.fraction_for("Gamma") == 0.25);
    CHECK(c.subset.rounding == SubsetRounding::ceil);
    CHECK(c.is_excluded("Y"));
    CHECK(c.modes == std::vector<EvalMode>{EvalMode::individual});
    CHECK(c.conditions == std::vector<Condition>{Condition::baseline, Condition::top2});
    CHECK(c.policies == std::vector<PolicyKind>{PolicyKind::two_threshold, PolicyKind::compare});
    CHECK(c.formats == std::vector<std::string>{"csv"});
}

TEST_CASE("config errors name the line and reject unknown values", "[config]") {
    RunConfig c;
    try {
        apply_config_text(c, "split.seed = 1\nsplit.fraction = lots\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_config_text(c, "no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "colour", "blue"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "policies", "1T,9T"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "conditions", "baseline,solo"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "formats", "pdf"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "confidence.ai", "vibes"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "split.seed", "-3"), ConfigError);
}

TEST_CASE("validation checks ranges and input existence", "[config]") {
    testing::TempDir dir("config");
    testing::write_text(dir.path() / "items.jsonl", "");
    testing::write_text(dir.path() / "responses.jsonl", "");
    RunConfig good;
    good.items = dir.path() / "items.jsonl";
    good.responses = dir.path() / "responses.jsonl";
    CHECK_NOTHROW(validate(good));

    auto broken = [&](auto mutate) {
        RunConfig c = good;
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.items = "/no/such/file"; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.split_fraction = 1.0; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.grid_step = 0.3; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.subset.default_fraction = 0.0; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.subset.per_dataset["Q"] = 1.5; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.conditions = {Condition::top2}; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.ece_bins = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.resampling.threads = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(broken([](RunConfig& c) { c.policies.clear(); })), ConfigError);
}

TEST_CASE("canonical text is sorted, stable and ignores the output directory", "[config]") {
    RunConfig a;
    a.items = "/x/items.jsonl";
    a.responses = "/x/responses.jsonl";
    RunConfig b = a;
    b.output_dir = "/somewhere/else";
    CHECK(canonical_text(a) == canonical_text(b));
    b.split_seed = 43;
    CHECK(canonical_text(a) != canonical_text(b));

    const std::string text = canonical_text(a);
    std::vector<std::string> keys;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) keys.push_back(line.substr(0, line.find('=')));
    CHECK(std::is_sorted(keys.begin(), keys.end()));
    CHECK(text.find("output_dir") == std::string::npos);

    // Re-applying the canonical text reproduces the same configuration.
    RunConfig c;
    apply_config_text(c, text);
    CHECK(canonical_text(c) == text);
}
