#include <sys/wait.h>

#include <cstdlib>

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

namespace {

using deferral::testing::TempDir;

const std::filesystem::path fixture_dir = FIXTURE_DIR;

int run_cli(const std::string& args, const std::string& env = {}) {
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" CLI_PATH "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string fixture_args(const std::filesystem::path& out) {
    return "-c \"" + (fixture_dir / "fixture.conf").string() + "\" --output-dir \"" + out.string() + "\"";
}

std::map<std::string, std::string> report_files(const std::filesystem::path& out) {
    auto files = deferral::testing::snapshot(out);
    std::erase_if(files, [](const auto& kv) { return kv.first.rfind("artifacts/", 0) == 0; });
    return files;
}

}  // namespace

TEST_CASE("cli runs the bundled fixture end to end", "[cli]") {
    TempDir dir("cli-all");
    REQUIRE(run_cli(fixture_args(dir.path() / "run") + " all") == 0);
    const auto files = report_files(dir.path() / "run");
    CHECK(files.contains("manifest.json"));
    CHECK(files.contains("baseline_accuracy.md"));
    CHECK(files.contains("hybrid_summary.csv"));
    CHECK(std::filesystem::exists(dir.path() / "run" / "artifacts" / "policies.json"));
}

TEST_CASE("cli stages re-run individually and match a full run", "[cli]") {
    TempDir dir("cli-stages");
    const auto full = dir.path() / "full";
    const auto staged = dir.path() / "staged";
    REQUIRE(run_cli(fixture_args(full) + " all") == 0);
    for (const char* stage : {"ingest-check", "calibrate", "route", "analyze", "report"}) {
        INFO(stage);
        REQUIRE(run_cli(fixture_args(staged) + " " + stage) == 0);
    }
    CHECK(report_files(full) == report_files(staged));
    // Re-running one stage from its persisted inputs leaves everything unchanged.
    REQUIRE(run_cli(fixture_args(staged) + " route") == 0);
    REQUIRE(run_cli(fixture_args(staged) + " report") == 0);
    CHECK(report_files(full) == report_files(staged));
}

TEST_CASE("cli exit codes", "[cli]") {
    TempDir dir("cli-codes");
    SECTION("unknown policy kind fails before any output is written") {
        const auto out = dir.path() / "never";
        CHECK(run_cli(fixture_args(out) + " --policies 1T,9T all") == 1);
        CHECK_FALSE(std::filesystem::exists(out));
    }
    SECTION("unknown flag and missing subcommand") {
        CHECK(run_cli(fixture_args(dir.path()) + " --bogus all") == 1);
        CHECK(run_cli(fixture_args(dir.path())) == 1);
    }
    SECTION("missing input file") {
        CHECK(run_cli(fixture_args(dir.path()) + " --items /no/such/items.jsonl all") == 1);
    }
    SECTION("malformed responses are a data error") {
        const auto bad = dir.path() / "responses.jsonl";
        deferral::testing::write_text(bad, deferral::testing::read_text(fixture_dir / "responses.jsonl") + "{broken\n");
        CHECK(run_cli(fixture_args(dir.path() / "o") + " --responses \"" + bad.string() + "\" ingest-check") == 2);
    }
    SECTION("later stage without earlier artifacts is a data error") {
        CHECK(run_cli(fixture_args(dir.path() / "empty") + " report") == 2);
    }
    SECTION("config path from the environment") {
        const auto out = dir.path() / "env";
        CHECK(run_cli("--output-dir \"" + out.string() + "\" ingest-check",
                      "DEFERRAL_LAB_CONFIG=\"" + (fixture_dir / "fixture.conf").string() + "\"") == 0);
        CHECK(std::filesystem::exists(out / "artifacts" / "judgments.json"));
        CHECK(run_cli("ingest-check", "DEFERRAL_LAB_CONFIG=") == 1);
    }
    SECTION("flag overrides change the configuration hash") {
        const auto a = dir.path() / "a";
        const auto b = dir.path() / "b";
        REQUIRE(run_cli(fixture_args(a) + " --formats json all") == 0);
        REQUIRE(run_cli(fixture_args(b) + " --formats json --grid-step 0.05 --group QuALITY=GPQA_Diamond all") == 0);
        const auto ma = deferral::testing::read_text(a / "manifest.json");
        const auto mb = deferral::testing::read_text(b / "manifest.json");
        CHECK(ma != mb);
        CHECK(mb.find("grid.step=0.05") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(a / "baseline_accuracy.md"));
    }
}
