#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "deferral/config.hpp"
#include "synthetic.hpp"

namespace deferral::testing {

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("deferral-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
}

// Relative path -> file bytes for every regular file under `root`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).generic_string()] = read_text(e.path());
    }
    return out;
}

// Writes a synthetic corpus into `dir` and returns a config reading it, with
// resampling counts small enough for unit tests.
inline RunConfig synthetic_config(const SyntheticSpec& spec, const std::filesystem::path& dir) {
    write_corpus(generate_corpus(spec), dir);
    RunConfig c;
    c.items = dir / "items.jsonl";
    c.responses = dir / "responses.jsonl";
    c.decompositions = dir / "decompositions.jsonl";
    c.output_dir = dir / "out";
    c.subset.default_fraction = 0.5;
    c.resampling.bootstrap_resamples = 200;
    c.resampling.permutations = 200;
    return c;
}

}  // namespace deferral::testing
