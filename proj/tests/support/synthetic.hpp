#pragma once

// Seeded generator for synthetic corpora in the on-disk JSONL formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deferral::testing {

struct SyntheticDataset {
    std::string name;
    bool multiple_choice = true;
    int items = 8;
    int options = 4;           // MC only
    double ai_skill = 0.7;     // mean AI per-sample accuracy
    double human_skill = 0.5;  // mean human accuracy
    bool gold_first = false;   // MC gold always option 1
};

struct SyntheticSpec {
    std::vector<SyntheticDataset> datasets;
    int ai_samples = 20;
    int humans_min = 3;
    int humans_max = 5;
    int assisted_humans = 3;
    std::uint64_t seed = 7;
};

struct SyntheticCorpus {
    std::string items;
    std::string responses;
    std::string decompositions;
};

SyntheticCorpus generate_corpus(const SyntheticSpec& spec);

// Writes items.jsonl, responses.jsonl and decompositions.jsonl into `dir`.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

// The specification behind the bundled 40-item fixture.
SyntheticSpec bundled_fixture_spec();

// A larger multi-dataset corpus for end-to-end tests.
SyntheticSpec medium_fixture_spec(int items_per_dataset = 60);

}  // namespace deferral::testing
