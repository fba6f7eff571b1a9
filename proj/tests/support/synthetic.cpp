#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "deferral/rng.hpp"

namespace deferral::testing {

namespace {

using nlohmann::json;

constexpr double pi = 3.14159265358979323846;

class Draw {
public:
    explicit Draw(std::uint64_t seed) : rng_(seed, 0x5eed) {}
    double uniform() { return rng_.uniform(); }
    int below(int n) { return static_cast<int>(rng_.bounded(static_cast<std::uint32_t>(n))); }
    bool chance(double p) { return uniform() < p; }
    double normal() {
        const double u1 = std::max(uniform(), 1e-12);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
    }

private:
    Pcg32 rng_;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }
double round2(double v) { return std::round(v * 100.0) / 100.0; }

const std::vector<std::string>& ft_golds() {
    static const std::vector<std::string> golds = {"paris", "42", "marie curie", "1969", "blue whale",
                                                   "3.5", "canberra", "oxygen", "7", "mount everest"};
    return golds;
}

// Surface variants that all normalize to the same free-text answer.
std::string ft_variant(const std::string& base, Draw& d) {
    std::string out = base;
    switch (d.below(5)) {
        case 0: break;
        case 1:
            for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            break;
        case 2: out = "  " + out + ". "; break;
        case 3: out = out + "!"; break;
        default:
            if (!out.empty() && std::isdigit(static_cast<unsigned char>(out[0]))) {
                out = out.find('.') == std::string::npos ? "0" + out + ".0" : out + "0";
            } else if (!out.empty()) {
                out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
            }
    }
    return out;
}

std::string mc_variant(int option, const std::vector<std::string>& options, Draw& d) {
    switch (d.below(3)) {
        case 0: return std::to_string(option);
        case 1: return "Option " + std::to_string(option);
        default: return options[static_cast<std::size_t>(option - 1)];
    }
}

struct ItemTruth {
    std::string id;
    bool mc = true;
    int options = 0;
    int gold = 1;
    std::string gold_text;
    std::vector<std::string> option_texts;
    double ai_rate = 0.5;
    double human_rate = 0.5;
};

std::string answer_for(const ItemTruth& t, bool correct, Draw& d) {
    if (t.mc) {
        int option = t.gold;
        if (!correct) {
            option = 1 + d.below(t.options - 1);
            if (option >= t.gold) ++option;
        }
        return mc_variant(option, t.option_texts, d);
    }
    if (correct) return ft_variant(t.gold_text, d);
    static const std::vector<std::string> wrong = {"london", "41", "isaac newton", "1970", "elephant"};
    return ft_variant(wrong[static_cast<std::size_t>(d.below(static_cast<int>(wrong.size())))], d);
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
    Draw d(spec.seed);
    json::array_t items, responses, decomps;
    int participant_pool = 0;

    for (const auto& ds : spec.datasets) {
        for (int i = 0; i < ds.items; ++i) {
            ItemTruth t;
            char buf[16];
            std::snprintf(buf, sizeof buf, "%03d", i);
            t.id = ds.name + "-" + buf;
            t.mc = ds.multiple_choice;
            const double difficulty = d.uniform();
            t.ai_rate = clamp01(ds.ai_skill + 0.9 * (0.5 - difficulty) + 0.15 * d.normal());
            t.human_rate = clamp01(ds.human_skill + 0.5 * (0.5 - difficulty) + 0.15 * d.normal());

            json item = {{"item_id", t.id}, {"dataset", ds.name}};
            if (t.mc) {
                t.options = ds.options;
                t.gold = ds.gold_first ? 1 : 1 + d.below(ds.options);
                for (int k = 1; k <= ds.options; ++k) t.option_texts.push_back("choice " + std::string(1, char('a' + k - 1)) + " of " + t.id);
                item["kind"] = "MC";
                item["option_count"] = ds.options;
                item["options"] = t.option_texts;
                item["gold"] = t.gold;
            } else {
                t.gold_text = ft_golds()[static_cast<std::size_t>(d.below(static_cast<int>(ft_golds().size())))];
                item["kind"] = "FT";
                item["gold"] = t.gold_text;
            }
            item["context_ref"] = "ctx/" + t.id;
            items.push_back(item);

            // AI samples: confidence tracks the per-item rate but is overconfident.
            bool ai_majority_correct = false;
            int correct_samples = 0;
            for (int s = 0; s < spec.ai_samples; ++s) {
                const bool ok = d.chance(t.ai_rate);
                correct_samples += ok ? 1 : 0;
                const double conf = round2(clamp01(0.55 + 0.4 * t.ai_rate + 0.08 * d.normal() + (ok ? 0.03 : -0.03)));
                responses.push_back({{"item_id", t.id},
                                     {"side", "ai"},
                                     {"sample_index", s},
                                     {"condition", "baseline"},
                                     {"raw_answer", answer_for(t, ok, d)},
                                     {"confidence", conf}});
            }
            ai_majority_correct = 2 * correct_samples > spec.ai_samples;

            auto humans = [&](const std::string& condition, int count, double rate) {
                for (int h = 0; h < count; ++h) {
                    char pid[16];
                    std::snprintf(pid, sizeof pid, "P%04d", participant_pool++ % 997);
                    const bool ok = d.chance(rate);
                    const double conf = std::round(std::clamp(35.0 + 45.0 * rate + (ok ? 8.0 : -8.0) + 12.0 * d.normal(), 0.0, 100.0));
                    responses.push_back({{"item_id", t.id},
                                         {"side", "human"},
                                         {"participant_id", pid},
                                         {"condition", condition},
                                         {"raw_answer", answer_for(t, ok, d)},
                                         {"confidence", conf}});
                }
            };
            humans("baseline", spec.humans_min + d.below(spec.humans_max - spec.humans_min + 1), t.human_rate);
            humans("top2", spec.assisted_humans,
                   clamp01(t.human_rate + (ai_majority_correct ? 0.2 : -0.05)));
            humans("delegation", spec.assisted_humans, clamp01(t.human_rate + 0.03));

            json subtasks = json::array();
            const int n_sub = 3 + d.below(8);
            for (int s = 0; s < n_sub; ++s) {
                const double conf = round2(clamp01(1.0 - 0.5 * d.uniform() * d.uniform() - 0.2 * (1.0 - t.ai_rate) * d.uniform()));
                json sub = {{"text_ref", t.id + "/s" + std::to_string(s)}, {"ai_confidence", conf}};
                if (d.chance(0.5)) sub["routed_to_human"] = conf < 0.8;
                sub["human_answer_present"] = conf < 0.8;
                subtasks.push_back(sub);
            }
            decomps.push_back({{"item_id", t.id}, {"dataset", ds.name}, {"subtasks", subtasks}});
        }
    }

    SyntheticCorpus out;
    for (const auto& r : items) out.items += r.dump() + "\n";
    for (const auto& r : responses) out.responses += r.dump() + "\n";
    for (const auto& r : decomps) out.decompositions += r.dump() + "\n";
    return out;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const char* name, const std::string& body) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        out << body;
    };
    put("items.jsonl", corpus.items);
    put("responses.jsonl", corpus.responses);
    put("decompositions.jsonl", corpus.decompositions);
}

SyntheticSpec bundled_fixture_spec() {
    SyntheticSpec spec;
    spec.seed = 2024;
    spec.datasets = {
        {"FACTS_search", false, 8, 0, 0.8, 0.6, false},
        {"QuALITY", true, 8, 4, 0.75, 0.5, false},
        {"GPQA_Diamond", true, 8, 4, 0.6, 0.4, true},
        {"Hidden_Agenda", true, 8, 2, 0.75, 0.7, false},
        {"SHADE-Arena", true, 8, 2, 0.6, 0.45, false},
    };
    return spec;
}

SyntheticSpec medium_fixture_spec(int n) {
    SyntheticSpec spec;
    spec.seed = 99;
    spec.datasets = {
        {"FACTS_search", false, n, 0, 0.8, 0.6, false},
        {"QuALITY", true, n, 4, 0.75, 0.5, false},
        {"Big-Bench", true, n, 4, 0.6, 0.3, false},
        {"GPQA_Diamond", true, n, 4, 0.6, 0.4, true},
        {"Hidden_Agenda", true, n / 2, 2, 0.75, 0.7, false},
        {"SHADE-Arena", true, n / 2, 2, 0.6, 0.45, false},
        {"Web_of_Lies", true, n / 2, 2, 0.75, 0.7, false},
        {"SimpleQA_Verified", false, n / 2, 0, 0.95, 0.8, false},
    };
    return spec;
}

}  // namespace deferral::testing
