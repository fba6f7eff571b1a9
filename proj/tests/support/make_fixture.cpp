// Regenerates a synthetic corpus: make_fixture <bundled|medium> <output-dir>

#include <iostream>
#include <string>

#include "synthetic.hpp"

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: make_fixture <bundled|medium> <output-dir>\n";
        return 1;
    }
    const std::string which = argv[1];
    using namespace deferral::testing;
    const SyntheticSpec spec = which == "medium" ? medium_fixture_spec() : bundled_fixture_spec();
    write_corpus(generate_corpus(spec), argv[2]);
    return 0;
}
