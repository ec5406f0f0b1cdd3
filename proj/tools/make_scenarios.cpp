//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
// Regenerates the bundled scenario files under scenarios/.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tzsim/scenario.hpp"

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    fs::path dir = argc > 1 ? argv[1] : "scenarios";
    fs::create_directories(dir);

    auto write = [&](const tzsim::Scenario& s) {
        fs::path file = dir / (s.name + ".json");
        std::ofstream f(file, std::ios::binary);
        f << tzsim::scenario_to_json(s);
        std::cout << file.string() << "\n";
    };

    for (const auto& s : tzsim::bundled_prefill_family())
        write(s);
    write(tzsim::make_strawman_scenario());
    for (const auto& m : tzsim::bundled_models())
        write(tzsim::make_decode_scenario(m.key));
    write(tzsim::make_fig5_scenario());
    return 0;
}
