//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
// tzsim: scenario runner for the TEE LLM-protection simulator.
//   run <scenario.json>      simulate one scenario, emit summary + traces
//   sweep <scenario.json>    re-run across one parameter
//   figure <id>              reproduce a bundled figure's structural claim
//   pack / verify            encrypted model container tooling
//   attack                   exhaustive adversarial exploration
//
// Exit codes: 0 success, 1 assertion/check failure, 2 usage or schema error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "tzsim/modelstore.hpp"
#include "tzsim/npu_codriver.hpp"
#include "tzsim/scenario.hpp"

namespace {

using namespace tzsim;

store::Key root_key_from_env(const std::string& key_file) {
    if (!key_file.empty()) {
        std::ifstream in(key_file);
        if (!in)
            throw SchemaError("cannot open key file: " + key_file);
        std::string hex;
        in >> hex;
        return store::key_from_hex(hex);
    }
    const char* env = std::getenv("TZSIM_ROOT_KEY");
    if (!env)
        throw SchemaError("set TZSIM_ROOT_KEY (64 hex chars) or pass --root-key-file");
    return store::key_from_hex(env);
}

int cmd_run(const std::string& path, const std::string& out) {
    Scenario sc = load_scenario(path);
    RunArtifacts a = run_scenario(sc);
    auto dir = write_run_outputs(a, out);
    std::cout << a.summary.to_json();
    std::cout << "outputs: " << dir.string() << "\n";
    return 0;
}

int cmd_sweep(const std::string& path, const std::string& param, std::vector<double> values,
              const std::string& out) {
    Scenario sc = load_scenario(path);
    auto rows = sweep(sc, param, values);
    std::filesystem::create_directories(out);
    std::filesystem::path plot =
        std::filesystem::path(out) / (sc.name + "-sweep-" + param + ".dat");
    std::ofstream pf(plot, std::ios::binary);
    pf << "# " << param << " ttft_us\n";
    std::cout << param << " ttft_s ttft/lower_bound decode_tok_s\n";
    for (const auto& r : rows) {
        pf << r.value << ' ' << r.summary.ttft_us << '\n';
        std::cout << r.value << ' ' << static_cast<double>(r.summary.ttft_us) / 1e6 << ' '
                  << 1.0 + r.summary.lower_bound_gap << ' ' << r.summary.decode_tokens_per_s
                  << '\n';
    }
    std::cout << "plot data: " << plot.string() << "\n";
    return 0;
}

int cmd_figure(const std::string& id, const std::string& out) {
    FigureReport rep = figure_repro(id);
    for (const auto& c : rep.checks)
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << rep.figure << ' ' << c.name << ": "
                  << c.detail << "\n";
    if (!rep.plot_rows.empty()) {
        std::filesystem::create_directories(out);
        std::filesystem::path plot = std::filesystem::path(out) / (rep.figure + ".dat");
        std::ofstream pf(plot, std::ios::binary);
        for (const auto& row : rep.plot_rows)
            pf << row << '\n';
        std::cout << "plot data: " << plot.string() << "\n";
    }
    return rep.pass() ? 0 : 1;
}

int cmd_pack(const std::string& manifest_path, const std::string& out_file,
             const std::string& key_file, std::uint64_t nonce_seed, bool seeded) {
    std::ifstream in(manifest_path);
    if (!in)
        throw SchemaError("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }

    store::Key root = root_key_from_env(key_file);
    store::Key model_key = store::random_key();
    store::PackOptions opt;
    std::vector<store::TensorInput> tensors;

    if (!j.is_object())
        throw SchemaError("manifest: expected an object");
    if (j.contains("chunk_size"))
        opt.chunk_size = j["chunk_size"].get<std::uint32_t>();
    std::uint64_t content_seed = j.value("content_seed", 7u);
    if (seeded)
        opt.nonce_seed = nonce_seed;
    for (const auto& t : j.at("tensors")) {
        store::TensorInput ti;
        ti.name = t.at("name").get<std::string>();
        ti.group = t.value("group", 0u);
        auto bytes = t.at("bytes").get<std::uint64_t>();
        ti.data.resize(bytes);
        std::mt19937_64 rng(content_seed ^ std::hash<std::string>{}(ti.name));
        for (auto& b : ti.data)
            b = static_cast<std::uint8_t>(rng());
        tensors.push_back(std::move(ti));
    }
    if (j.contains("checkpoint_bytes")) {
        opt.checkpoint_blob.resize(j["checkpoint_bytes"].get<std::uint64_t>());
        std::mt19937_64 rng(content_seed ^ 0x9e3779b97f4a7c15ULL);
        for (auto& b : opt.checkpoint_blob)
            b = static_cast<std::uint8_t>(rng());
    }

    store::Bytes container = store::pack(tensors, model_key, root, opt);
    std::ofstream of(out_file, std::ios::binary);
    of.write(reinterpret_cast<const char*>(container.data()),
             static_cast<std::streamsize>(container.size()));
    std::cout << "packed " << tensors.size() << " tensors, " << container.size() << " bytes -> "
              << out_file << "\n";
    return 0;
}

int cmd_verify(const std::string& container_path, const std::string& key_file) {
    std::ifstream in(container_path, std::ios::binary);
    if (!in)
        throw SchemaError("cannot open container: " + container_path);
    store::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    store::ContainerView view = store::parse_container(bytes);
    store::Key root = root_key_from_env(key_file);
    store::Key model_key = store::unwrap_model_key(view, root);

    std::uint64_t total = 0;
    for (const auto& t : view.tensors) {
        for (std::uint32_t c = 0; c < t.chunk_count; ++c)
            total += store::unpack_chunk(view, t.name, c, model_key).size();
        std::cout << "tensor " << t.name << ": group " << t.group << ", " << t.plain_len
                  << " bytes, " << t.chunk_count << " chunks ok\n";
    }
    auto checkpoint = store::unpack_checkpoint(view, model_key);
    std::cout << "checkpoint blob: " << checkpoint.size() << " bytes ok\n";
    std::cout << "verified " << view.tensors.size() << " tensors, " << total
              << " plaintext bytes, all tags valid\n";
    return 0;
}

int cmd_attack(int depth, const std::string& disable) {
    npu::AttackConfig cfg;
    cfg.depth = depth;
    if (!disable.empty())
        cfg.defenses = npu::disable_defense(disable);
    npu::ExploreStats stats;
    auto violations = npu::attack_explore(cfg, &stats);
    std::cout << "explored " << stats.states_visited << " states, " << stats.actions_applied
              << " transitions, depth " << cfg.depth;
    if (!disable.empty())
        std::cout << ", defense disabled: " << disable;
    std::cout << "\n";
    if (violations.empty()) {
        std::cout << "no safety violations reachable\n";
        return 0;
    }
    for (const auto& v : violations) {
        std::cout << v.predicate << ": " << v.description << "\n  trace:";
        for (const auto& step : v.trace)
            std::cout << ' ' << step;
        std::cout << "\n";
    }
    // Violations are the expected outcome when a defense is disabled.
    return disable.empty() ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic simulator for TEE-protected LLM inference"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = "out", param, figure_id;
    std::vector<double> values;
    std::string manifest, container, key_file, disable;
    std::string out_file = "model.tzlm";
    std::uint64_t nonce_seed = 0;
    bool seeded = false;
    int depth = 12;

    auto* run = app.add_subcommand("run", "simulate one scenario file");
    run->add_option("scenario", scenario_path, "scenario JSON file")->required();
    run->add_option("--out", out_dir, "output directory");

    auto* sw = app.add_subcommand("sweep", "sweep one scenario parameter");
    sw->add_option("scenario", scenario_path)->required();
    sw->add_option("--param", param, "cached_fraction | prompt_tokens | chunk_bytes | pressure")
        ->required();
    sw->add_option("--values", values, "numeric list")->required()->delimiter(',');
    sw->add_option("--out", out_dir);

    auto* fig = app.add_subcommand("figure", "reproduce a bundled figure claim");
    fig->add_option("id", figure_id, "fig5 | fig9 | fig13 | fig14")->required();
    fig->add_option("--out", out_dir);

    auto* pack = app.add_subcommand("pack", "pack an encrypted model container");
    pack->add_option("manifest", manifest, "tensor manifest JSON")->required();
    pack->add_option("--out", out_file, "output container file");
    pack->add_option("--root-key-file", key_file, "hex key file (else TZSIM_ROOT_KEY)");
    pack->add_option("--nonce-seed", nonce_seed, "deterministic nonces (golden files)")
        ->each([&](const std::string&) { seeded = true; });

    auto* verify = app.add_subcommand("verify", "verify all tags in a container");
    verify->add_option("container", container)->required();
    verify->add_option("--root-key-file", key_file);

    auto* attack = app.add_subcommand("attack", "exhaustive adversarial exploration");
    attack->add_option("--depth", depth, "interleaving depth bound");
    attack->add_option("--disable", disable,
                       "state_check | seq_check | switch_ordering | contiguity_validation | "
                       "load_checksum");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed())
            return cmd_run(scenario_path, out_dir);
        if (sw->parsed())
            return cmd_sweep(scenario_path, param, values, out_dir);
        if (fig->parsed())
            return cmd_figure(figure_id, out_dir);
        if (pack->parsed())
            return cmd_pack(manifest, out_file, key_file, nonce_seed, seeded);
        if (verify->parsed())
            return cmd_verify(container, key_file);
        if (attack->parsed())
            return cmd_attack(depth, disable);
    } catch (const SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const UnknownParameter& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
