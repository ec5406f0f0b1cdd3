//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tzsim/graph.hpp"
#include "tzsim/hardware.hpp"
#include "tzsim/scheduler.hpp"
#include "tzsim/securemem.hpp"
#include "tzsim/simcore.hpp"

namespace tzsim {

enum class Baseline { TzLlm, Strawman, ReeFlash, ReeMemory };

Baseline baseline_from_string(const std::string& s);
const char* to_string(Baseline b);

struct PressureSpec {
    double cma_occupied_fraction = 1.0;
    bytes_t post_inference_signal_bytes = 0;
};

struct Scenario {
    std::string name;
    ModelSpec model;
    HardwareModel hw;
    PolicyKind policy = PolicyKind::GreedyPriority;
    Baseline baseline = Baseline::TzLlm;
    double cached_fraction = 0.0;
    PressureSpec pressure;
    int prompt_tokens_override = -1;
    int decode_tokens = 0;
    bool npu_sharing = false;
    bool naive_npu_switch = false;
    std::uint64_t seed = 0;
    bytes_t chunk_bytes = 32ull << 20;
    CmaSpec param_cma;
    CmaSpec working_cma;

    int effective_prompt_tokens() const {
        return prompt_tokens_override >= 0 ? prompt_tokens_override : model.prompt_tokens;
    }
    int cached_group_count(int group_total) const;
};

/// Strict parse: unknown fields are rejected with a field-path diagnostic.
Scenario parse_scenario_json(const std::string& text, const std::string& origin = "scenario");
Scenario load_scenario(const std::filesystem::path& file);
std::string scenario_to_json(const Scenario& s);

struct RunSummary {
    std::string scenario;
    std::uint64_t seed = 0;
    std::string baseline;
    std::string policy;
    double cached_fraction = 0.0;

    micros_t ttft_us = 0;
    micros_t io_path_us = 0;
    micros_t cpu_path_us = 0;
    micros_t compute_path_us = 0;
    micros_t lower_bound_us = 0;
    double lower_bound_gap = 0.0; // ttft / lower_bound - 1

    micros_t init_us = 0;
    micros_t alloc_us = 0;
    micros_t load_us = 0;
    micros_t decrypt_us = 0;
    micros_t cpu_compute_us = 0;
    micros_t npu_compute_us = 0;

    int bubble_count = 0;
    std::vector<int> release_plan;

    double decode_tokens_per_s = 0.0;
    double switch_overhead_fraction = 0.0;
    micros_t decode_total_us = 0;
    micros_t decode_switch_us = 0;

    std::string to_json() const;
};

struct RunArtifacts {
    RunSummary summary;
    ExtendedGraph graph;
    Timeline timeline;
    BubbleReport bubbles;
};

RunArtifacts run_scenario(const Scenario& s);

/// Writes summary.json, trace.txt, memtrace.txt and bubbles.txt under
/// out_root/<scenario>-seed<seed>/ and returns that directory.
std::filesystem::path write_run_outputs(const RunArtifacts& a,
                                        const std::filesystem::path& out_root);

struct SweepRow {
    double value = 0.0;
    RunSummary summary;
};

/// Sweepable parameters: cached_fraction, prompt_tokens, chunk_bytes,
/// pressure. Throws UnknownParameter otherwise.
std::vector<SweepRow> sweep(const Scenario& base, const std::string& parameter,
                            const std::vector<double>& values);

struct FigureCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct FigureReport {
    std::string figure;
    std::vector<FigureCheck> checks;
    std::vector<std::string> plot_rows;
    bool pass() const;
};

/// Reproduces the structural claim behind one of the bundled figure
/// scenarios: fig5 (pipeline timelines), fig9 (lower-bound proximity),
/// fig13 (preemption ablation), fig14 (caching curve).
FigureReport figure_repro(const std::string& figure_id);

// --- bundled scenario families ----------------------------------------------

struct BundledModel {
    std::string key;   // tinyllama-1b, qwen-3b, phi-3.8b, llama-8b
    bytes_t bytes = 0;
    int layers = 0;
    micros_t decode_switch_us = 0; // calibrated co-driver switch cost
};

const std::vector<BundledModel>& bundled_models();

ModelSpec make_bundled_model(const std::string& key, int prompt_tokens);
Scenario make_prefill_scenario(const std::string& model_key, int prompt_tokens);
Scenario make_strawman_scenario();
Scenario make_decode_scenario(const std::string& model_key);
Scenario make_fig5_scenario();
std::vector<Scenario> bundled_prefill_family(); // 4 models x {32,128,512}

/// Smallest cached fraction on `grid` whose remaining restoration pipeline
/// keeps ahead of the compute chain (conservative dedicated-lane recurrence);
/// 1.0 when no smaller point qualifies.
double analytic_cache_threshold(const Scenario& s, const std::vector<double>& grid);

} // namespace tzsim
