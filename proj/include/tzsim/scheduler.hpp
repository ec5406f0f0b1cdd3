//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tzsim/graph.hpp"

namespace tzsim {

enum class PolicyKind {
    GreedyPriority,         // compute first, then earliest-consumer restoration; preemptive
    GreedyPriorityNoPreempt,
    TopologicalFifo,        // ready-arrival order, the unprioritized baseline
    BruteForceOptimal,
};

PolicyKind policy_from_string(const std::string& s); // exact scenario strings
const char* to_string(PolicyKind p);

inline bool policy_preempts(PolicyKind p) { return p == PolicyKind::GreedyPriority; }

struct ReadyEntry {
    int node = 0;
    micros_t ready_at = 0;
};

/// Per-hardware-class ready sets, maintained by the simulation engine.
struct ReadyQueue {
    std::vector<ReadyEntry> cpu; // CPU compute + Alloc + Decrypt
    std::vector<ReadyEntry> io;  // Load
    std::vector<ReadyEntry> npu; // NPU compute

    bool empty() const { return cpu.empty() && io.empty() && npu.empty(); }
};

/// CPU pick: a ready CPU compute op with the smallest index wins; otherwise
/// the restoration op with the smallest associated compute index, Alloc
/// before Decrypt on ties (the allocation unblocks the loading path), then by
/// group index. For TopologicalFifo, the op that became ready first wins.
std::optional<int> cpu_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy);
std::optional<int> io_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy);
std::optional<int> npu_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy);

enum class PreemptDecision { Continue, PreemptAtBoundary };

/// Consulted at micro-op boundaries of a running Alloc/Decrypt chain: yield
/// when a CPU compute op is ready or a restoration op with a strictly smaller
/// associated compute index is ready. Compute ops are never preempted.
PreemptDecision preemption_decision(int running_node, const ReadyQueue& queue,
                                    const ExtendedGraph& graph, PolicyKind policy);

inline constexpr int kBruteForceMaxOps = 12;

struct BruteForceResult {
    micros_t makespan = 0;
    // (node, lane-class, start) of one optimal schedule, in start order.
    std::vector<std::tuple<int, OpKind, micros_t>> schedule;
};

/// Exact minimum makespan over all non-delay, non-preemptive schedules
/// (equivalently: every priority order fed to the list scheduler). Durations
/// are taken from the nodes; Load/Decrypt are derived from the hardware
/// model. Throws TooLarge above kBruteForceMaxOps schedulable operators.
BruteForceResult brute_force_optimal(const ExtendedGraph& graph, const HardwareModel& hw);

} // namespace tzsim
