//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <map>
#include <string>
#include <vector>

#include "tzsim/graph.hpp"
#include "tzsim/hardware.hpp"
#include "tzsim/npu_codriver.hpp"
#include "tzsim/scheduler.hpp"
#include "tzsim/securemem.hpp"

namespace tzsim {

enum class LaneKind { Cpu, Io, Npu };

const char* to_string(LaneKind k);

struct Interval {
    int node = 0;
    micros_t start = 0;
    micros_t end = 0;
    bool resume = false;    // continuation of a preempted operator
    bool preempted = false; // yielded at a micro-op boundary
};

struct LaneTimeline {
    LaneKind kind = LaneKind::Cpu;
    int index = 0;
    std::string label; // "cpu0", "io", "npu"
    std::vector<Interval> intervals;
};

struct ReadyRecord {
    int node = 0;
    micros_t at = 0;
    int enabler = -1; // predecessor whose completion made it ready, -1 = source
};

struct Timeline {
    std::vector<LaneTimeline> lanes;
    micros_t epoch = 0;       // scheduling starts here (init cost before it)
    micros_t prefill_end = 0; // completion of the last compute operator
    micros_t ttft = 0;        // prefill_end, init included
    std::map<std::string, micros_t> kind_busy_us; // per-op-kind busy totals
    std::vector<MemTraceRecord> memtrace;
    std::vector<ReadyRecord> ready_log;

    micros_t busy(const std::string& kind) const {
        auto it = kind_busy_us.find(kind);
        return it == kind_busy_us.end() ? 0 : it->second;
    }
    std::vector<std::string> trace_lines(const ExtendedGraph& graph) const;
};

struct Bubble {
    std::string lane;
    micros_t start = 0;
    micros_t end = 0;
    int blocked_node = -1;   // the operator whose start closed the gap
    int blocking_pred = -1;  // dependency that ended the gap (-1: resume)
};

struct BubbleReport {
    std::vector<Bubble> bubbles;
    std::vector<std::string> lines(const ExtendedGraph& graph) const;
};

struct PrefillOptions {
    PolicyKind policy = PolicyKind::GreedyPriority;
    micros_t init_cost_us = 0; // checkpoint restore, or framework init (strawman)
};

/// Deterministic discrete-event run over cpu_lanes CPU lanes, one I/O lane
/// and one NPU lane. Alloc durations are the migration costs reported by the
/// secure-memory model at claim time; Load/Decrypt derive from the hardware
/// model. Simultaneous completions are processed in ascending operator index.
Timeline run_prefill(const ExtendedGraph& graph, const HardwareModel& hw, PolicyKind policy,
                     SecureMemoryState& memory);
Timeline run_prefill(const ExtendedGraph& graph, const HardwareModel& hw,
                     const PrefillOptions& opt, SecureMemoryState& memory);

/// Maximal idle gaps on each lane while that lane still has future work,
/// attributed to the dependency whose completion closed the gap.
BubbleReport detect_bubbles(const Timeline& t, const ExtendedGraph& graph);

struct DecodeResult {
    double tokens_per_second = 0.0;
    double switch_overhead_fraction = 0.0;
    micros_t total_us = 0;
    micros_t switch_us = 0;
    int secure_jobs = 0;
};

/// Token-by-token decoding with resident parameters. With NPU sharing on,
/// every secure NPU job runs through the co-driver protocol and pays the
/// world-switch cost twice (take-over and release).
DecodeResult run_decoding(const ModelSpec& spec, const HardwareModel& hw, int tokens,
                          bool npu_sharing);
DecodeResult run_decoding(const ModelSpec& spec, const HardwareModel& hw, int tokens,
                          bool npu_sharing, npu::CoDriverWorld* world, SecureMemoryState* memory);

} // namespace tzsim
