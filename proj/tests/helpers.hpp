//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
// Shared test fixtures: model builders, a random paper-shaped graph
// generator, and an independent timeline validator used as the oracle for
// the engine's scheduling invariants.
#pragma once

#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "tzsim/graph.hpp"
#include "tzsim/scenario.hpp"
#include "tzsim/securemem.hpp"
#include "tzsim/simcore.hpp"

namespace tztest {

using namespace tzsim;

/// A layered spec with one group per layer and one CPU + one NPU op per
/// layer, fixed durations.
inline ModelSpec layered_spec(int layers, bytes_t param_bytes, micros_t cpu_us, micros_t npu_us) {
    ModelSpec m;
    m.name = "test-model";
    m.layer_count = layers;
    m.prompt_tokens = 16;
    m.param_bytes = param_bytes;
    m.layer_ops = {{"norm", Hw::Cpu, false}, {"matmul", Hw::Npu, true}};
    m.set_duration("norm", Hw::Cpu, 16, cpu_us);
    m.set_duration("matmul", Hw::Npu, 16, npu_us);
    m.set_duration("matmul", Hw::Cpu, 16, npu_us * 10);
    return m;
}

/// Explicit-op spec: a single serial chain, each op optionally consuming one
/// group.
struct ChainOp {
    std::string kind;
    Hw hw;
    micros_t us;
    int group; // -1: none
};

inline ModelSpec chain_spec(const std::vector<bytes_t>& group_bytes,
                            const std::vector<ChainOp>& chain) {
    ModelSpec m;
    m.name = "chain";
    m.prompt_tokens = 4;
    for (size_t g = 0; g < group_bytes.size(); ++g) {
        TensorGroupSpec t;
        t.index = static_cast<int>(g);
        t.byte_size = group_bytes[g];
        m.groups.push_back(t);
    }
    int idx = 0;
    for (const auto& c : chain) {
        ComputeOpSpec op;
        op.kind = c.kind;
        op.hw = c.hw;
        op.duration_us = c.us;
        if (c.group >= 0)
            op.tensor_group = c.group;
        if (idx > 0)
            op.preds = {idx - 1};
        m.ops.push_back(op);
        ++idx;
    }
    return m;
}

/// Random paper-shaped instance: a few tensor groups, each with an
/// Alloc/Load/Decrypt chain feeding a serial compute chain. Node count after
/// restoration stays <= 12 so the brute-force oracle applies.
inline ExtendedGraph random_small_graph(std::mt19937_64& rng, const HardwareModel& hw,
                                        bool annotate = true) {
    std::uniform_int_distribution<int> group_count(1, 2);
    int groups = group_count(rng);
    int computes = 1 + static_cast<int>(rng() % 4); // 1..4, total <= 2*3+4 <= 10
    std::uniform_int_distribution<bytes_t> sz(50'000, 4'000'000);

    ModelSpec m;
    m.name = "random";
    m.prompt_tokens = 4;
    for (int g = 0; g < groups; ++g) {
        TensorGroupSpec t;
        t.index = g;
        t.byte_size = sz(rng);
        m.groups.push_back(t);
    }
    for (int i = 0; i < computes; ++i) {
        ComputeOpSpec op;
        bool npu = rng() % 2 == 0;
        op.kind = npu ? "mm" : "cpu";
        op.hw = npu ? Hw::Npu : Hw::Cpu;
        op.duration_us = static_cast<micros_t>(200 + rng() % 2000);
        op.tensor_group = static_cast<int>(rng() % static_cast<unsigned>(groups));
        if (i > 0 && rng() % 3 != 0)
            op.preds = {i - 1};
        m.ops.push_back(op);
    }
    // Every group needs a consumer; point stragglers at the last op.
    std::set<int> used;
    for (const auto& op : m.ops)
        if (op.tensor_group)
            used.insert(*op.tensor_group);
    for (int g = 0; g < groups; ++g)
        if (!used.count(g))
            m.ops.back().tensor_group = g; // only rebinds the last op
    // Rebuild consumed_by bookkeeping via build_graph.
    ComputationGraph cg = build_graph(m);
    std::set<int> orphan;
    for (const auto& grp : cg.groups)
        if (grp.consumed_by.empty())
            orphan.insert(grp.index);
    if (!orphan.empty()) {
        // Drop orphan groups entirely.
        ModelSpec m2 = m;
        m2.groups.clear();
        std::map<int, int> remap;
        for (const auto& grp : m.groups)
            if (!orphan.count(grp.index)) {
                int ni = static_cast<int>(m2.groups.size());
                remap[grp.index] = ni;
                TensorGroupSpec t = grp;
                t.index = ni;
                m2.groups.push_back(t);
            }
        for (auto& op : m2.ops)
            if (op.tensor_group) {
                auto it = remap.find(*op.tensor_group);
                if (it == remap.end())
                    op.tensor_group.reset();
                else
                    op.tensor_group = it->second;
            }
        cg = build_graph(m2);
    }
    ExtendedGraph eg = insert_restoration_ops(cg, {});
    if (annotate) {
        CmaSpec cma;
        cma.region_bytes = 64'000'000;
        cma.occupied_fraction = 1.0;
        annotate_alloc_costs(eg, cma, hw);
    }
    return eg;
}

inline SecureMemoryState fresh_memory(bytes_t param_region = 64'000'000,
                                      double occupied = 1.0) {
    CmaSpec p;
    p.region_bytes = param_region;
    p.occupied_fraction = occupied;
    CmaSpec w;
    w.base = 0x4'0000'0000ULL;
    w.region_bytes = 16'000'000;
    w.occupied_fraction = 0.0;
    return SecureMemoryState(p, w);
}

struct NodeSpan {
    micros_t start = -1;
    micros_t end = -1;
    micros_t busy = 0;
};

inline std::vector<NodeSpan> node_spans(const Timeline& tl, const ExtendedGraph& g) {
    std::vector<NodeSpan> spans(g.nodes.size());
    for (const auto& lane : tl.lanes) {
        for (const auto& iv : lane.intervals) {
            auto& s = spans[static_cast<size_t>(iv.node)];
            if (s.start < 0 || iv.start < s.start)
                s.start = iv.start;
            s.end = std::max(s.end, iv.end);
            s.busy += iv.end - iv.start;
        }
    }
    return spans;
}

/// Independent re-check of every engine invariant on a finished timeline:
/// causality, lane exclusivity, exact time conservation, work conservation
/// and the critical-path lower bound.
inline void check_timeline(const Timeline& tl, const ExtendedGraph& g, const HardwareModel& hw) {
    auto spans = node_spans(tl, g);

    // Every node executed, intervals cover exactly its duration.
    for (const auto& n : g.nodes) {
        const auto& s = spans[static_cast<size_t>(n.id)];
        micros_t expect = 0;
        switch (n.kind) {
        case OpKind::Load: expect = load_duration(n.bytes, hw); break;
        case OpKind::Decrypt: expect = decrypt_duration(n.bytes, hw); break;
        default: expect = n.duration_us;
        }
        if (s.start < 0) {
            // Zero-length intervals are not recorded (e.g. free allocation).
            bool zero_ok = expect == 0 || (n.kind == OpKind::Alloc && !g.alloc_costs_annotated);
            CHECK_MESSAGE(zero_ok, "node ", n.id, " (", n.label, ") never ran");
            continue;
        }
        if (n.kind != OpKind::Alloc || g.alloc_costs_annotated)
            CHECK_MESSAGE(s.busy == expect, "node ", n.id, " (", n.label, ") busy ", s.busy,
                          " != duration ", expect);
    }

    // Causality: starts respect DAG edges.
    for (const auto& n : g.nodes)
        for (int p : n.preds)
            CHECK_MESSAGE(spans[static_cast<size_t>(n.id)].start >=
                              spans[static_cast<size_t>(p)].end,
                          "node ", n.id, " starts before predecessor ", p, " ends");

    // Lane exclusivity.
    for (const auto& lane : tl.lanes) {
        for (size_t i = 1; i < lane.intervals.size(); ++i)
            CHECK(lane.intervals[i].start >= lane.intervals[i - 1].end);
    }

    // Work conservation: while a node is ready but not started, every lane
    // of its class is busy.
    auto lane_class = [](OpKind k) {
        if (k == OpKind::Load)
            return LaneKind::Io;
        if (k == OpKind::NpuCompute)
            return LaneKind::Npu;
        return LaneKind::Cpu;
    };
    for (const auto& n : g.nodes) {
        micros_t ready = tl.epoch;
        for (int p : n.preds)
            ready = std::max(ready, spans[static_cast<size_t>(p)].end);
        micros_t start = spans[static_cast<size_t>(n.id)].start;
        if (start <= ready)
            continue;
        // Gap [ready, start): lanes of the class must be covered by work.
        micros_t covered = 0;
        for (const auto& lane : tl.lanes) {
            if (lane.kind != lane_class(n.kind))
                continue;
            micros_t c = 0;
            for (const auto& iv : lane.intervals) {
                micros_t lo = std::max(iv.start, ready);
                micros_t hi = std::min(iv.end, start);
                if (hi > lo)
                    c += hi - lo;
            }
            covered = std::max(covered, c); // any idle lane breaks conservation
            CHECK_MESSAGE(c == start - ready, "lane ", lane.label, " idles while node ", n.id,
                          " (", n.label, ") is ready: ready=", ready, " start=", start);
        }
    }

    // Lower bound dominance.
    CriticalPaths cp = critical_paths(g, hw);
    CHECK(tl.ttft - tl.epoch >= cp.lower_bound - 1); // rounding slack of 1us
}

} // namespace tztest
