//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "tzsim/common.hpp"
#include "tzsim/hardware.hpp"

namespace tzsim {

enum class Hw { Cpu, Npu };

const char* to_string(Hw hw);
Hw hw_from_string(const std::string& s);

struct TensorGroupSpec {
    int index = 0;
    bytes_t byte_size = 0;
    std::vector<int> consumed_by; // compute op indices, ascending
};

/// One operator slot in the per-layer template. Ops are chained serially
/// within a layer and across layers.
struct LayerOpTemplate {
    std::string kind;
    Hw hw = Hw::Cpu;
    bool uses_group = false;
};

/// Explicit operator description for hand-built DAGs.
struct ComputeOpSpec {
    std::string kind;
    Hw hw = Hw::Cpu;
    std::optional<int> tensor_group;
    std::vector<int> preds;
    std::optional<micros_t> duration_us; // overrides the duration table
};

/// Synthetic model description. Two modes:
///  - layered: layer_count × layer_ops template, one tensor group per layer
///    with param_bytes split evenly (the coarsest unit consistent with
///    per-layer parameter locality);
///  - explicit: `ops` and `groups` given directly (micro scenarios).
/// Durations come from a (kind, hw, prompt-bucket) table unless an op pins
/// its own value. Bucket 1 is the single-token decoding bucket.
struct ModelSpec {
    std::string name;
    int layer_count = 0;
    int prompt_tokens = 0;
    bytes_t param_bytes = 0;
    bytes_t kv_bytes_per_token = 0;
    bytes_t working_fixed_bytes = 0;

    std::vector<LayerOpTemplate> layer_ops;
    std::vector<TensorGroupSpec> groups;
    std::vector<ComputeOpSpec> ops;

    // (kind, hw, bucket) -> microseconds
    std::map<std::tuple<std::string, int, int>, micros_t> durations;

    bool layered() const { return ops.empty(); }
    void set_duration(const std::string& kind, Hw hw, int bucket, micros_t us);
    micros_t duration_for(const std::string& kind, Hw hw, int bucket) const;
    bool has_duration(const std::string& kind, Hw hw, int bucket) const;
    void validate() const;
};

struct ComputeOp {
    int index = 0;
    std::string kind;
    Hw hw = Hw::Cpu;
    micros_t duration_us = 0;
    std::optional<int> group;
    std::vector<int> preds;
};

struct ComputationGraph {
    std::string model_name;
    std::vector<TensorGroupSpec> groups;
    std::vector<ComputeOp> ops; // index == position, topological
};

struct GraphOptions {
    int bucket = 0;        // 0: use spec.prompt_tokens
    bool cpu_only = false; // map NPU ops to their CPU duration (strawman)
};

ComputationGraph build_graph(const ModelSpec& spec);
ComputationGraph build_graph(const ModelSpec& spec, const GraphOptions& opt);

enum class OpKind { CpuCompute, NpuCompute, Alloc, Load, Decrypt };

const char* to_string(OpKind k);

inline bool is_compute(OpKind k) { return k == OpKind::CpuCompute || k == OpKind::NpuCompute; }
inline bool is_restoration(OpKind k) { return !is_compute(k); }
inline bool is_cpu_lane(OpKind k) {
    return k == OpKind::CpuCompute || k == OpKind::Alloc || k == OpKind::Decrypt;
}

/// Node of the extended graph. Compute nodes keep their original indices;
/// restoration nodes are appended after them.
struct Node {
    int id = 0;
    OpKind kind = OpKind::CpuCompute;
    std::string label;
    std::optional<int> group;
    int assoc = -1; // earliest consuming compute index (== id for compute)
    bytes_t bytes = 0;
    micros_t duration_us = 0; // Alloc durations filled by annotate_alloc_costs
    std::vector<int> preds;
    std::vector<bytes_t> chunks; // micro-op byte slices; empty means unsplit
};

struct RestorationOptions {
    bool include_decrypt = true;   // false models plaintext loading (REE baseline)
    bool sequential_phases = false; // strawman: alloc, load, decrypt as barriers
};

struct ExtendedGraph {
    std::string model_name;
    std::vector<TensorGroupSpec> groups;
    std::vector<Node> nodes; // compute first, then restoration
    int compute_count = 0;
    std::vector<int> cached; // cached group indices, a topological prefix
    bool alloc_costs_annotated = false;

    const Node& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
    std::vector<std::vector<int>> successors() const;
    int restoration_count() const { return static_cast<int>(nodes.size()) - compute_count; }
};

ExtendedGraph insert_restoration_ops(const ComputationGraph& graph, const std::set<int>& cached_groups);
ExtendedGraph insert_restoration_ops(const ComputationGraph& graph, const std::set<int>& cached_groups,
                                     const RestorationOptions& opt);

/// Splits Alloc and Decrypt nodes larger than chunk_bytes into micro-op
/// chunks (preemption points). Loads are never split.
ExtendedGraph split_micro_ops(ExtendedGraph graph, bytes_t chunk_bytes);

struct CriticalPaths {
    micros_t io_path = 0;
    micros_t cpu_path = 0;
    micros_t compute_path = 0;
    micros_t lower_bound = 0;
};

/// Per-path serial work sums. Load and Decrypt durations derive from the
/// hardware model; Alloc durations must have been annotated (they default to
/// zero otherwise, which keeps the bound conservative).
CriticalPaths critical_paths(const ExtendedGraph& graph, const HardwareModel& hw);

/// Kahn's algorithm; throws SpecError unless every node is reachable in
/// topological order and every edge points forward.
void validate_dag(const ExtendedGraph& graph);

/// Chunk end offsets in time for a node executed as micro-ops: cumulative
/// rounding so per-chunk durations always sum to the node duration.
std::vector<micros_t> chunk_durations(const Node& node);

} // namespace tzsim
