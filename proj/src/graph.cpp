//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/graph.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace tzsim {

const char* to_string(Hw hw) { return hw == Hw::Cpu ? "CPU" : "NPU"; }

Hw hw_from_string(const std::string& s) {
    if (s == "CPU")
        return Hw::Cpu;
    if (s == "NPU")
        return Hw::Npu;
    throw SpecError("unknown hardware class: " + s);
}

const char* to_string(OpKind k) {
    switch (k) {
    case OpKind::CpuCompute: return "cpu_compute";
    case OpKind::NpuCompute: return "npu_compute";
    case OpKind::Alloc: return "alloc";
    case OpKind::Load: return "load";
    case OpKind::Decrypt: return "decrypt";
    }
    return "?";
}

void ModelSpec::set_duration(const std::string& kind, Hw hw, int bucket, micros_t us) {
    durations[{kind, static_cast<int>(hw), bucket}] = us;
}

bool ModelSpec::has_duration(const std::string& kind, Hw hw, int bucket) const {
    return durations.count({kind, static_cast<int>(hw), bucket}) > 0;
}

micros_t ModelSpec::duration_for(const std::string& kind, Hw hw, int bucket) const {
    auto it = durations.find({kind, static_cast<int>(hw), bucket});
    if (it == durations.end())
        throw SpecError("no duration for op '" + kind + "' on " + to_string(hw) +
                        " at prompt bucket " + std::to_string(bucket));
    if (it->second <= 0)
        throw SpecError("non-positive duration for op '" + kind + "'");
    return it->second;
}

void ModelSpec::validate() const {
    if (prompt_tokens < 0)
        throw SpecError("prompt_tokens must be >= 0");
    if (layered()) {
        if (layer_count <= 0)
            throw SpecError("layer_count must be > 0");
        if (layer_ops.empty())
            throw SpecError("layered spec needs at least one layer op");
        if (param_bytes == 0 && groups.empty())
            throw SpecError("layered spec needs param_bytes or explicit groups");
        if (!groups.empty() && static_cast<int>(groups.size()) != layer_count)
            throw SpecError("explicit groups must match layer_count");
    } else {
        for (size_t i = 0; i < ops.size(); ++i) {
            const auto& op = ops[i];
            for (int p : op.preds)
                if (p < 0 || p >= static_cast<int>(i))
                    throw SpecError("op " + std::to_string(i) +
                                    ": predecessor " + std::to_string(p) +
                                    " is not an earlier op");
            if (op.tensor_group &&
                (*op.tensor_group < 0 || *op.tensor_group >= static_cast<int>(groups.size())))
                throw SpecError("op " + std::to_string(i) + ": tensor group " +
                                std::to_string(*op.tensor_group) + " of " +
                                std::to_string(groups.size()) + " does not exist");
        }
    }
    for (size_t g = 0; g < groups.size(); ++g)
        if (groups[g].byte_size == 0)
            throw SpecError("tensor group " + std::to_string(g) + " has zero bytes");
}

namespace {

std::vector<TensorGroupSpec> even_groups(bytes_t total, int count) {
    std::vector<TensorGroupSpec> out(static_cast<size_t>(count));
    bytes_t base = total / static_cast<bytes_t>(count);
    bytes_t rem = total % static_cast<bytes_t>(count);
    for (int g = 0; g < count; ++g) {
        out[static_cast<size_t>(g)].index = g;
        out[static_cast<size_t>(g)].byte_size = base + (static_cast<bytes_t>(g) < rem ? 1 : 0);
    }
    return out;
}

micros_t resolve_op_duration(const ModelSpec& spec, const std::string& kind, Hw hw, int bucket,
                             const GraphOptions& opt) {
    if (opt.cpu_only && hw == Hw::Npu)
        return spec.duration_for(kind, Hw::Cpu, bucket);
    return spec.duration_for(kind, hw, bucket);
}

} // namespace

ComputationGraph build_graph(const ModelSpec& spec) { return build_graph(spec, GraphOptions{}); }

ComputationGraph build_graph(const ModelSpec& spec, const GraphOptions& opt) {
    spec.validate();
    int bucket = opt.bucket > 0 ? opt.bucket : spec.prompt_tokens;

    ComputationGraph g;
    g.model_name = spec.name;

    if (spec.layered()) {
        g.groups = spec.groups.empty() ? even_groups(spec.param_bytes, spec.layer_count) : spec.groups;
        for (auto& grp : g.groups)
            grp.consumed_by.clear();
        int idx = 0;
        for (int layer = 0; layer < spec.layer_count; ++layer) {
            for (const auto& t : spec.layer_ops) {
                ComputeOp op;
                op.index = idx;
                op.kind = t.kind;
                op.hw = opt.cpu_only ? Hw::Cpu : t.hw;
                op.duration_us = resolve_op_duration(spec, t.kind, t.hw, bucket, opt);
                if (t.uses_group) {
                    op.group = layer;
                    g.groups[static_cast<size_t>(layer)].consumed_by.push_back(idx);
                }
                if (idx > 0)
                    op.preds.push_back(idx - 1); // serial transformer chain
                g.ops.push_back(std::move(op));
                ++idx;
            }
        }
    } else {
        g.groups = spec.groups;
        for (auto& grp : g.groups)
            grp.consumed_by.clear();
        int idx = 0;
        for (const auto& s : spec.ops) {
            ComputeOp op;
            op.index = idx;
            op.kind = s.kind;
            op.hw = opt.cpu_only ? Hw::Cpu : s.hw;
            if (s.duration_us)
                op.duration_us = *s.duration_us;
            else
                op.duration_us = resolve_op_duration(spec, s.kind, s.hw, bucket, opt);
            if (op.duration_us <= 0)
                throw SpecError("op " + std::to_string(idx) + " has non-positive duration");
            op.group = s.tensor_group;
            op.preds = s.preds;
            if (op.group)
                g.groups[static_cast<size_t>(*op.group)].consumed_by.push_back(idx);
            g.ops.push_back(std::move(op));
            ++idx;
        }
    }
    return g;
}

ExtendedGraph insert_restoration_ops(const ComputationGraph& graph, const std::set<int>& cached_groups) {
    return insert_restoration_ops(graph, cached_groups, RestorationOptions{});
}

ExtendedGraph insert_restoration_ops(const ComputationGraph& graph, const std::set<int>& cached_groups,
                                     const RestorationOptions& opt) {
    // Cached groups must be a topological prefix: partial caching releases in
    // reverse topological order, so only {0..k-1} can remain resident.
    int expect = 0;
    for (int g : cached_groups) {
        if (g != expect++)
            throw CacheSetError("cached groups must form the topological prefix {0..k-1}; got group " +
                                std::to_string(g));
    }
    if (expect > static_cast<int>(graph.groups.size()))
        throw CacheSetError("more cached groups than tensor groups");

    ExtendedGraph eg;
    eg.model_name = graph.model_name;
    eg.groups = graph.groups;
    eg.compute_count = static_cast<int>(graph.ops.size());
    eg.cached.assign(cached_groups.begin(), cached_groups.end());

    for (const auto& op : graph.ops) {
        Node n;
        n.id = op.index;
        n.kind = op.hw == Hw::Cpu ? OpKind::CpuCompute : OpKind::NpuCompute;
        n.label = op.kind;
        n.group = op.group;
        n.assoc = op.index;
        n.duration_us = op.duration_us;
        n.preds = op.preds;
        eg.nodes.push_back(std::move(n));
    }

    int next = eg.compute_count;
    std::vector<int> alloc_ids, load_ids, decrypt_ids;
    for (const auto& grp : graph.groups) {
        if (cached_groups.count(grp.index))
            continue;
        if (grp.consumed_by.empty())
            throw SpecError("tensor group " + std::to_string(grp.index) + " has no consumers");
        int first_consumer = grp.consumed_by.front();
        auto tag = std::to_string(grp.index);

        Node alloc;
        alloc.id = next++;
        alloc.kind = OpKind::Alloc;
        alloc.label = "alloc " + tag;
        alloc.group = grp.index;
        alloc.assoc = first_consumer;
        alloc.bytes = grp.byte_size;

        Node load;
        load.id = next++;
        load.kind = OpKind::Load;
        load.label = "load " + tag;
        load.group = grp.index;
        load.assoc = first_consumer;
        load.bytes = grp.byte_size;
        load.preds.push_back(alloc.id);

        eg.nodes.push_back(alloc);
        alloc_ids.push_back(alloc.id);

        int tail = load.id;
        eg.nodes.push_back(std::move(load));
        load_ids.push_back(tail);

        if (opt.include_decrypt) {
            Node dec;
            dec.id = next++;
            dec.kind = OpKind::Decrypt;
            dec.label = "decrypt " + tag;
            dec.group = grp.index;
            dec.assoc = first_consumer;
            dec.bytes = grp.byte_size;
            dec.preds.push_back(tail);
            tail = dec.id;
            eg.nodes.push_back(std::move(dec));
            decrypt_ids.push_back(tail);
        }
        eg.nodes[static_cast<size_t>(first_consumer)].preds.push_back(tail);
    }

    if (opt.sequential_phases) {
        // Strawman cold start: every phase drains before the next begins.
        auto barrier = [&eg](const std::vector<int>& prev, const std::vector<int>& cur) {
            if (prev.empty())
                return;
            for (size_t i = 1; i < prev.size(); ++i)
                eg.nodes[static_cast<size_t>(prev[i])].preds.push_back(prev[i - 1]);
            for (int id : cur)
                eg.nodes[static_cast<size_t>(id)].preds.push_back(prev.back());
        };
        barrier(alloc_ids, load_ids);
        barrier(load_ids, decrypt_ids.empty() ? std::vector<int>{} : decrypt_ids);
        const auto& last_phase = decrypt_ids.empty() ? load_ids : decrypt_ids;
        if (!last_phase.empty()) {
            for (size_t i = 1; i < last_phase.size(); ++i)
                eg.nodes[static_cast<size_t>(last_phase[i])].preds.push_back(last_phase[i - 1]);
            for (int c = 0; c < eg.compute_count; ++c)
                eg.nodes[static_cast<size_t>(c)].preds.push_back(last_phase.back());
        }
    }

    for (auto& n : eg.nodes) {
        std::sort(n.preds.begin(), n.preds.end());
        n.preds.erase(std::unique(n.preds.begin(), n.preds.end()), n.preds.end());
    }
    validate_dag(eg);
    return eg;
}

ExtendedGraph split_micro_ops(ExtendedGraph graph, bytes_t chunk_bytes) {
    if (chunk_bytes == 0)
        throw SpecError("chunk_bytes must be > 0");
    for (auto& n : graph.nodes) {
        if (n.kind != OpKind::Alloc && n.kind != OpKind::Decrypt)
            continue;
        if (n.bytes <= chunk_bytes) {
            n.chunks.clear();
            continue;
        }
        n.chunks.clear();
        bytes_t left = n.bytes;
        while (left > 0) {
            bytes_t c = std::min(left, chunk_bytes);
            n.chunks.push_back(c);
            left -= c;
        }
    }
    return graph;
}

std::vector<micros_t> chunk_durations(const Node& node) {
    if (node.chunks.empty())
        return {node.duration_us};
    std::vector<micros_t> out;
    out.reserve(node.chunks.size());
    bytes_t cum = 0;
    micros_t prev_end = 0;
    for (bytes_t c : node.chunks) {
        cum += c;
        micros_t end = static_cast<micros_t>(std::llround(
            static_cast<double>(node.duration_us) * static_cast<double>(cum) /
            static_cast<double>(node.bytes)));
        out.push_back(end - prev_end);
        prev_end = end;
    }
    return out;
}

std::vector<std::vector<int>> ExtendedGraph::successors() const {
    std::vector<std::vector<int>> succ(nodes.size());
    for (const auto& n : nodes)
        for (int p : n.preds)
            succ[static_cast<size_t>(p)].push_back(n.id);
    return succ;
}

CriticalPaths critical_paths(const ExtendedGraph& graph, const HardwareModel& hw) {
    CriticalPaths cp;
    for (const auto& n : graph.nodes) {
        switch (n.kind) {
        case OpKind::Load:
            cp.io_path += load_duration(n.bytes, hw);
            break;
        case OpKind::Decrypt:
            cp.cpu_path += decrypt_duration(n.bytes, hw);
            break;
        case OpKind::Alloc:
            cp.cpu_path += n.duration_us; // zero unless annotated
            break;
        case OpKind::CpuCompute:
            cp.cpu_path += n.duration_us;
            cp.compute_path += n.duration_us;
            break;
        case OpKind::NpuCompute:
            cp.compute_path += n.duration_us;
            break;
        }
    }
    cp.lower_bound = std::max({cp.io_path, cp.cpu_path, cp.compute_path});
    return cp;
}

void validate_dag(const ExtendedGraph& graph) {
    const size_t n = graph.nodes.size();
    std::vector<int> indeg(n, 0);
    for (const auto& node : graph.nodes) {
        for (int p : node.preds) {
            if (p < 0 || p >= static_cast<int>(n))
                throw SpecError("edge references unknown node " + std::to_string(p));
            ++indeg[static_cast<size_t>(node.id)];
        }
    }
    auto succ = graph.successors();
    std::deque<int> q;
    for (size_t i = 0; i < n; ++i)
        if (indeg[i] == 0)
            q.push_back(static_cast<int>(i));
    size_t seen = 0;
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        ++seen;
        for (int v : succ[static_cast<size_t>(u)])
            if (--indeg[static_cast<size_t>(v)] == 0)
                q.push_back(v);
    }
    if (seen != n)
        throw SpecError("graph has a cycle");
}

} // namespace tzsim
