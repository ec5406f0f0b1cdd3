//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <tuple>

namespace tzsim {

PolicyKind policy_from_string(const std::string& s) {
    if (s == "GreedyPriority")
        return PolicyKind::GreedyPriority;
    if (s == "GreedyPriorityNoPreempt")
        return PolicyKind::GreedyPriorityNoPreempt;
    if (s == "TopologicalFifo")
        return PolicyKind::TopologicalFifo;
    if (s == "BruteForceOptimal")
        return PolicyKind::BruteForceOptimal;
    throw SchemaError("unknown policy: " + s);
}

const char* to_string(PolicyKind p) {
    switch (p) {
    case PolicyKind::GreedyPriority: return "GreedyPriority";
    case PolicyKind::GreedyPriorityNoPreempt: return "GreedyPriorityNoPreempt";
    case PolicyKind::TopologicalFifo: return "TopologicalFifo";
    case PolicyKind::BruteForceOptimal: return "BruteForceOptimal";
    }
    return "?";
}

namespace {

// Priority key for restoration ops: earliest consuming compute op first,
// Alloc ahead of Decrypt on equal consumers, then group order.
std::tuple<int, int, int> restoration_key(const Node& n) {
    int kind_rank = n.kind == OpKind::Alloc ? 0 : 1;
    return {n.assoc, kind_rank, n.group.value_or(0)};
}

std::optional<int> fifo_pick(const std::vector<ReadyEntry>& entries) {
    const ReadyEntry* best = nullptr;
    for (const auto& e : entries)
        if (!best || std::tie(e.ready_at, e.node) < std::tie(best->ready_at, best->node))
            best = &e;
    if (!best)
        return std::nullopt;
    return best->node;
}

} // namespace

std::optional<int> cpu_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy) {
    if (policy == PolicyKind::TopologicalFifo)
        return fifo_pick(queue.cpu);

    std::optional<int> best_compute;
    std::optional<int> best_restore;
    for (const auto& e : queue.cpu) {
        const Node& n = graph.node(e.node);
        if (n.kind == OpKind::CpuCompute) {
            if (!best_compute || n.id < *best_compute)
                best_compute = n.id;
        } else {
            if (!best_restore ||
                restoration_key(n) < restoration_key(graph.node(*best_restore)))
                best_restore = n.id;
        }
    }
    if (best_compute)
        return best_compute;
    return best_restore;
}

std::optional<int> io_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy) {
    if (policy == PolicyKind::TopologicalFifo)
        return fifo_pick(queue.io);
    std::optional<int> best;
    for (const auto& e : queue.io) {
        const Node& n = graph.node(e.node);
        if (!best)
            best = n.id;
        else {
            const Node& b = graph.node(*best);
            if (std::tie(n.assoc, *n.group) < std::tie(b.assoc, *b.group))
                best = n.id;
        }
    }
    return best;
}

std::optional<int> npu_pick(const ReadyQueue& queue, const ExtendedGraph& graph, PolicyKind policy) {
    if (policy == PolicyKind::TopologicalFifo)
        return fifo_pick(queue.npu);
    std::optional<int> best;
    for (const auto& e : queue.npu)
        if (!best || e.node < *best)
            best = e.node;
    return best;
}

PreemptDecision preemption_decision(int running_node, const ReadyQueue& queue,
                                    const ExtendedGraph& graph, PolicyKind policy) {
    if (!policy_preempts(policy))
        return PreemptDecision::Continue;
    const Node& running = graph.node(running_node);
    if (running.kind != OpKind::Alloc && running.kind != OpKind::Decrypt)
        return PreemptDecision::Continue;
    for (const auto& e : queue.cpu) {
        const Node& n = graph.node(e.node);
        if (n.kind == OpKind::CpuCompute)
            return PreemptDecision::PreemptAtBoundary;
        if (n.assoc < running.assoc)
            return PreemptDecision::PreemptAtBoundary;
    }
    return PreemptDecision::Continue;
}

namespace {

enum class LaneClass { Cpu, Io, Npu };

LaneClass lane_class(OpKind k) {
    switch (k) {
    case OpKind::Load: return LaneClass::Io;
    case OpKind::NpuCompute: return LaneClass::Npu;
    default: return LaneClass::Cpu;
    }
}

struct Running {
    int node;
    micros_t end;
};

struct SearchState {
    micros_t t = 0;
    std::uint32_t completed = 0;
    std::vector<Running> running; // sorted by (end, node)
};

struct MemoEntry {
    micros_t additional = std::numeric_limits<micros_t>::max();
    int choice = -1; // node started at this decision point, -1 = time advance
};

class BruteForceSearch {
public:
    BruteForceSearch(const ExtendedGraph& graph, const HardwareModel& hw)
        : graph_(graph), hw_(hw), n_(static_cast<int>(graph.nodes.size())) {
        durations_.resize(static_cast<size_t>(n_));
        for (const auto& node : graph.nodes)
            durations_[static_cast<size_t>(node.id)] = node_duration_of(node);
        cpu_lanes_ = hw.cpu_lanes;
    }

    BruteForceResult run() {
        SearchState init;
        micros_t best = solve(init);
        BruteForceResult result;
        result.makespan = best;
        replay(init, result.schedule);
        return result;
    }

private:
    micros_t node_duration_of(const Node& node) const {
        switch (node.kind) {
        case OpKind::Load: return load_duration(node.bytes, hw_);
        case OpKind::Decrypt: return decrypt_duration(node.bytes, hw_);
        default: return node.duration_us;
        }
    }

    std::string key_of(const SearchState& s) const {
        std::string k;
        k.reserve(4 + s.running.size() * 12);
        k.append(reinterpret_cast<const char*>(&s.completed), 4);
        for (const auto& r : s.running) {
            micros_t rem = r.end - s.t;
            k.append(reinterpret_cast<const char*>(&r.node), 4);
            k.append(reinterpret_cast<const char*>(&rem), 8);
        }
        return k;
    }

    bool is_started(const SearchState& s, int node) const {
        if (s.completed & (1u << node))
            return true;
        for (const auto& r : s.running)
            if (r.node == node)
                return true;
        return false;
    }

    std::vector<int> ready_for(const SearchState& s, LaneClass cls) const {
        std::vector<int> out;
        for (const auto& node : graph_.nodes) {
            if (lane_class(node.kind) != cls || is_started(s, node.id))
                continue;
            bool ready = true;
            for (int p : node.preds)
                if (!(s.completed & (1u << p))) {
                    ready = false;
                    break;
                }
            if (ready)
                out.push_back(node.id);
        }
        return out;
    }

    int free_lanes(const SearchState& s, LaneClass cls) const {
        int total = cls == LaneClass::Cpu ? cpu_lanes_ : 1;
        int busy = 0;
        for (const auto& r : s.running)
            if (lane_class(graph_.node(r.node).kind) == cls)
                ++busy;
        return total - busy;
    }

    // Minimum additional time to complete everything from `s`.
    micros_t solve(const SearchState& s) {
        if (s.completed == (1u << n_) - 1 && s.running.empty())
            return 0;
        auto key = key_of(s);
        auto it = memo_.find(key);
        if (it != memo_.end())
            return it->second.additional;

        MemoEntry entry;
        // A non-delay schedule must start work whenever a lane is free and
        // something is ready; branch over which op gets the lane.
        for (LaneClass cls : {LaneClass::Cpu, LaneClass::Io, LaneClass::Npu}) {
            if (free_lanes(s, cls) <= 0)
                continue;
            auto ready = ready_for(s, cls);
            for (int node : ready) {
                SearchState next = s;
                next.running.push_back({node, s.t + durations_[static_cast<size_t>(node)]});
                std::sort(next.running.begin(), next.running.end(),
                          [](const Running& a, const Running& b) {
                              return std::tie(a.end, a.node) < std::tie(b.end, b.node);
                          });
                micros_t sub = solve(next);
                if (sub < entry.additional) {
                    entry.additional = sub;
                    entry.choice = node;
                }
            }
            if (!ready.empty())
                break; // all same-time combinations reachable via recursion
        }

        if (entry.choice < 0) {
            // Nothing startable: advance to the next completion.
            if (s.running.empty())
                throw DeadlockError("brute force: no runnable operator left");
            SearchState next = s;
            micros_t t2 = next.running.front().end;
            next.t = t2;
            while (!next.running.empty() && next.running.front().end == t2) {
                next.completed |= 1u << next.running.front().node;
                next.running.erase(next.running.begin());
            }
            entry.additional = (t2 - s.t) + solve(next);
        }

        memo_[std::move(key)] = entry;
        return entry.additional;
    }

    void replay(SearchState s, std::vector<std::tuple<int, OpKind, micros_t>>& out) {
        while (!(s.completed == (1u << n_) - 1 && s.running.empty())) {
            auto it = memo_.find(key_of(s));
            if (it == memo_.end())
                return; // should not happen
            int choice = it->second.choice;
            if (choice >= 0) {
                const Node& node = graph_.node(choice);
                out.emplace_back(choice, node.kind, s.t);
                s.running.push_back({choice, s.t + durations_[static_cast<size_t>(choice)]});
                std::sort(s.running.begin(), s.running.end(),
                          [](const Running& a, const Running& b) {
                              return std::tie(a.end, a.node) < std::tie(b.end, b.node);
                          });
            } else {
                micros_t t2 = s.running.front().end;
                s.t = t2;
                while (!s.running.empty() && s.running.front().end == t2) {
                    s.completed |= 1u << s.running.front().node;
                    s.running.erase(s.running.begin());
                }
            }
        }
    }

    const ExtendedGraph& graph_;
    const HardwareModel& hw_;
    int n_;
    int cpu_lanes_;
    std::vector<micros_t> durations_;
    std::map<std::string, MemoEntry> memo_;
};

} // namespace

BruteForceResult brute_force_optimal(const ExtendedGraph& graph, const HardwareModel& hw) {
    int count = static_cast<int>(graph.nodes.size());
    if (count > kBruteForceMaxOps)
        throw TooLarge("brute force accepts at most " + std::to_string(kBruteForceMaxOps) +
                       " operators, got " + std::to_string(count));
    if (count == 0)
        return {};
    return BruteForceSearch(graph, hw).run();
}

} // namespace tzsim
