//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/simcore.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <sstream>

namespace tzsim {

const char* to_string(LaneKind k) {
    switch (k) {
    case LaneKind::Cpu: return "cpu";
    case LaneKind::Io: return "io";
    case LaneKind::Npu: return "npu";
    }
    return "?";
}

namespace {

LaneKind lane_kind_of(OpKind k) {
    switch (k) {
    case OpKind::Load: return LaneKind::Io;
    case OpKind::NpuCompute: return LaneKind::Npu;
    default: return LaneKind::Cpu;
    }
}

enum class NodeState { Waiting, Blocked, Ready, Running, Done };

struct NodeRt {
    NodeState st = NodeState::Waiting;
    int preds_left = 0;
    micros_t ready_at = 0;
    int enabler = -1;
    int first_enabler = -1;
    bool started = false;
    std::vector<micros_t> chunk_dur;
    size_t next_chunk = 0;
    micros_t done_us = 0;
    micros_t total_us = 0;
};

struct LaneRt {
    LaneKind kind = LaneKind::Cpu;
    std::string label;
    int current = -1;
    micros_t busy_until = 0;
    std::vector<Interval> intervals;
    micros_t open_start = 0;
    bool open_resume = false;
};

class Engine {
public:
    Engine(const ExtendedGraph& g, const HardwareModel& hw, const PrefillOptions& opt,
           SecureMemoryState& mem)
        : g_(g), hw_(hw), opt_(opt), mem_(mem), succ_(g.successors()) {}

    Timeline run() {
        setup();
        loop();
        return finalize();
    }

private:
    void setup() {
        hw_.validate();
        validate_dag(g_);
        for (int cg : g_.cached)
            if (!mem_.group_resident(cg) || !mem_.group_protected(cg))
                throw SpecError("memory state inconsistent with cached group " + std::to_string(cg));

        rt_.resize(g_.nodes.size());
        for (const auto& n : g_.nodes) {
            auto& r = rt_[static_cast<size_t>(n.id)];
            r.preds_left = static_cast<int>(n.preds.size());
        }
        group_has_decrypt_.assign(g_.groups.size(), false);
        alloc_done_.assign(g_.groups.size(), true); // cached or absent groups count as done
        for (const auto& n : g_.nodes) {
            if (n.kind == OpKind::Decrypt)
                group_has_decrypt_[static_cast<size_t>(*n.group)] = true;
            if (n.kind == OpKind::Alloc)
                alloc_done_[static_cast<size_t>(*n.group)] = false;
        }

        for (int i = 0; i < hw_.cpu_lanes; ++i)
            lanes_.push_back({LaneKind::Cpu, "cpu" + std::to_string(i)});
        lanes_.push_back({LaneKind::Io, "io"});
        lanes_.push_back({LaneKind::Npu, "npu"});

        t_ = opt_.init_cost_us;
        mem_.set_clock(&t_);
        memtrace_start_ = mem_.trace().size();

        for (const auto& n : g_.nodes)
            if (rt_[static_cast<size_t>(n.id)].preds_left == 0)
                make_ready(n.id, t_, -1);
    }

    bool gate_open(int id) const {
        const Node& n = g_.node(id);
        // Protecting a group's span requires every earlier allocation to have
        // finished migrating; only visible with several CPU lanes.
        if (n.kind != OpKind::Decrypt)
            return true;
        for (int gi = 0; gi <= *n.group; ++gi)
            if (!alloc_done_[static_cast<size_t>(gi)])
                return false;
        return true;
    }

    void make_ready(int id, micros_t at, int enabler) {
        auto& r = rt_[static_cast<size_t>(id)];
        if (!gate_open(id)) {
            r.st = NodeState::Blocked;
            r.enabler = enabler;
            return;
        }
        r.st = NodeState::Ready;
        r.ready_at = at;
        r.enabler = enabler;
        if (r.first_enabler == -1)
            r.first_enabler = enabler;
        ready_log_.push_back({id, at, enabler});
    }

    ReadyQueue build_queue() const {
        ReadyQueue q;
        for (const auto& n : g_.nodes) {
            const auto& r = rt_[static_cast<size_t>(n.id)];
            if (r.st != NodeState::Ready)
                continue;
            ReadyEntry e{n.id, r.ready_at};
            switch (lane_kind_of(n.kind)) {
            case LaneKind::Cpu: q.cpu.push_back(e); break;
            case LaneKind::Io: q.io.push_back(e); break;
            case LaneKind::Npu: q.npu.push_back(e); break;
            }
        }
        return q;
    }

    void resolve_durations(const Node& n, NodeRt& r) {
        micros_t total = 0;
        switch (n.kind) {
        case OpKind::Alloc: {
            total = mem_.claim_group(*n.group, n.bytes, hw_);
            if (g_.alloc_costs_annotated && total != n.duration_us)
                throw Error("annotated alloc cost disagrees with memory model for group " +
                            std::to_string(*n.group));
            break;
        }
        case OpKind::Load:
            total = load_duration(n.bytes, hw_);
            break;
        case OpKind::Decrypt:
            total = decrypt_duration(n.bytes, hw_);
            mem_.protect_group(*n.group);
            break;
        default:
            total = n.duration_us;
        }
        r.total_us = total;
        if (n.chunks.empty()) {
            r.chunk_dur = {total};
        } else {
            Node tmp = n;
            tmp.duration_us = total;
            r.chunk_dur = chunk_durations(tmp);
        }
    }

    void start_on(LaneRt& lane, int id) {
        auto& r = rt_[static_cast<size_t>(id)];
        if (!r.started) {
            resolve_durations(g_.node(id), r);
            r.started = true;
        }
        lane.current = id;
        lane.busy_until = t_ + r.chunk_dur[r.next_chunk];
        lane.open_start = t_;
        lane.open_resume = r.done_us > 0;
        r.st = NodeState::Running;
    }

    void close_interval(LaneRt& lane, micros_t end, bool preempted) {
        if (end > lane.open_start) {
            Interval iv{lane.current, lane.open_start, end, lane.open_resume, preempted};
            lane.intervals.push_back(iv);
        }
        lane.current = -1;
    }

    void on_node_complete(int id, micros_t at) {
        const Node& n = g_.node(id);
        auto& r = rt_[static_cast<size_t>(id)];
        r.st = NodeState::Done;
        ++done_count_;

        if (n.kind == OpKind::Alloc) {
            alloc_done_[static_cast<size_t>(*n.group)] = true;
            // Unblock decrypts waiting on the allocation prefix.
            for (const auto& m : g_.nodes) {
                auto& mr = rt_[static_cast<size_t>(m.id)];
                if (mr.st == NodeState::Blocked && mr.preds_left == 0 && gate_open(m.id))
                    make_ready(m.id, at, id);
            }
        } else if (n.kind == OpKind::Load) {
            mem_.mark_group_loaded(*n.group);
            if (!group_has_decrypt_[static_cast<size_t>(*n.group)]) {
                // Plaintext-load baseline: no decryption stage follows.
                mem_.protect_group(*n.group);
                mem_.mark_group_plaintext(*n.group);
            }
        } else if (n.kind == OpKind::Decrypt) {
            mem_.mark_group_plaintext(*n.group);
        }

        for (int s : succ_[static_cast<size_t>(id)]) {
            auto& sr = rt_[static_cast<size_t>(s)];
            if (--sr.preds_left == 0)
                make_ready(s, at, id);
            else if (sr.preds_left < 0)
                throw Error("predecessor underflow");
        }
    }

    void schedule_pass() {
        while (true) {
            bool assigned = false;
            ReadyQueue q = build_queue();
            for (auto& lane : lanes_) {
                if (lane.current != -1)
                    continue;
                std::optional<int> pick;
                switch (lane.kind) {
                case LaneKind::Cpu: pick = cpu_pick(q, g_, opt_.policy); break;
                case LaneKind::Io: pick = io_pick(q, g_, opt_.policy); break;
                case LaneKind::Npu: pick = npu_pick(q, g_, opt_.policy); break;
                }
                if (!pick)
                    continue;
                start_on(lane, *pick);
                assigned = true;
                q = build_queue();
            }
            if (!assigned)
                break;
        }
    }

    void loop() {
        const size_t total = g_.nodes.size();
        while (done_count_ < total) {
            schedule_pass();

            micros_t next = std::numeric_limits<micros_t>::max();
            for (const auto& lane : lanes_)
                if (lane.current != -1)
                    next = std::min(next, lane.busy_until);
            if (next == std::numeric_limits<micros_t>::max())
                throw DeadlockError("ready set empty with " +
                                    std::to_string(total - done_count_) +
                                    " operators outstanding");
            t_ = next;

            // Chunk completions at this instant, ascending node index; node
            // completions first so newly ready work is visible to the
            // preemption decisions taken at micro-op boundaries.
            std::vector<std::pair<int, size_t>> finals, boundaries; // (node, lane idx)
            for (size_t li = 0; li < lanes_.size(); ++li) {
                auto& lane = lanes_[li];
                if (lane.current == -1 || lane.busy_until != t_)
                    continue;
                auto& r = rt_[static_cast<size_t>(lane.current)];
                if (r.next_chunk + 1 == r.chunk_dur.size())
                    finals.emplace_back(lane.current, li);
                else
                    boundaries.emplace_back(lane.current, li);
            }
            auto by_node = [](const auto& a, const auto& b) { return a.first < b.first; };
            std::sort(finals.begin(), finals.end(), by_node);
            std::sort(boundaries.begin(), boundaries.end(), by_node);

            for (auto [id, li] : finals) {
                auto& lane = lanes_[li];
                auto& r = rt_[static_cast<size_t>(id)];
                r.done_us += r.chunk_dur[r.next_chunk];
                r.next_chunk += 1;
                close_interval(lane, t_, false);
                on_node_complete(id, t_);
            }
            for (auto [id, li] : boundaries) {
                auto& lane = lanes_[li];
                auto& r = rt_[static_cast<size_t>(id)];
                r.done_us += r.chunk_dur[r.next_chunk];
                r.next_chunk += 1;
                ReadyQueue q = build_queue();
                if (preemption_decision(id, q, g_, opt_.policy) ==
                    PreemptDecision::PreemptAtBoundary) {
                    close_interval(lane, t_, true);
                    r.st = NodeState::Ready;
                    r.ready_at = t_;
                } else {
                    lane.busy_until = t_ + r.chunk_dur[r.next_chunk];
                }
            }
        }
    }

    Timeline finalize() {
        Timeline tl;
        tl.epoch = opt_.init_cost_us;
        if (opt_.init_cost_us > 0)
            tl.kind_busy_us["init"] = opt_.init_cost_us;
        micros_t prefill_end = tl.epoch;
        for (auto& lane : lanes_) {
            LaneTimeline lt;
            lt.kind = lane.kind;
            lt.label = lane.label;
            lt.intervals = std::move(lane.intervals);
            for (const auto& iv : lt.intervals)
                tl.kind_busy_us[to_string(g_.node(iv.node).kind)] += iv.end - iv.start;
            tl.lanes.push_back(std::move(lt));
        }
        for (const auto& n : g_.nodes)
            if (is_compute(n.kind))
                prefill_end = std::max(prefill_end, node_end(n.id));
        tl.prefill_end = prefill_end;
        tl.ttft = prefill_end;
        tl.ready_log = std::move(ready_log_);
        tl.memtrace.assign(mem_.trace().begin() + static_cast<std::ptrdiff_t>(memtrace_start_),
                           mem_.trace().end());
        mem_.set_clock(nullptr);
        return tl;
    }

    micros_t node_end(int id) const {
        micros_t end = 0;
        for (const auto& lane : lanes_)
            for (const auto& iv : lane.intervals)
                if (iv.node == id)
                    end = std::max(end, iv.end);
        return end;
    }

    const ExtendedGraph& g_;
    HardwareModel hw_;
    PrefillOptions opt_;
    SecureMemoryState& mem_;
    std::vector<std::vector<int>> succ_;
    std::vector<NodeRt> rt_;
    std::vector<LaneRt> lanes_;
    std::vector<ReadyRecord> ready_log_;
    std::vector<bool> group_has_decrypt_;
    std::vector<bool> alloc_done_;
    size_t done_count_ = 0;
    size_t memtrace_start_ = 0;
    micros_t t_ = 0;
};

} // namespace

Timeline run_prefill(const ExtendedGraph& graph, const HardwareModel& hw, PolicyKind policy,
                     SecureMemoryState& memory) {
    PrefillOptions opt;
    opt.policy = policy;
    opt.init_cost_us = hw.checkpoint_restore_us;
    return run_prefill(graph, hw, opt, memory);
}

Timeline run_prefill(const ExtendedGraph& graph, const HardwareModel& hw,
                     const PrefillOptions& opt, SecureMemoryState& memory) {
    if (opt.policy == PolicyKind::BruteForceOptimal)
        throw SpecError("run_prefill does not execute the brute-force policy; "
                        "use brute_force_optimal");
    return Engine(graph, hw, opt, memory).run();
}

std::vector<std::string> Timeline::trace_lines(const ExtendedGraph& graph) const {
    std::vector<std::string> out;
    for (const auto& lane : lanes) {
        for (const auto& iv : lane.intervals) {
            const Node& n = graph.node(iv.node);
            std::ostringstream os;
            os << lane.label << ' ' << n.id << ' ' << to_string(n.kind) << ' '
               << (n.group ? std::to_string(*n.group) : std::string("-")) << ' ' << iv.start
               << ' ' << iv.end;
            out.push_back(os.str());
        }
    }
    return out;
}

BubbleReport detect_bubbles(const Timeline& t, const ExtendedGraph& graph) {
    BubbleReport report;
    std::vector<int> enabler_of(graph.nodes.size(), -1);
    for (const auto& r : t.ready_log)
        if (enabler_of[static_cast<size_t>(r.node)] == -1)
            enabler_of[static_cast<size_t>(r.node)] = r.enabler;

    for (const auto& lane : t.lanes) {
        micros_t prev_end = t.epoch;
        for (const auto& iv : lane.intervals) {
            if (iv.start > prev_end) {
                Bubble b;
                b.lane = lane.label;
                b.start = prev_end;
                b.end = iv.start;
                b.blocked_node = iv.node;
                b.blocking_pred = iv.resume ? -1 : enabler_of[static_cast<size_t>(iv.node)];
                report.bubbles.push_back(b);
            }
            prev_end = std::max(prev_end, iv.end);
        }
    }
    return report;
}

std::vector<std::string> BubbleReport::lines(const ExtendedGraph& graph) const {
    std::vector<std::string> out;
    for (const auto& b : bubbles) {
        std::ostringstream os;
        os << b.lane << ' ' << b.start << ' ' << b.end << " blocked=" << b.blocked_node << '('
           << graph.node(b.blocked_node).label << ')';
        if (b.blocking_pred >= 0)
            os << " cause=" << b.blocking_pred << '(' << graph.node(b.blocking_pred).label << ')';
        else
            os << " cause=" << (b.blocking_pred == -1 ? "resume" : "source");
        out.push_back(os.str());
    }
    return out;
}

DecodeResult run_decoding(const ModelSpec& spec, const HardwareModel& hw, int tokens,
                          bool npu_sharing) {
    return run_decoding(spec, hw, tokens, npu_sharing, nullptr, nullptr);
}

DecodeResult run_decoding(const ModelSpec& spec, const HardwareModel& hw, int tokens,
                          bool npu_sharing, npu::CoDriverWorld* world, SecureMemoryState* memory) {
    GraphOptions opt;
    opt.bucket = 1; // single-token decoding bucket
    ComputationGraph g = build_graph(spec, opt);

    npu::CoDriverWorld local_world;
    if (!world)
        world = &local_world;

    DecodeResult res;
    micros_t t = 0;
    for (int tok = 0; tok < tokens; ++tok) {
        for (const auto& op : g.ops) {
            if (op.hw == Hw::Cpu) {
                t += op.duration_us;
                continue;
            }
            if (!npu_sharing) {
                t += op.duration_us;
                continue;
            }
            // Secure NPU job through the co-driver: shadow job, take-over,
            // verified launch, completion, release.
            int job = world->tee_init_job(4096, t);
            world->tee_issue_job(job, t);
            t += hw.npu_world_switch_us;
            auto dispatch = world->ree_schedule_next(t);
            if (!dispatch.launched_secure)
                throw InvalidState("secure decode job failed to launch: " +
                                   std::string(npu::to_string(dispatch.verdict)));
            t += op.duration_us;
            world->secure_complete(t);
            t += hw.npu_world_switch_us;
            res.switch_us += 2 * hw.npu_world_switch_us;
            res.secure_jobs += 1;
        }
        if (memory && spec.kv_bytes_per_token > 0) {
            memory->extend_allocated(memory->working_region(), spec.kv_bytes_per_token,
                                     memory->working_cma(), hw);
            memory->extend_protected(memory->working_region(),
                                     memory->working_region().allocated_watermark -
                                         memory->working_region().protected_watermark);
        }
    }
    res.total_us = t;
    if (t > 0) {
        res.tokens_per_second = static_cast<double>(tokens) * 1e6 / static_cast<double>(t);
        res.switch_overhead_fraction =
            static_cast<double>(res.switch_us) / static_cast<double>(t);
    }
    return res;
}

} // namespace tzsim
