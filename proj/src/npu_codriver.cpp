//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/npu_codriver.hpp"

#include <algorithm>
#include <deque>
#include <unordered_set>

namespace tzsim::npu {

const char* to_string(JobState s) {
    switch (s) {
    case JobState::Created: return "Created";
    case JobState::Initialized: return "Initialized";
    case JobState::Issued: return "Issued";
    case JobState::Launched: return "Launched";
    case JobState::Complete: return "Complete";
    case JobState::Rejected: return "Rejected";
    }
    return "?";
}

const char* to_string(NpuMode m) {
    switch (m) {
    case NpuMode::NonSecureIdle: return "NonSecureIdle";
    case NpuMode::NonSecureBusy: return "NonSecureBusy";
    case NpuMode::SecureIdle: return "SecureIdle";
    case NpuMode::SecureBusy: return "SecureBusy";
    }
    return "?";
}

const char* to_string(LaunchVerdict v) {
    switch (v) {
    case LaunchVerdict::Launched: return "Launched";
    case LaunchVerdict::ReplayDetected: return "ReplayDetected";
    case LaunchVerdict::ReorderDetected: return "ReorderDetected";
    case LaunchVerdict::UnauthorizedJob: return "UnauthorizedJob";
    case LaunchVerdict::BadContextAddress: return "BadContextAddress";
    }
    return "?";
}

namespace {
// Default data windows the NPU may touch: job contexts plus the parameter
// and working TZASC regions.
constexpr addr_t kParamWindowBase = 0x1'0000'0000ULL;
constexpr bytes_t kParamWindowBytes = 12'000'000'000ULL;
constexpr addr_t kWorkingWindowBase = 0x4'0000'0000ULL;
constexpr bytes_t kWorkingWindowBytes = 2'000'000'000ULL;
} // namespace

CoDriverWorld::CoDriverWorld(Defenses defenses, bytes_t context_window_bytes,
                             addr_t context_window_base)
    : defenses_(defenses), ctx_base_(context_window_base), ctx_capacity_(context_window_bytes) {}

void CoDriverWorld::event(micros_t t, const std::string& what, int job) {
    if (record_events_)
        events_.push_back({t, what, job});
}

int CoDriverWorld::tee_init_job(bytes_t context_bytes, micros_t t) {
    if (ctx_used_ + context_bytes > ctx_capacity_)
        throw ContextOverflow("job context window full");
    NpuJob j;
    j.id = static_cast<int>(jobs_.size());
    j.origin = JobOrigin::Tee;
    j.state = JobState::Initialized;
    j.context_addr = ctx_base_ + ctx_used_;
    j.context_bytes = context_bytes;
    // Register commands, I/O page table and in/out buffers all live inside
    // the allowlisted windows.
    j.context_refs = {j.context_addr, kParamWindowBase, kWorkingWindowBase};
    ctx_used_ += context_bytes;
    jobs_.push_back(j);
    event(t, "tee_init_job", j.id);
    return j.id;
}

int CoDriverWorld::tee_init_job_with_refs(bytes_t context_bytes, std::vector<addr_t> refs,
                                          micros_t t) {
    int id = tee_init_job(context_bytes, t);
    jobs_[static_cast<size_t>(id)].context_refs = std::move(refs);
    return id;
}

int CoDriverWorld::tee_issue_job(int job_id, micros_t t) {
    if (job_id < 0 || job_id >= static_cast<int>(jobs_.size()))
        throw InvalidState("issue of unknown job " + std::to_string(job_id));
    NpuJob& j = jobs_[static_cast<size_t>(job_id)];
    if (j.state != JobState::Initialized)
        throw InvalidState("job " + std::to_string(job_id) + " is " + to_string(j.state) +
                           ", expected Initialized");
    j.seq = counter_.next_issue++;
    j.state = JobState::Issued;
    ShadowJob s;
    s.shadow_id = static_cast<int>(shadows_.size());
    s.paired_job = job_id;
    shadows_.push_back(s);
    queue_.push_back({true, s.shadow_id});
    event(t, "tee_issue_job seq=" + std::to_string(*j.seq), job_id);
    return s.shadow_id;
}

bool CoDriverWorld::context_addr_allowed(const NpuJob& j) const {
    auto inside = [](addr_t a, addr_t base, bytes_t size) { return a >= base && a < base + size; };
    if (!inside(j.context_addr, ctx_base_, ctx_capacity_))
        return false;
    for (addr_t a : j.context_refs) {
        bool ok = inside(a, ctx_base_, ctx_capacity_) ||
                  inside(a, kParamWindowBase, kParamWindowBytes) ||
                  inside(a, kWorkingWindowBase, kWorkingWindowBytes);
        if (!ok)
            return false;
    }
    return true;
}

void CoDriverWorld::tee_take_over(micros_t t) {
    // Step 1: isolate MMIO and route interrupts to the TEE. From here no new
    // non-secure job can be launched.
    regs_.npu_mmio_secure = true;
    regs_.npu_irq_to_tee = true;
    event(t, "mmio_secured");
    event(t, "irq_routed_tee");

    if (!defenses_.switch_ordering) {
        // Mutated ordering: grant DMA before draining the device.
        regs_.npu_may_access_secure = true;
        event(t, "tzasc_granted");
        if (device_.mode == NpuMode::NonSecureBusy) {
            s3_flag_ = true;
            if (record_events_)
                device_.dma_trace.push_back({t, kParamWindowBase, true, false});
            takeover_pending_ = true;
            event(t, "takeover_wait");
            return;
        }
        device_.mode = NpuMode::SecureIdle;
        return;
    }

    // Step 2: wait until any previously launched non-secure job completes.
    if (device_.mode == NpuMode::NonSecureBusy) {
        takeover_pending_ = true;
        event(t, "takeover_wait");
        return;
    }
    // Step 3: only now grant the NPU access to secure memory.
    regs_.npu_may_access_secure = true;
    event(t, "tzasc_granted");
    device_.mode = NpuMode::SecureIdle;
}

void CoDriverWorld::finish_take_over(micros_t t) {
    takeover_pending_ = false;
    if (defenses_.switch_ordering) {
        regs_.npu_may_access_secure = true;
        event(t, "tzasc_granted");
    }
    device_.mode = NpuMode::SecureIdle;
    if (pending_job_) {
        int job = *pending_job_;
        pending_job_.reset();
        DispatchResult r;
        r.verdict = tee_launch_verified(job, t);
        (void)r;
    }
}

LaunchVerdict CoDriverWorld::tee_launch_verified(int job_id, micros_t t) {
    bool exists = job_id >= 0 && job_id < static_cast<int>(jobs_.size());

    // Ground truth, independent of which defenses are enabled.
    bool valid_state = exists && jobs_[static_cast<size_t>(job_id)].state == JobState::Issued &&
                       jobs_[static_cast<size_t>(job_id)].launch_count == 0;
    bool valid_seq = exists && jobs_[static_cast<size_t>(job_id)].seq.has_value() &&
                     *jobs_[static_cast<size_t>(job_id)].seq == counter_.next_execute;
    bool valid_ctx = exists && context_addr_allowed(jobs_[static_cast<size_t>(job_id)]);

    auto reject = [&](LaunchVerdict v) {
        event(t, std::string("launch_rejected ") + to_string(v), job_id);
        if (exists) {
            NpuJob& j = jobs_[static_cast<size_t>(job_id)];
            if (j.state == JobState::Issued || j.state == JobState::Initialized)
                j.state = JobState::Rejected;
        }
        // Return the device to non-secure mode.
        regs_.npu_may_access_secure = false;
        regs_.npu_irq_to_tee = false;
        regs_.npu_mmio_secure = false;
        device_.mode = NpuMode::NonSecureIdle;
        return v;
    };

    if (!exists)
        return reject(LaunchVerdict::UnauthorizedJob);
    NpuJob& j = jobs_[static_cast<size_t>(job_id)];

    if (defenses_.state_check && j.state != JobState::Issued) {
        if (j.state == JobState::Launched || j.state == JobState::Complete)
            return reject(LaunchVerdict::ReplayDetected);
        return reject(LaunchVerdict::UnauthorizedJob);
    }
    // An unissued record carries whatever sits in the seq field; model that
    // as zero rather than crashing, since a bypassed state check would read
    // uninitialized memory.
    std::uint64_t effective_seq = j.seq.value_or(0);
    if (defenses_.seq_check && effective_seq != counter_.next_execute)
        return reject(LaunchVerdict::ReorderDetected);
    if (!valid_ctx)
        return reject(LaunchVerdict::BadContextAddress);

    if (!(valid_state && valid_seq && valid_ctx))
        s2_flag_ = true; // launched past a check that should have fired

    j.state = JobState::Launched;
    j.launch_count += 1;
    counter_.next_execute += 1;
    device_.mode = NpuMode::SecureBusy;
    device_.current_job = job_id;
    if (record_events_) {
        for (addr_t a : j.context_refs)
            device_.dma_trace.push_back({t, a, true, true});
    }
    event(t, "launched", job_id);
    return LaunchVerdict::Launched;
}

void CoDriverWorld::tee_release(micros_t t) {
    // Reverse order of the take-over.
    regs_.npu_may_access_secure = false;
    event(t, "tzasc_revoked");
    regs_.npu_irq_to_tee = false;
    event(t, "irq_routed_ree");
    regs_.npu_mmio_secure = false;
    event(t, "mmio_restored");
    device_.mode = NpuMode::NonSecureIdle;
    device_.current_job.reset();
    event(t, "shadow_complete");
}

int CoDriverWorld::ree_create_job(micros_t duration_us) {
    NpuJob j;
    j.id = static_cast<int>(jobs_.size());
    j.origin = JobOrigin::Ree;
    j.state = JobState::Created;
    j.duration_us = duration_us;
    jobs_.push_back(j);
    return j.id;
}

void CoDriverWorld::ree_enqueue(int ree_job_id, micros_t t) {
    queue_.push_back({false, ree_job_id});
    event(t, "ree_enqueue", ree_job_id);
}

CoDriverWorld::DispatchResult CoDriverWorld::ree_schedule_next(micros_t t) {
    if (queue_.empty())
        return {};
    return ree_dispatch_at(0, t);
}

CoDriverWorld::DispatchResult CoDriverWorld::ree_dispatch_at(size_t queue_pos, micros_t t) {
    DispatchResult r;
    if (queue_pos >= queue_.size())
        return r;
    QueueEntry entry = queue_[queue_pos];
    queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(queue_pos));
    if (!entry.is_shadow) {
        // Non-secure launch is a plain MMIO write; it only works while the
        // device is non-secure and idle.
        if (regs_.npu_mmio_secure || device_.mode != NpuMode::NonSecureIdle)
            return r;
        NpuJob& j = jobs_[static_cast<size_t>(entry.id)];
        j.state = JobState::Launched;
        j.launch_count += 1;
        device_.mode = NpuMode::NonSecureBusy;
        device_.current_job = entry.id;
        if (record_events_)
            device_.dma_trace.push_back({t, 0x9'0000'0000ULL + static_cast<addr_t>(entry.id),
                                         regs_.npu_may_access_secure, false});
        event(t, "ree_launch", entry.id);
        r.did_work = true;
        r.launched_nonsecure = true;
        r.job = entry.id;
        return r;
    }
    ShadowJob& s = shadows_[static_cast<size_t>(entry.id)];
    s.consumed = true;
    return dispatch_shadow(entry.id, t, false, -1);
}

CoDriverWorld::DispatchResult CoDriverWorld::ree_dispatch_shadow_again(int shadow_id, micros_t t) {
    return dispatch_shadow(shadow_id, t, false, -1);
}

CoDriverWorld::DispatchResult CoDriverWorld::ree_dispatch_fabricated(int target_job_id, micros_t t) {
    return dispatch_shadow(-1, t, true, target_job_id);
}

CoDriverWorld::DispatchResult CoDriverWorld::dispatch_shadow(int shadow_id, micros_t t,
                                                             bool fabricated, int fabricated_job) {
    DispatchResult r;
    if (device_.mode == NpuMode::SecureBusy || takeover_pending_)
        return r; // TEE driver is already mid-episode
    int paired = fabricated ? fabricated_job : shadows_.at(static_cast<size_t>(shadow_id)).paired_job;
    event(t, fabricated ? "dispatch_fabricated" : "dispatch_shadow", paired);
    r.did_work = true;
    r.job = paired;
    if (device_.mode != NpuMode::SecureIdle) {
        pending_job_ = paired;
        tee_take_over(t);
        if (takeover_pending_)
            return r; // launch happens when the non-secure job drains
        pending_job_.reset();
    }
    r.verdict = tee_launch_verified(paired, t);
    r.launched_secure = r.verdict == LaunchVerdict::Launched;
    return r;
}

void CoDriverWorld::nonsecure_complete(micros_t t) {
    if (device_.mode != NpuMode::NonSecureBusy)
        throw InvalidState("no non-secure job running");
    NpuJob& j = jobs_[static_cast<size_t>(*device_.current_job)];
    j.state = JobState::Complete;
    device_.mode = NpuMode::NonSecureIdle;
    device_.current_job.reset();
    event(t, "nonsecure_complete", j.id);
    if (takeover_pending_)
        finish_take_over(t);
}

void CoDriverWorld::secure_complete(micros_t t) {
    if (device_.mode != NpuMode::SecureBusy)
        throw InvalidState("no secure job running");
    NpuJob& j = jobs_[static_cast<size_t>(*device_.current_job)];
    j.state = JobState::Complete;
    event(t, "secure_irq", j.id);
    // Execution contexts are transient; serial completion frees in order.
    if (ctx_used_ >= j.context_bytes && j.context_addr + j.context_bytes == ctx_base_ + ctx_used_)
        ctx_used_ -= j.context_bytes;
    tee_release(t);
}

Defenses disable_defense(const std::string& name) {
    Defenses d;
    if (name == "state_check")
        d.state_check = false;
    else if (name == "seq_check")
        d.seq_check = false;
    else if (name == "switch_ordering")
        d.switch_ordering = false;
    else if (name == "contiguity_validation")
        d.contiguity_validation = false;
    else if (name == "load_checksum")
        d.load_checksum = false;
    else
        throw UnknownParameter("unknown defense: " + name);
    return d;
}

// ---------------------------------------------------------------------------
// Exhaustive adversarial exploration
// ---------------------------------------------------------------------------

namespace {

// Abstract view of the securemem and model-loading interfaces, enough to
// chase the Iago chains end to end.
struct MemModel {
    int extensions_done = 0;      // bounded number of region growth steps
    bool have_extension = false;  // allocated, awaiting load + decrypt
    bool ext_malicious = false;   // accepted from a non-adjacent CMA reply
    int chunk = 0;                // 0 none, 1 honest loaded, 2 tampered accepted
    bool plaintext_exposed = false;
    bool tainted_consumed = false;
};

struct AttackWorld {
    CoDriverWorld proto;
    MemModel mem;
    int tee_inited = 0;
    int tee_issued = 0;
    int ree_created = 0;

    explicit AttackWorld(const Defenses& d) : proto(d) { proto.set_event_recording(false); }
};

std::string encode(const AttackWorld& w) {
    std::string k;
    auto add = [&k](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i)
            k.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    const auto& p = w.proto;
    add(static_cast<std::uint64_t>(p.registers().npu_mmio_secure) |
            (static_cast<std::uint64_t>(p.registers().npu_irq_to_tee) << 1) |
            (static_cast<std::uint64_t>(p.registers().npu_may_access_secure) << 2) |
            (static_cast<std::uint64_t>(p.takeover_pending()) << 3) |
            (static_cast<std::uint64_t>(p.monitor_s2_launch_violation()) << 4) |
            (static_cast<std::uint64_t>(p.monitor_s3_grant_while_nonsecure_busy()) << 5),
        1);
    add(static_cast<std::uint64_t>(p.device().mode), 1);
    add(static_cast<std::uint64_t>(p.device().current_job.value_or(-1) + 1), 1);
    add(p.counter().next_issue, 1);
    add(p.counter().next_execute, 1);
    add(static_cast<std::uint64_t>(p.jobs().size()), 1);
    for (const auto& j : p.jobs()) {
        add(static_cast<std::uint64_t>(j.state), 1);
        add(static_cast<std::uint64_t>(j.launch_count > 1 ? 2 : j.launch_count), 1);
        add(j.seq ? *j.seq + 1 : 0, 1);
    }
    add(static_cast<std::uint64_t>(p.queue().size()), 1);
    for (const auto& e : p.queue()) {
        add(static_cast<std::uint64_t>(e.is_shadow), 1);
        add(static_cast<std::uint64_t>(e.id), 1);
    }
    add(static_cast<std::uint64_t>(p.shadows().size()), 1);
    for (const auto& s : p.shadows())
        add(static_cast<std::uint64_t>(s.consumed), 1);
    add(static_cast<std::uint64_t>(w.mem.extensions_done) |
            (static_cast<std::uint64_t>(w.mem.have_extension) << 4) |
            (static_cast<std::uint64_t>(w.mem.ext_malicious) << 5) |
            (static_cast<std::uint64_t>(w.mem.chunk) << 6),
        2);
    add(static_cast<std::uint64_t>(w.mem.plaintext_exposed) |
            (static_cast<std::uint64_t>(w.mem.tainted_consumed) << 1),
        1);
    add(static_cast<std::uint64_t>(w.tee_inited), 1);
    add(static_cast<std::uint64_t>(w.tee_issued), 1);
    add(static_cast<std::uint64_t>(w.ree_created), 1);
    return k;
}

struct PendingAction {
    std::string name;
    AttackWorld world; // world after the action
};

std::vector<PendingAction> expand(const AttackWorld& w, const AttackConfig& cfg) {
    std::vector<PendingAction> out;
    auto push = [&](const std::string& name, AttackWorld next) {
        out.push_back({name, std::move(next)});
    };
    const auto& p = w.proto;
    bool mid_episode = p.device().mode == NpuMode::SecureBusy || p.takeover_pending();

    if (w.tee_inited < cfg.tee_jobs) {
        AttackWorld n = w;
        n.proto.tee_init_job(4096);
        n.tee_inited += 1;
        push("ta_init", std::move(n));
    }
    if (w.tee_issued < w.tee_inited) {
        AttackWorld n = w;
        n.proto.tee_issue_job(n.tee_issued);
        n.tee_issued += 1;
        push("ta_issue", std::move(n));
    }
    if (w.ree_created < cfg.ree_jobs) {
        AttackWorld n = w;
        int id = n.proto.ree_create_job(100);
        n.proto.ree_enqueue(id);
        n.ree_created += 1;
        push("ree_enqueue", std::move(n));
    }
    for (size_t i = 0; i < p.queue().size(); ++i) {
        const auto& e = p.queue()[i];
        if (e.is_shadow) {
            if (mid_episode)
                continue;
        } else {
            if (p.registers().npu_mmio_secure || p.device().mode != NpuMode::NonSecureIdle)
                continue;
        }
        AttackWorld n = w;
        n.proto.ree_dispatch_at(i);
        push("dispatch[" + std::to_string(i) + (e.is_shadow ? ":shadow" : ":ree") + "]",
             std::move(n));
    }
    if (!mid_episode) {
        for (const auto& s : p.shadows()) {
            if (!s.consumed)
                continue;
            AttackWorld n = w;
            n.proto.ree_dispatch_shadow_again(s.shadow_id);
            push("replay_shadow[" + std::to_string(s.shadow_id) + "]", std::move(n));
        }
        for (int j = 0; j < cfg.tee_jobs; ++j) {
            AttackWorld n = w;
            n.proto.ree_dispatch_fabricated(j);
            push("fabricate[" + std::to_string(j) + "]", std::move(n));
        }
    }
    if (p.device().mode == NpuMode::NonSecureBusy) {
        AttackWorld n = w;
        n.proto.nonsecure_complete();
        push("nonsecure_complete", std::move(n));
    }
    if (p.device().mode == NpuMode::SecureBusy) {
        AttackWorld n = w;
        n.proto.secure_complete();
        push("secure_complete", std::move(n));
    }
    if (w.mem.extensions_done < 2 && !w.mem.have_extension) {
        {
            AttackWorld n = w;
            n.mem.extensions_done += 1;
            n.mem.have_extension = true;
            n.mem.ext_malicious = false;
            push("cma_extend_honest", std::move(n));
        }
        {
            AttackWorld n = w;
            n.mem.extensions_done += 1;
            if (cfg.defenses.contiguity_validation) {
                // Non-adjacent reply rejected; the slot is burned.
            } else {
                n.mem.have_extension = true;
                n.mem.ext_malicious = true;
            }
            push("cma_extend_malicious", std::move(n));
        }
    }
    if (w.mem.have_extension && w.mem.chunk == 0) {
        {
            AttackWorld n = w;
            n.mem.chunk = 1;
            push("load_chunk_honest", std::move(n));
        }
        {
            AttackWorld n = w;
            if (!cfg.defenses.load_checksum)
                n.mem.chunk = 2; // forged content slips through
            push("load_chunk_tampered", std::move(n));
        }
    }
    if (w.mem.chunk != 0) {
        AttackWorld n = w;
        if (n.mem.chunk == 2)
            n.mem.tainted_consumed = true;
        if (n.mem.ext_malicious)
            n.mem.plaintext_exposed = true; // decrypted into REE-visible pages
        n.mem.chunk = 0;
        n.mem.have_extension = false;
        push("tee_decrypt", std::move(n));
    }
    return out;
}

void check_predicates(const AttackWorld& w, const std::vector<std::string>& trace,
                      std::vector<Violation>& found, std::unordered_set<std::string>& seen) {
    auto report = [&](const std::string& pred, const std::string& desc) {
        if (!seen.insert(pred).second)
            return;
        found.push_back({pred, desc, trace});
    };
    if (w.mem.plaintext_exposed) {
        report("S1", "non-secure read of bytes believed protected succeeds");
        report("S4", "plaintext parameters observable outside the TEE");
    }
    if (w.proto.monitor_s2_launch_violation())
        report("S2", "job launched without passing verification");
    if (w.proto.monitor_s3_grant_while_nonsecure_busy())
        report("S3", "NPU holds secure-memory access while a non-secure job runs");
    if (w.mem.tainted_consumed)
        report("S5", "forged model content accepted by the loader");
}

} // namespace

std::vector<Violation> attack_explore(const AttackConfig& cfg, ExploreStats* stats) {
    if (cfg.tee_jobs > 3 || cfg.ree_jobs > 2)
        throw TooLarge("attack_explore supports at most 3 TEE and 2 REE jobs");

    std::vector<Violation> found;
    std::unordered_set<std::string> seen_predicates;
    std::unordered_set<std::string> visited;

    struct FrontierEntry {
        AttackWorld world;
        std::vector<std::string> trace;
        int depth;
    };

    std::deque<FrontierEntry> frontier;
    AttackWorld init(cfg.defenses);
    visited.insert(encode(init));
    check_predicates(init, {}, found, seen_predicates);
    frontier.push_back({std::move(init), {}, 0});

    std::size_t actions = 0;
    while (!frontier.empty()) {
        FrontierEntry cur = std::move(frontier.front());
        frontier.pop_front();
        if (cur.depth >= cfg.depth)
            continue;
        for (auto& next : expand(cur.world, cfg)) {
            ++actions;
            std::string key = encode(next.world);
            if (!visited.insert(std::move(key)).second)
                continue;
            auto trace = cur.trace;
            trace.push_back(next.name);
            check_predicates(next.world, trace, found, seen_predicates);
            frontier.push_back({std::move(next.world), std::move(trace), cur.depth + 1});
        }
    }
    if (stats) {
        stats->states_visited = visited.size();
        stats->actions_applied = actions;
    }
    return found;
}

} // namespace tzsim::npu
