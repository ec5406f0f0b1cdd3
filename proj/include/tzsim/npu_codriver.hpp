//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "tzsim/common.hpp"

namespace tzsim::npu {

/// TrustZone configuration bits the TEE driver flips during a world switch.
struct TzRegisters {
    bool npu_mmio_secure = false;     // TZPC: MMIO visible to TEE only
    bool npu_irq_to_tee = false;      // GIC routing
    bool npu_may_access_secure = false; // TZASC DMA grant
};

enum class JobState { Created, Initialized, Issued, Launched, Complete, Rejected };
enum class JobOrigin { Tee, Ree };

const char* to_string(JobState s);

struct NpuJob {
    int id = 0;
    JobOrigin origin = JobOrigin::Tee;
    JobState state = JobState::Created;
    std::optional<std::uint64_t> seq; // assigned exactly once, at issue
    addr_t context_addr = 0;
    bytes_t context_bytes = 0;
    std::vector<addr_t> context_refs; // register commands, I/O PT, in/out buffers
    micros_t duration_us = 0;
    int launch_count = 0;
};

struct ShadowJob {
    int shadow_id = 0;
    int paired_job = 0; // carries no execution context
    bool consumed = false;
};

struct SeqCounter {
    std::uint64_t next_issue = 0;
    std::uint64_t next_execute = 0;
};

enum class NpuMode { NonSecureIdle, NonSecureBusy, SecureIdle, SecureBusy };

const char* to_string(NpuMode m);

struct DmaAccess {
    micros_t t = 0;
    addr_t addr = 0;
    bool target_secure = false;
    bool device_secure = false;
};

struct NpuDevice {
    NpuMode mode = NpuMode::NonSecureIdle;
    std::optional<int> current_job;
    std::vector<DmaAccess> dma_trace;
};

enum class LaunchVerdict { Launched, ReplayDetected, ReorderDetected, UnauthorizedJob, BadContextAddress };

const char* to_string(LaunchVerdict v);

/// Individually toggleable security checks, for the mutation harness.
struct Defenses {
    bool state_check = true;           // job must be Issued, never relaunched
    bool seq_check = true;             // monotonic execution order
    bool switch_ordering = true;       // TZASC grant strictly after drain
    bool contiguity_validation = true; // securemem Iago defense
    bool load_checksum = true;         // authenticated model chunks
};

struct ProtocolEvent {
    micros_t t = 0;
    std::string what;
    int job = -1;
};

struct QueueEntry {
    bool is_shadow = false;
    int id = 0; // shadow id or REE job id
};

/// REE control-plane + TEE data-plane co-driver pair sharing one NPU. Value
/// semantics so the attack explorer can fork states freely. Time is supplied
/// by the caller; the protocol machine only validates ordering and state.
class CoDriverWorld {
public:
    explicit CoDriverWorld(Defenses defenses = {}, bytes_t context_window_bytes = 64ull << 20,
                           addr_t context_window_base = 0x8'0000'0000ULL);

    // --- TEE driver ---------------------------------------------------------
    int tee_init_job(bytes_t context_bytes, micros_t t = 0);          // ContextOverflow
    int tee_init_job_with_refs(bytes_t context_bytes, std::vector<addr_t> refs, micros_t t = 0);
    int tee_issue_job(int job_id, micros_t t = 0);                    // InvalidState; returns shadow id
    void tee_take_over(micros_t t = 0);
    LaunchVerdict tee_launch_verified(int job_id, micros_t t = 0);
    void tee_release(micros_t t = 0);

    // --- REE driver ---------------------------------------------------------
    int ree_create_job(micros_t duration_us);
    void ree_enqueue(int ree_job_id, micros_t t = 0);

    struct DispatchResult {
        bool did_work = false;
        bool launched_secure = false;
        bool launched_nonsecure = false;
        int job = -1;
        LaunchVerdict verdict = LaunchVerdict::Launched;
    };
    /// Honest scheduler: pops the queue head. Secure shadows trigger
    /// take-over and verified launch of the paired job.
    DispatchResult ree_schedule_next(micros_t t = 0);
    /// Adversarial dispatch of an arbitrary queue position, a consumed shadow
    /// (replay) or a fabricated shadow (arbitrary launch).
    DispatchResult ree_dispatch_at(size_t queue_pos, micros_t t = 0);
    DispatchResult ree_dispatch_shadow_again(int shadow_id, micros_t t = 0);
    DispatchResult ree_dispatch_fabricated(int target_job_id, micros_t t = 0);

    // --- device -------------------------------------------------------------
    void nonsecure_complete(micros_t t = 0); // finishes the running REE job
    void secure_complete(micros_t t = 0);    // secure interrupt -> release

    // --- accessors ----------------------------------------------------------
    const TzRegisters& registers() const { return regs_; }
    const NpuDevice& device() const { return device_; }
    const SeqCounter& counter() const { return counter_; }
    const std::deque<QueueEntry>& queue() const { return queue_; }
    const std::vector<NpuJob>& jobs() const { return jobs_; }
    const NpuJob& job(int id) const { return jobs_.at(static_cast<size_t>(id)); }
    const std::vector<ShadowJob>& shadows() const { return shadows_; }
    const std::vector<ProtocolEvent>& events() const { return events_; }
    bool takeover_pending() const { return takeover_pending_; }

    // Ground-truth monitor, independent of the defense toggles.
    bool monitor_s2_launch_violation() const { return s2_flag_; }
    bool monitor_s3_grant_while_nonsecure_busy() const { return s3_flag_; }

    const Defenses& defenses() const { return defenses_; }
    void set_event_recording(bool on) { record_events_ = on; }

private:
    DispatchResult dispatch_shadow(int shadow_id, micros_t t, bool fabricated, int fabricated_job);
    void finish_take_over(micros_t t);
    void event(micros_t t, const std::string& what, int job = -1);
    bool context_addr_allowed(const NpuJob& j) const;

    Defenses defenses_;
    TzRegisters regs_;
    NpuDevice device_;
    SeqCounter counter_;
    std::vector<NpuJob> jobs_;
    std::vector<ShadowJob> shadows_;
    std::deque<QueueEntry> queue_;
    std::vector<ProtocolEvent> events_;

    addr_t ctx_base_;
    bytes_t ctx_capacity_;
    bytes_t ctx_used_ = 0;

    bool takeover_pending_ = false;
    std::optional<int> pending_job_; // paired job of the in-flight shadow
    bool s2_flag_ = false;
    bool s3_flag_ = false;
    bool record_events_ = true;
};

// --- exhaustive adversarial exploration -------------------------------------

struct AttackConfig {
    int tee_jobs = 3;
    int ree_jobs = 2;
    int depth = 12;
    Defenses defenses;
};

struct Violation {
    std::string predicate; // S1..S5
    std::string description;
    std::vector<std::string> trace; // minimal action sequence (BFS order)
};

struct ExploreStats {
    std::size_t states_visited = 0;
    std::size_t actions_applied = 0;
};

/// Bounded exhaustive search over REE-adversary interleavings: dispatch
/// reordering, shadow replay, fabricated launches, scheduling during world
/// switches, malicious CMA replies and corrupted load chunks. Reports one
/// entry per violated predicate with a shortest trace.
std::vector<Violation> attack_explore(const AttackConfig& cfg, ExploreStats* stats = nullptr);

/// Parses "state_check", "seq_check", "switch_ordering",
/// "contiguity_validation", "load_checksum"; flips that defense off.
Defenses disable_defense(const std::string& name);

} // namespace tzsim::npu
