//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tzsim/common.hpp"
#include "tzsim/graph.hpp"
#include "tzsim/hardware.hpp"

namespace tzsim {

enum class PageState : std::uint8_t { Free, MovableOccupied, TeeAllocated };

// Shadow content tracking, used by the zero-on-release check and the
// REE-visibility model.
enum class PageContent : std::uint8_t { Zeroed, ReeData, SecretPlaintext, Ciphertext };

struct CmaSpec {
    bytes_t region_bytes = 12'000'000'000ULL; // 12 GB carve-out of a 16 GB device
    bytes_t page_bytes = 4096;
    double occupied_fraction = 1.0; // REE memory pressure inside the region
    int threads = 1;                // migration worker threads
    addr_t base = 0x1'0000'0000ULL;
};

struct AllocReply {
    addr_t address = 0;
    micros_t migration_cost = 0;
};

/// Reserved contiguous region backing one TZASC window. TEE-owned pages are
/// kept as a single prefix run; movable pages are migrated out on demand.
class CmaRegion {
public:
    explicit CmaRegion(const CmaSpec& spec);

    /// Claims the next ceil(bytes/page) pages after the TEE prefix; the cost
    /// is the occupied bytes in that span over the migration throughput for
    /// `threads`. Throws OutOfRegion when the span does not fit.
    AllocReply allocate(bytes_t bytes, int threads, const HardwareModel& hw);

    /// Computes the allocate() reply without claiming pages.
    AllocReply peek_allocate(bytes_t bytes, int threads, const HardwareModel& hw) const;

    /// Returns pages from the end of the TEE prefix. The caller must have
    /// zeroed the span; this flips pages back to Free.
    void release_from_prefix(bytes_t bytes);

    addr_t base() const { return base_; }
    bytes_t page_bytes() const { return page_bytes_; }
    size_t page_count() const { return pages_.size(); }
    size_t tee_prefix_pages() const { return prefix_pages_; }
    bytes_t tee_prefix_bytes() const { return static_cast<bytes_t>(prefix_pages_) * page_bytes_; }
    PageState page_state(size_t i) const { return pages_.at(i); }
    double pressure() const;

    PageContent content_at(addr_t addr) const;
    void set_content(addr_t addr, bytes_t bytes, PageContent c);
    bool span_zeroed(addr_t addr, bytes_t bytes) const;

    /// Prefix property: TEE pages form one run starting at the base.
    bool prefix_contiguous() const;

private:
    size_t page_index(addr_t addr) const;

    addr_t base_;
    bytes_t page_bytes_;
    std::vector<PageState> pages_;
    std::vector<PageContent> content_;
    size_t prefix_pages_ = 0;
};

/// Spec-level entry point mirroring the kernel call: claims pages and reports
/// the migration cost.
AllocReply cma_allocate(CmaRegion& cma, bytes_t bytes, int threads, const HardwareModel& hw);

enum class RegionPurpose { Parameters, Working, JobContext };

const char* to_string(RegionPurpose p);

struct TzascRegion {
    std::string name;
    RegionPurpose purpose = RegionPurpose::Parameters;
    addr_t base = 0;
    bytes_t allocated_watermark = 0;
    bytes_t protected_watermark = 0;
};

struct GroupExtent {
    int group = 0;
    bytes_t offset = 0;
    bytes_t bytes = 0;
};

struct MemTraceRecord {
    micros_t time_us = 0;
    std::string op;
    std::string region;
    bytes_t bytes = 0;
    bytes_t allocated_watermark = 0;
    bytes_t protected_watermark = 0;
    micros_t migration_cost_us = 0;
};

/// Hook for injecting adversarial CMA replies (Iago testing). Receives the
/// honest reply and returns what the untrusted driver actually claims.
using CmaReplyHook = std::function<AllocReply(const AllocReply&)>;

enum class ReeAccess { Ok, Fault };

/// TEE-side view of the two data regions (parameters + working set) plus the
/// job-context window. Enforces watermark ordering, reply contiguity, FILO
/// group release and zero-on-release.
class SecureMemoryState {
public:
    SecureMemoryState(const CmaSpec& param_cma, const CmaSpec& working_cma);

    // -- extend / shrink interface ------------------------------------------
    addr_t extend_allocated(TzascRegion& region, bytes_t bytes, CmaRegion& cma,
                            const HardwareModel& hw, const CmaReplyHook& hook = nullptr);
    void extend_protected(TzascRegion& region, bytes_t bytes);
    void shrink(TzascRegion& region, bytes_t bytes, CmaRegion& cma);

    // -- parameter-group bookkeeping ----------------------------------------
    /// Claims the extent for a group (must be called in topological order)
    /// and returns the migration cost of the underlying allocation.
    micros_t claim_group(int group, bytes_t bytes, const HardwareModel& hw,
                         const CmaReplyHook& hook = nullptr);
    /// Protects a group's span and marks it decrypted plaintext.
    void protect_group(int group);
    void mark_group_loaded(int group);    // ciphertext landed via direct I/O
    void mark_group_plaintext(int group);
    /// Restores a cached group at setup: pages already TEE-owned, protected,
    /// plaintext, at zero migration cost.
    void preload_group(int group, bytes_t bytes, const HardwareModel& hw);
    /// Releases the topologically last resident groups down to `group`.
    void release_group(int group);
    std::vector<int> plan_cache(bytes_t pressure_signal) const;
    void apply_release_plan(const std::vector<int>& plan);

    // -- working region -----------------------------------------------------
    struct WorkingCall {
        std::string what; // "extend_fixed", "extend_kv", "shrink_all"
        bytes_t bytes = 0;
    };
    std::vector<WorkingCall> working_region_lifecycle(int prompt_tokens, int generated_tokens,
                                                      bytes_t kv_bytes_per_token,
                                                      bytes_t fixed_bytes,
                                                      const HardwareModel& hw);

    // -- access model ---------------------------------------------------------
    /// Non-secure read: faults inside any protected window, succeeds in
    /// allocated-but-unprotected memory (direct I/O landing zone).
    ReeAccess ree_read(addr_t addr) const;

    // -- introspection --------------------------------------------------------
    TzascRegion& param_region() { return param_; }
    TzascRegion& working_region() { return working_; }
    const TzascRegion& param_region() const { return param_; }
    const TzascRegion& working_region() const { return working_; }
    CmaRegion& param_cma() { return param_cma_; }
    CmaRegion& working_cma() { return working_cma_; }
    const std::vector<GroupExtent>& group_extents() const { return extents_; }
    bytes_t resident_param_bytes() const;
    int regions_in_use() const { return 3; } // parameters, working, job contexts
    bool group_resident(int group) const;
    bool group_protected(int group) const;

    void set_clock(const micros_t* clock) { clock_ = clock; }
    const std::vector<MemTraceRecord>& trace() const { return trace_; }
    std::vector<MemTraceRecord>& trace() { return trace_; }

    static constexpr int kMaxTzascRegions = 8;

private:
    micros_t now() const { return clock_ ? *clock_ : 0; }
    void record(const std::string& op, const TzascRegion& r, bytes_t bytes, micros_t cost);
    CmaRegion& cma_for(const TzascRegion& r);

    TzascRegion param_, working_;
    CmaRegion param_cma_, working_cma_;
    HardwareModel hw_for_trace_;
    std::vector<GroupExtent> extents_;
    std::vector<MemTraceRecord> trace_;
    const micros_t* clock_ = nullptr;
};

/// Replays the allocation sequence of all non-cached groups on a scratch CMA
/// region and stores the resulting migration costs as Alloc durations, so
/// critical-path sums and the engine agree exactly.
void annotate_alloc_costs(ExtendedGraph& graph, const CmaSpec& cma_spec, const HardwareModel& hw);

} // namespace tzsim
