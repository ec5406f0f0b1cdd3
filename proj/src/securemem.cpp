//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/securemem.hpp"

#include <algorithm>
#include <cmath>

namespace tzsim {

namespace {

bytes_t ceil_to_page(bytes_t bytes, bytes_t page) { return (bytes + page - 1) / page * page; }

// Even spread of occupied pages at a given fraction (Bresenham pattern), so a
// partially pressured region costs proportionally on any span.
bool occupied_at(size_t index, double fraction) {
    double a = std::floor(static_cast<double>(index) * fraction);
    double b = std::floor(static_cast<double>(index + 1) * fraction);
    return b > a;
}

} // namespace

CmaRegion::CmaRegion(const CmaSpec& spec)
    : base_(spec.base), page_bytes_(spec.page_bytes) {
    if (spec.page_bytes == 0 || spec.region_bytes == 0)
        throw SpecError("cma: region and page sizes must be > 0");
    if (spec.occupied_fraction < 0.0 || spec.occupied_fraction > 1.0)
        throw SpecError("cma: occupied_fraction must be in [0,1]");
    size_t n = static_cast<size_t>(spec.region_bytes / spec.page_bytes);
    pages_.resize(n);
    content_.resize(n, PageContent::Zeroed);
    for (size_t i = 0; i < n; ++i) {
        pages_[i] = occupied_at(i, spec.occupied_fraction) ? PageState::MovableOccupied
                                                           : PageState::Free;
        if (pages_[i] == PageState::MovableOccupied)
            content_[i] = PageContent::ReeData;
    }
}

size_t CmaRegion::page_index(addr_t addr) const {
    if (addr < base_)
        throw OutOfRegion("address below region base");
    size_t i = static_cast<size_t>((addr - base_) / page_bytes_);
    if (i >= pages_.size())
        throw OutOfRegion("address beyond region end");
    return i;
}

AllocReply CmaRegion::peek_allocate(bytes_t bytes, int threads, const HardwareModel& hw) const {
    bytes_t want = ceil_to_page(bytes, page_bytes_);
    size_t need = static_cast<size_t>(want / page_bytes_);
    if (prefix_pages_ + need > pages_.size())
        throw OutOfRegion("cma region cannot satisfy request of " + std::to_string(bytes) + " bytes");
    bytes_t occupied = 0;
    for (size_t i = prefix_pages_; i < prefix_pages_ + need; ++i)
        if (pages_[i] == PageState::MovableOccupied)
            occupied += page_bytes_;
    AllocReply r;
    r.address = base_ + tee_prefix_bytes();
    r.migration_cost = duration_from_throughput(occupied, hw.migration_bytes_per_s(threads));
    return r;
}

AllocReply CmaRegion::allocate(bytes_t bytes, int threads, const HardwareModel& hw) {
    AllocReply r = peek_allocate(bytes, threads, hw);
    size_t need = static_cast<size_t>(ceil_to_page(bytes, page_bytes_) / page_bytes_);
    for (size_t i = prefix_pages_; i < prefix_pages_ + need; ++i) {
        pages_[i] = PageState::TeeAllocated;
        content_[i] = PageContent::Zeroed; // migrated-out page handed over clean
    }
    prefix_pages_ += need;
    return r;
}

void CmaRegion::release_from_prefix(bytes_t bytes) {
    bytes_t want = ceil_to_page(bytes, page_bytes_);
    size_t n = static_cast<size_t>(want / page_bytes_);
    if (n > prefix_pages_)
        throw OutOfRegion("releasing more pages than allocated");
    for (size_t i = prefix_pages_ - n; i < prefix_pages_; ++i)
        pages_[i] = PageState::Free;
    prefix_pages_ -= n;
}

double CmaRegion::pressure() const {
    if (pages_.empty())
        return 0.0;
    size_t occ = 0;
    for (auto p : pages_)
        if (p == PageState::MovableOccupied)
            ++occ;
    return static_cast<double>(occ) / static_cast<double>(pages_.size());
}

PageContent CmaRegion::content_at(addr_t addr) const { return content_.at(page_index(addr)); }

void CmaRegion::set_content(addr_t addr, bytes_t bytes, PageContent c) {
    if (bytes == 0)
        return;
    size_t first = page_index(addr);
    size_t last = page_index(addr + bytes - 1);
    for (size_t i = first; i <= last; ++i)
        content_[i] = c;
}

bool CmaRegion::span_zeroed(addr_t addr, bytes_t bytes) const {
    if (bytes == 0)
        return true;
    size_t first = page_index(addr);
    size_t last = page_index(addr + bytes - 1);
    for (size_t i = first; i <= last; ++i)
        if (content_[i] != PageContent::Zeroed)
            return false;
    return true;
}

bool CmaRegion::prefix_contiguous() const {
    for (size_t i = 0; i < pages_.size(); ++i) {
        bool tee = pages_[i] == PageState::TeeAllocated;
        if (tee != (i < prefix_pages_))
            return false;
    }
    return true;
}

AllocReply cma_allocate(CmaRegion& cma, bytes_t bytes, int threads, const HardwareModel& hw) {
    return cma.allocate(bytes, threads, hw);
}

const char* to_string(RegionPurpose p) {
    switch (p) {
    case RegionPurpose::Parameters: return "parameters";
    case RegionPurpose::Working: return "working";
    case RegionPurpose::JobContext: return "job_context";
    }
    return "?";
}

SecureMemoryState::SecureMemoryState(const CmaSpec& param_cma, const CmaSpec& working_cma)
    : param_cma_(param_cma), working_cma_(working_cma) {
    param_.name = "param";
    param_.purpose = RegionPurpose::Parameters;
    param_.base = param_cma_.base();
    working_.name = "working";
    working_.purpose = RegionPurpose::Working;
    working_.base = working_cma_.base();
    if (param_cma.base == working_cma.base)
        throw SpecError("parameter and working regions must be backed by distinct CMA regions");
}

CmaRegion& SecureMemoryState::cma_for(const TzascRegion& r) {
    return r.purpose == RegionPurpose::Parameters ? param_cma_ : working_cma_;
}

void SecureMemoryState::record(const std::string& op, const TzascRegion& r, bytes_t bytes,
                               micros_t cost) {
    trace_.push_back({now(), op, r.name, bytes, r.allocated_watermark, r.protected_watermark, cost});
}

addr_t SecureMemoryState::extend_allocated(TzascRegion& region, bytes_t bytes, CmaRegion& cma,
                                           const HardwareModel& hw, const CmaReplyHook& hook) {
    bytes_t claimed = (bytes + cma.page_bytes() - 1) / cma.page_bytes() * cma.page_bytes();
    AllocReply reply = cma.allocate(bytes, hw.cma_threads, hw);
    if (hook)
        reply = hook(reply);
    addr_t expected = region.base + region.allocated_watermark;
    if (reply.address != expected) {
        // Iago defense: the untrusted allocator must hand back the block
        // adjacent to the previously allocated ones.
        cma.release_from_prefix(claimed);
        record("reject_noncontiguous", region, bytes, 0);
        throw ContiguityViolation("cma returned " + std::to_string(reply.address) +
                                  ", expected " + std::to_string(expected));
    }
    region.allocated_watermark += claimed;
    record("extend_allocated", region, bytes, reply.migration_cost);
    return reply.address;
}

void SecureMemoryState::extend_protected(TzascRegion& region, bytes_t bytes) {
    if (region.protected_watermark + bytes > region.allocated_watermark)
        throw ProtectOverrun("protect " + std::to_string(bytes) + " bytes beyond allocated watermark");
    region.protected_watermark += bytes;
    record("extend_protected", region, bytes, 0);
}

void SecureMemoryState::shrink(TzascRegion& region, bytes_t bytes, CmaRegion& cma) {
    bytes_t claimed = (bytes + cma.page_bytes() - 1) / cma.page_bytes() * cma.page_bytes();
    if (claimed > region.allocated_watermark)
        throw OutOfRegion("shrink beyond allocated watermark");
    bytes_t new_wm = region.allocated_watermark - claimed;
    if (region.purpose == RegionPurpose::Parameters) {
        for (const auto& e : extents_)
            if (e.offset < new_wm && e.offset + e.bytes > new_wm)
                throw FiloViolation("shrink would split group " + std::to_string(e.group));
        while (!extents_.empty() && extents_.back().offset >= new_wm)
            extents_.pop_back();
    }
    // Sensitive data is cleared before pages go back to the REE.
    cma.set_content(region.base + new_wm, claimed, PageContent::Zeroed);
    cma.release_from_prefix(claimed);
    region.allocated_watermark = new_wm;
    region.protected_watermark = std::min(region.protected_watermark, new_wm);
    record("shrink", region, bytes, 0);
}

micros_t SecureMemoryState::claim_group(int group, bytes_t bytes, const HardwareModel& hw,
                                        const CmaReplyHook& hook) {
    int expected = extents_.empty() ? group : extents_.back().group + 1;
    if (!extents_.empty() && group != expected)
        throw SpecError("group " + std::to_string(group) + " claimed out of order");
    bytes_t offset = param_.allocated_watermark;
    bytes_t page = param_cma_.page_bytes();
    bytes_t claimed = (bytes + page - 1) / page * page;
    extend_allocated(param_, bytes, param_cma_, hw, hook);
    extents_.push_back({group, offset, claimed});
    // Migration cost is in the trace record just written.
    return trace_.back().migration_cost_us;
}

bool SecureMemoryState::group_resident(int group) const {
    return std::any_of(extents_.begin(), extents_.end(),
                       [&](const GroupExtent& e) { return e.group == group; });
}

bool SecureMemoryState::group_protected(int group) const {
    for (const auto& e : extents_)
        if (e.group == group)
            return e.offset + e.bytes <= param_.protected_watermark;
    return false;
}

void SecureMemoryState::protect_group(int group) {
    for (const auto& e : extents_) {
        if (e.group != group)
            continue;
        bytes_t end = e.offset + e.bytes;
        if (end > param_.protected_watermark)
            extend_protected(param_, end - param_.protected_watermark);
        return;
    }
    throw SpecError("protect_group: group " + std::to_string(group) + " not resident");
}

void SecureMemoryState::mark_group_loaded(int group) {
    for (const auto& e : extents_) {
        if (e.group != group)
            continue;
        param_cma_.set_content(param_.base + e.offset, e.bytes, PageContent::Ciphertext);
        return;
    }
    throw SpecError("mark_group_loaded: group not resident");
}

void SecureMemoryState::preload_group(int group, bytes_t bytes, const HardwareModel& hw) {
    claim_group(group, bytes, hw);
    trace_.back().op = "preload_cached";
    trace_.back().migration_cost_us = 0;
    protect_group(group);
    mark_group_plaintext(group);
}

void SecureMemoryState::mark_group_plaintext(int group) {
    for (const auto& e : extents_) {
        if (e.group != group)
            continue;
        param_cma_.set_content(param_.base + e.offset, e.bytes, PageContent::SecretPlaintext);
        return;
    }
    throw SpecError("mark_group_plaintext: group not resident");
}

void SecureMemoryState::release_group(int group) {
    if (extents_.empty() || !group_resident(group))
        throw FiloViolation("group " + std::to_string(group) + " is not resident");
    if (extents_.back().group != group)
        throw FiloViolation("cannot release group " + std::to_string(group) +
                            " while group " + std::to_string(extents_.back().group) +
                            " is still resident");
    shrink(param_, extents_.back().bytes, param_cma_);
}

std::vector<int> SecureMemoryState::plan_cache(bytes_t pressure_signal) const {
    std::vector<int> plan;
    if (pressure_signal == 0)
        return plan;
    bytes_t acc = 0;
    for (auto it = extents_.rbegin(); it != extents_.rend() && acc < pressure_signal; ++it) {
        plan.push_back(it->group);
        acc += it->bytes;
    }
    return plan;
}

void SecureMemoryState::apply_release_plan(const std::vector<int>& plan) {
    for (int g : plan)
        release_group(g);
}

std::vector<SecureMemoryState::WorkingCall> SecureMemoryState::working_region_lifecycle(
    int prompt_tokens, int generated_tokens, bytes_t kv_bytes_per_token, bytes_t fixed_bytes,
    const HardwareModel& hw) {
    std::vector<WorkingCall> calls;
    auto grow = [&](const std::string& what, bytes_t bytes) {
        if (bytes == 0)
            return;
        extend_allocated(working_, bytes, working_cma_, hw);
        extend_protected(working_, working_.allocated_watermark - working_.protected_watermark);
        calls.push_back({what, bytes});
    };
    grow("extend_fixed", fixed_bytes);
    grow("extend_kv", static_cast<bytes_t>(prompt_tokens) * kv_bytes_per_token);
    for (int t = 0; t < generated_tokens; ++t)
        grow("extend_kv", kv_bytes_per_token);
    bytes_t all = working_.allocated_watermark;
    if (all > 0) {
        shrink(working_, all, working_cma_);
        calls.push_back({"shrink_all", all});
    }
    return calls;
}

ReeAccess SecureMemoryState::ree_read(addr_t addr) const {
    auto in_protected = [&](const TzascRegion& r) {
        return addr >= r.base && addr < r.base + r.protected_watermark;
    };
    if (in_protected(param_) || in_protected(working_))
        return ReeAccess::Fault;
    return ReeAccess::Ok;
}

bytes_t SecureMemoryState::resident_param_bytes() const {
    bytes_t total = 0;
    for (const auto& e : extents_)
        total += e.bytes;
    return total;
}

void annotate_alloc_costs(ExtendedGraph& graph, const CmaSpec& cma_spec, const HardwareModel& hw) {
    CmaRegion scratch(cma_spec);
    // Cached groups survive from the previous inference; their pages are
    // already TEE-owned and cost nothing here.
    for (int g : graph.cached)
        scratch.allocate(graph.groups.at(static_cast<size_t>(g)).byte_size, cma_spec.threads, hw);

    std::vector<Node*> allocs;
    for (auto& n : graph.nodes)
        if (n.kind == OpKind::Alloc)
            allocs.push_back(&n);
    std::sort(allocs.begin(), allocs.end(),
              [](const Node* a, const Node* b) { return *a->group < *b->group; });
    for (Node* n : allocs) {
        AllocReply r = scratch.allocate(n->bytes, cma_spec.threads, hw);
        n->duration_us = r.migration_cost;
    }
    graph.alloc_costs_annotated = true;
}

} // namespace tzsim
