//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "tzsim/graph.hpp"

using namespace tzsim;
using namespace tztest;

TEST_CASE("minimal chain: one CPU op feeding one NPU op") {
    ModelSpec m = chain_spec({1000}, {{"norm", Hw::Cpu, 10, 0}, {"mm", Hw::Npu, 20, -1}});
    ComputationGraph g = build_graph(m);
    REQUIRE(g.ops.size() == 2);
    CHECK(g.ops[0].hw == Hw::Cpu);
    CHECK(g.ops[1].hw == Hw::Npu);
    CHECK(g.ops[1].preds == std::vector<int>{0});
    CHECK(g.groups[0].consumed_by == std::vector<int>{0});
}

TEST_CASE("llama-8b-like spec splits 7.9 GB evenly into 32 groups") {
    ModelSpec m = layered_spec(32, 7'900'000'000ULL, 100, 400);
    ComputationGraph g = build_graph(m);
    REQUIRE(g.groups.size() == 32);
    // Oracle: plain division, all groups equal since 32 divides the total.
    bytes_t expect = 7'900'000'000ULL / 32;
    REQUIRE(7'900'000'000ULL % 32 == 0);
    bytes_t total = 0;
    for (const auto& grp : g.groups) {
        CHECK(grp.byte_size == expect); // ~247 MB
        total += grp.byte_size;
    }
    CHECK(total == 7'900'000'000ULL);
    CHECK(expect == 246'875'000ULL);
}

TEST_CASE("dangling tensor-group reference is a SpecError") {
    ModelSpec m = chain_spec({1000}, {{"mm", Hw::Npu, 20, 0}});
    m.ops[0].tensor_group = 99;
    CHECK_THROWS_AS(build_graph(m), SpecError);
}

TEST_CASE("cyclic predecessor declarations are rejected") {
    ModelSpec m = chain_spec({1000}, {{"a", Hw::Cpu, 10, 0}, {"b", Hw::Cpu, 10, -1}});
    m.ops[0].preds = {1}; // forward reference = not an earlier op
    CHECK_THROWS_AS(build_graph(m), SpecError);
}

TEST_CASE("insert_restoration_ops adds one Alloc/Load/Decrypt triple per non-cached group") {
    ModelSpec m = chain_spec({1000, 1000, 1000}, {{"c0", Hw::Npu, 10, 0},
                                                  {"c1", Hw::Npu, 10, 1},
                                                  {"c2", Hw::Npu, 10, 2}});
    ComputationGraph g = build_graph(m);

    SUBCASE("no caching: 9 restoration ops") {
        ExtendedGraph eg = insert_restoration_ops(g, {});
        CHECK(eg.restoration_count() == 9);
        // Chain shape per group: Alloc -> Load -> Decrypt -> first consumer.
        for (int grp = 0; grp < 3; ++grp) {
            int alloc = -1, load = -1, dec = -1;
            for (const auto& n : eg.nodes) {
                if (!n.group || *n.group != grp || is_compute(n.kind))
                    continue;
                if (n.kind == OpKind::Alloc)
                    alloc = n.id;
                if (n.kind == OpKind::Load)
                    load = n.id;
                if (n.kind == OpKind::Decrypt)
                    dec = n.id;
            }
            REQUIRE(alloc >= 0);
            REQUIRE(load >= 0);
            REQUIRE(dec >= 0);
            CHECK(eg.node(load).preds == std::vector<int>{alloc});
            CHECK(eg.node(dec).preds == std::vector<int>{load});
            const auto& consumer = eg.node(grp); // compute id == index
            CHECK(std::count(consumer.preds.begin(), consumer.preds.end(), dec) == 1);
        }
    }

    SUBCASE("cached prefix {0}: 6 restoration ops, group-0 compute unchanged") {
        ExtendedGraph eg = insert_restoration_ops(g, {0});
        CHECK(eg.restoration_count() == 6);
        for (int p : eg.node(0).preds)
            CHECK(is_compute(eg.node(p).kind));
    }

    SUBCASE("non-prefix cache set is a CacheSetError") {
        CHECK_THROWS_AS(insert_restoration_ops(g, {1}), CacheSetError);
    }
}

TEST_CASE("split_micro_ops") {
    ModelSpec m = chain_spec({100ull << 20, 16ull << 20},
                             {{"c0", Hw::Npu, 10, 0}, {"c1", Hw::Npu, 10, 1}});
    ExtendedGraph eg = insert_restoration_ops(build_graph(m), {});
    ExtendedGraph split = split_micro_ops(eg, 32ull << 20);

    SUBCASE("100 MB decrypt becomes 32/32/32/4 chunks; loads untouched") {
        for (const auto& n : split.nodes) {
            if (!n.group)
                continue;
            if (n.kind == OpKind::Load)
                CHECK(n.chunks.empty());
            if (*n.group == 0 && n.kind == OpKind::Decrypt) {
                REQUIRE(n.chunks.size() == 4);
                CHECK(n.chunks[0] == 32ull << 20);
                CHECK(n.chunks[3] == 4ull << 20);
            }
            if (*n.group == 1 && (n.kind == OpKind::Alloc || n.kind == OpKind::Decrypt))
                CHECK(n.chunks.empty()); // below the chunk size
        }
    }

    SUBCASE("byte totals preserved for arbitrary chunk sizes") {
        std::mt19937_64 rng(42);
        HardwareModel hw;
        for (int trial = 0; trial < 50; ++trial) {
            ExtendedGraph g2 = random_small_graph(rng, hw, false);
            bytes_t before = 0;
            for (const auto& n : g2.nodes)
                before += n.bytes;
            bytes_t chunk = 1 + rng() % (8ull << 20);
            ExtendedGraph after = split_micro_ops(g2, chunk);
            bytes_t total = 0;
            for (const auto& n : after.nodes) {
                if (n.chunks.empty()) {
                    total += n.bytes;
                } else {
                    bytes_t per_node = 0;
                    for (bytes_t c : n.chunks) {
                        CHECK(c <= chunk);
                        per_node += c;
                    }
                    CHECK(per_node == n.bytes); // summation oracle
                    total += per_node;
                }
            }
            CHECK(total == before);
        }
    }
}

TEST_CASE("chunk durations sum exactly to the node duration") {
    Node n;
    n.kind = OpKind::Decrypt;
    n.bytes = 100;
    n.duration_us = 977; // awkward rounding
    n.chunks = {32, 32, 32, 4};
    auto durs = chunk_durations(n);
    REQUIRE(durs.size() == 4);
    micros_t sum = 0;
    for (micros_t d : durs)
        sum += d;
    CHECK(sum == 977);
}

TEST_CASE("critical paths") {
    HardwareModel hw; // 2 GB/s IO, 8 GB / 0.9 s decryption

    SUBCASE("8 GB of loads at 2 GB/s is a 4.0 s I/O path") {
        ModelSpec m = chain_spec({8'000'000'000ULL}, {{"c", Hw::Npu, 10, 0}});
        ExtendedGraph eg = insert_restoration_ops(build_graph(m), {});
        CriticalPaths cp = critical_paths(eg, hw);
        CHECK(cp.io_path == 4'000'000);
    }

    SUBCASE("8 GB of decryption contributes 0.9 s to the CPU path") {
        ModelSpec m = chain_spec({8'000'000'000ULL}, {{"c", Hw::Npu, 10, 0}});
        ExtendedGraph eg = insert_restoration_ops(build_graph(m), {});
        CriticalPaths cp = critical_paths(eg, hw);
        CHECK(cp.cpu_path == 900'000); // alloc not annotated = 0
    }

    SUBCASE("everything cached: lower bound is the compute path") {
        ModelSpec m = layered_spec(4, 4'000'000, 100, 400);
        ExtendedGraph eg = insert_restoration_ops(build_graph(m), {0, 1, 2, 3});
        CriticalPaths cp = critical_paths(eg, hw);
        CHECK(cp.io_path == 0);
        CHECK(cp.lower_bound == cp.compute_path);
        CHECK(cp.compute_path == 4 * 500);
    }
}

TEST_CASE("validate_dag accepts the builder output and rejects cycles") {
    ModelSpec m = layered_spec(3, 3'000'000, 10, 20);
    ExtendedGraph eg = insert_restoration_ops(build_graph(m), {});
    CHECK_NOTHROW(validate_dag(eg));

    eg.nodes[0].preds.push_back(1);
    eg.nodes[1].preds.push_back(0);
    CHECK_THROWS_AS(validate_dag(eg), SpecError);
}
