//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>

#include "tzsim/common.hpp"

namespace tzsim {

/// Platform cost constants. Defaults model an RK3588-class board: 2 GB/s
/// sequential flash reads, AES decryption clearing 8 GB in 0.9 s, CMA page
/// migration at 1.9 GB/s single-threaded scaling to 3.8 GB/s with 4 threads.
struct HardwareModel {
    int cpu_lanes = 1;

    double io_bytes_per_s = 2.0e9;
    double decrypt_bytes_per_s = 8.0e9 / 0.9;
    double cma_migrate_1t_bytes_per_s = 1.9e9;
    double cma_migrate_4t_bytes_per_s = 3.8e9;
    int cma_threads = 1;

    micros_t npu_world_switch_us = 200;
    micros_t naive_reinit_us = 32'000;       // full driver detach/attach
    micros_t framework_init_us = 2'300'000;  // metadata parse + tokenizer build
    micros_t checkpoint_restore_us = 10'000; // init-state checkpoint reload

    // Throughputs must be positive; one-off costs may be zeroed by scenarios
    // (e.g. an all-cached run with free init).
    void validate() const {
        if (cpu_lanes < 1)
            throw SpecError("hardware: cpu_lanes must be >= 1");
        if (io_bytes_per_s <= 0 || decrypt_bytes_per_s <= 0 ||
            cma_migrate_1t_bytes_per_s <= 0 || cma_migrate_4t_bytes_per_s <= 0)
            throw SpecError("hardware: throughputs must be > 0");
        if (cma_threads < 1)
            throw SpecError("hardware: cma_threads must be >= 1");
        if (npu_world_switch_us < 0 || naive_reinit_us < 0 ||
            framework_init_us < 0 || checkpoint_restore_us < 0)
            throw SpecError("hardware: costs must be >= 0");
    }

    /// Migration throughput for a given thread count, interpolated linearly
    /// between the measured 1-thread and 4-thread figures.
    double migration_bytes_per_s(int threads) const {
        double t = static_cast<double>(threads);
        if (t < 1.0)
            t = 1.0;
        if (t > 4.0)
            t = 4.0;
        return cma_migrate_1t_bytes_per_s +
               (cma_migrate_4t_bytes_per_s - cma_migrate_1t_bytes_per_s) * (t - 1.0) / 3.0;
    }
};

inline micros_t duration_from_throughput(bytes_t bytes, double bytes_per_s) {
    return static_cast<micros_t>(std::llround(static_cast<double>(bytes) * 1e6 / bytes_per_s));
}

inline micros_t load_duration(bytes_t bytes, const HardwareModel& hw) {
    return duration_from_throughput(bytes, hw.io_bytes_per_s);
}

inline micros_t decrypt_duration(bytes_t bytes, const HardwareModel& hw) {
    return duration_from_throughput(bytes, hw.decrypt_bytes_per_s);
}

} // namespace tzsim
