//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tzsim {

// Simulated time is integer microseconds; byte counts are exact.
using micros_t = std::int64_t;
using bytes_t = std::uint64_t;
using addr_t = std::uint64_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define TZSIM_ERROR_TYPE(Name)                                                 \
    class Name : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    }

// graph
TZSIM_ERROR_TYPE(SpecError);
TZSIM_ERROR_TYPE(CacheSetError);
// scheduler
TZSIM_ERROR_TYPE(TooLarge);
// simcore
TZSIM_ERROR_TYPE(DeadlockError);
// securemem
TZSIM_ERROR_TYPE(OutOfRegion);
TZSIM_ERROR_TYPE(ContiguityViolation);
TZSIM_ERROR_TYPE(ProtectOverrun);
TZSIM_ERROR_TYPE(FiloViolation);
TZSIM_ERROR_TYPE(RegionBudgetExceeded);
// npu_codriver
TZSIM_ERROR_TYPE(ContextOverflow);
TZSIM_ERROR_TYPE(InvalidState);
// modelstore
TZSIM_ERROR_TYPE(TamperDetected);
TZSIM_ERROR_TYPE(BadIndex);
TZSIM_ERROR_TYPE(KeyUnwrapFailure);
TZSIM_ERROR_TYPE(DuplicateName);
TZSIM_ERROR_TYPE(ParseError);
// cli
TZSIM_ERROR_TYPE(UnknownParameter);
TZSIM_ERROR_TYPE(SchemaError);

#undef TZSIM_ERROR_TYPE

} // namespace tzsim
