//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tzsim/common.hpp"

namespace tzsim::store {

// Container layout (all integers little-endian):
//   header:       magic "TZLM" | version u16 | cipher u16 | tensor_count u32
//   tensor table: per tensor: name_len u16 | name | group u32 | plain_len u64
//                 | chunk_size u32 | chunk_count u32 | file_offset u64
//   chunk data:   per chunk: nonce[12] | ciphertext | tag[16]
//   wrapped key:  nonce[12] | key_len u32 | ciphertext | tag[16]
//   checkpoint:   plain_len u64 | chunk_size u32 | chunk_count u32 | chunks
inline constexpr char kMagic[4] = {'T', 'Z', 'L', 'M'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint16_t kCipherAes256Gcm = 1;
inline constexpr size_t kNonceBytes = 12;
inline constexpr size_t kTagBytes = 16;
inline constexpr size_t kKeyBytes = 32;

using Key = std::array<std::uint8_t, kKeyBytes>;
using Bytes = std::vector<std::uint8_t>;

struct TensorInput {
    std::string name;
    std::uint32_t group = 0;
    Bytes data;
};

struct PackOptions {
    std::uint32_t chunk_size = 4u << 20;
    // Seeded packing derives per-chunk nonces from a counter for
    // byte-reproducible containers; unseeded packing uses fresh random nonces.
    std::optional<std::uint64_t> nonce_seed;
    Bytes checkpoint_blob;
};

Bytes pack(const std::vector<TensorInput>& tensors, const Key& model_key, const Key& root_key,
           const PackOptions& opt = {});

struct TensorEntry {
    std::string name;
    std::uint32_t group = 0;
    std::uint64_t plain_len = 0;
    std::uint32_t chunk_size = 0;
    std::uint32_t chunk_count = 0;
    std::uint64_t file_offset = 0;
};

struct ContainerView {
    const Bytes* bytes = nullptr;
    std::uint16_t version = 0;
    std::uint16_t cipher = 0;
    std::vector<TensorEntry> tensors;
    std::uint64_t wrapped_key_offset = 0;
    std::uint64_t checkpoint_offset = 0;

    const TensorEntry& tensor(const std::string& name) const;
};

/// Structural parse; throws ParseError on truncation or bad framing.
ContainerView parse_container(const Bytes& container);

/// Decrypts one chunk independently of all others (out-of-order pipelined
/// decryption). Throws TamperDetected if authentication fails, BadIndex if
/// the chunk does not exist.
Bytes unpack_chunk(const ContainerView& view, const std::string& tensor_name,
                   std::uint32_t chunk_index, const Key& model_key);

/// Convenience: all chunks of one tensor concatenated.
Bytes unpack_tensor(const ContainerView& view, const std::string& tensor_name,
                    const Key& model_key);

/// Throws KeyUnwrapFailure unless root_key matches the packing key.
Key unwrap_model_key(const ContainerView& view, const Key& root_key);

Bytes unpack_checkpoint(const ContainerView& view, const Key& model_key);

/// Packs `init_state` as a checkpoint blob and restores it; returns the
/// restored bytes (identity on success).
Bytes checkpoint_roundtrip(const Bytes& init_state, const Key& model_key, const Key& root_key);

Key key_from_hex(const std::string& hex);
Key random_key();

} // namespace tzsim::store
