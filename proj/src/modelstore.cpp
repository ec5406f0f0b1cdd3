//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/modelstore.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <cstring>
#include <set>

namespace tzsim::store {

namespace {

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const Bytes& b, size_t pos = 0) : b_(b), pos_(pos) {}
    std::uint16_t u16() { return static_cast<std::uint16_t>(u(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    Bytes raw(size_t n) {
        need(n);
        Bytes out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    std::string str(size_t n) {
        need(n);
        std::string out(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return out;
    }
    size_t pos() const { return pos_; }
    void seek(size_t p) { pos_ = p; }

private:
    std::uint64_t u(size_t n) {
        need(n);
        std::uint64_t v = 0;
        for (size_t i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }
    void need(size_t n) const {
        if (pos_ + n > b_.size())
            throw ParseError("container truncated at offset " + std::to_string(pos_));
    }
    const Bytes& b_;
    size_t pos_;
};

using Nonce = std::array<std::uint8_t, kNonceBytes>;

// Domain-separated additional data binds each record to its position, so
// chunks cannot be swapped between tensors or indices.
Bytes chunk_aad(std::uint32_t tensor_index, std::uint32_t chunk_index) {
    Bytes aad = {'T', 'Z', 'L', 'M', kFormatVersion, 0, 'T'};
    put_u32(aad, tensor_index);
    put_u32(aad, chunk_index);
    return aad;
}

Bytes key_aad() { return {'T', 'Z', 'L', 'M', kFormatVersion, 0, 'K'}; }

Bytes checkpoint_aad(std::uint32_t chunk_index) {
    Bytes aad = {'T', 'Z', 'L', 'M', kFormatVersion, 0, 'C'};
    put_u32(aad, chunk_index);
    return aad;
}

struct NonceSource {
    std::optional<std::uint64_t> seed;
    std::uint64_t counter = 0;

    Nonce next() {
        Nonce n{};
        if (seed) {
            std::uint64_t s = *seed;
            for (int i = 0; i < 8; ++i)
                n[static_cast<size_t>(i)] = static_cast<std::uint8_t>((s >> (8 * i)) & 0xff);
            for (int i = 0; i < 4; ++i)
                n[static_cast<size_t>(8 + i)] =
                    static_cast<std::uint8_t>((counter >> (8 * i)) & 0xff);
            ++counter;
        } else {
            if (RAND_bytes(n.data(), static_cast<int>(n.size())) != 1)
                throw Error("RAND_bytes failed");
        }
        return n;
    }
};

Bytes gcm_seal(const Key& key, const Nonce& nonce, const Bytes& aad, const std::uint8_t* plain,
               size_t plain_len) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx)
        throw Error("EVP_CIPHER_CTX_new failed");
    Bytes out(plain_len + kTagBytes);
    int len = 0;
    bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) == 1 &&
              EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1 &&
              EVP_EncryptUpdate(ctx, out.data(), &len, plain, static_cast<int>(plain_len)) == 1 &&
              EVP_EncryptFinal_ex(ctx, out.data() + len, &len) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, static_cast<int>(kTagBytes),
                                  out.data() + plain_len) == 1;
    EVP_CIPHER_CTX_free(ctx);
    if (!ok)
        throw Error("AES-GCM encryption failed");
    return out;
}

Bytes gcm_open(const Key& key, const Nonce& nonce, const Bytes& aad, const std::uint8_t* cipher,
               size_t cipher_len, const std::uint8_t* tag) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx)
        throw Error("EVP_CIPHER_CTX_new failed");
    Bytes out(cipher_len);
    int len = 0;
    std::uint8_t tag_copy[kTagBytes];
    std::memcpy(tag_copy, tag, kTagBytes);
    bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) == 1 &&
              EVP_DecryptUpdate(ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1 &&
              EVP_DecryptUpdate(ctx, out.data(), &len, cipher, static_cast<int>(cipher_len)) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, static_cast<int>(kTagBytes),
                                  tag_copy) == 1 &&
              EVP_DecryptFinal_ex(ctx, out.data() + len, &len) == 1;
    EVP_CIPHER_CTX_free(ctx);
    if (!ok)
        throw TamperDetected("authentication tag mismatch");
    return out;
}

std::uint32_t chunk_count_for(std::uint64_t len, std::uint32_t chunk_size) {
    if (len == 0)
        return 0;
    return static_cast<std::uint32_t>((len + chunk_size - 1) / chunk_size);
}

} // namespace

Bytes pack(const std::vector<TensorInput>& tensors, const Key& model_key, const Key& root_key,
           const PackOptions& opt) {
    if (opt.chunk_size == 0)
        throw SpecError("chunk_size must be > 0");
    std::set<std::string> names;
    for (const auto& t : tensors)
        if (!names.insert(t.name).second)
            throw DuplicateName("duplicate tensor name: " + t.name);

    NonceSource nonces{opt.nonce_seed};

    // Header + table get fixed sizes first so chunk offsets are known.
    size_t table_bytes = 0;
    for (const auto& t : tensors)
        table_bytes += 2 + t.name.size() + 4 + 8 + 4 + 4 + 8;
    size_t header_bytes = 4 + 2 + 2 + 4;

    Bytes out;
    out.reserve(header_bytes + table_bytes);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kFormatVersion);
    put_u16(out, kCipherAes256Gcm);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));

    std::uint64_t data_cursor = header_bytes + table_bytes;
    for (const auto& t : tensors) {
        std::uint32_t chunks = chunk_count_for(t.data.size(), opt.chunk_size);
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, t.group);
        put_u64(out, t.data.size());
        put_u32(out, opt.chunk_size);
        put_u32(out, chunks);
        put_u64(out, data_cursor);
        for (std::uint32_t c = 0; c < chunks; ++c) {
            std::uint64_t begin = static_cast<std::uint64_t>(c) * opt.chunk_size;
            std::uint64_t len = std::min<std::uint64_t>(opt.chunk_size, t.data.size() - begin);
            data_cursor += kNonceBytes + len + kTagBytes;
        }
    }

    std::uint32_t tensor_index = 0;
    for (const auto& t : tensors) {
        std::uint32_t chunks = chunk_count_for(t.data.size(), opt.chunk_size);
        for (std::uint32_t c = 0; c < chunks; ++c) {
            std::uint64_t begin = static_cast<std::uint64_t>(c) * opt.chunk_size;
            std::uint64_t len = std::min<std::uint64_t>(opt.chunk_size, t.data.size() - begin);
            Nonce n = nonces.next();
            out.insert(out.end(), n.begin(), n.end());
            Bytes sealed = gcm_seal(model_key, n, chunk_aad(tensor_index, c),
                                    t.data.data() + begin, static_cast<size_t>(len));
            out.insert(out.end(), sealed.begin(), sealed.end());
        }
        ++tensor_index;
    }

    // Wrapped model key under the device-root key.
    {
        Nonce n = nonces.next();
        out.insert(out.end(), n.begin(), n.end());
        put_u32(out, kKeyBytes);
        Bytes sealed = gcm_seal(root_key, n, key_aad(), model_key.data(), model_key.size());
        out.insert(out.end(), sealed.begin(), sealed.end());
    }

    // Framework init-state checkpoint, same chunk framing.
    {
        put_u64(out, opt.checkpoint_blob.size());
        put_u32(out, opt.chunk_size);
        std::uint32_t chunks = chunk_count_for(opt.checkpoint_blob.size(), opt.chunk_size);
        put_u32(out, chunks);
        for (std::uint32_t c = 0; c < chunks; ++c) {
            std::uint64_t begin = static_cast<std::uint64_t>(c) * opt.chunk_size;
            std::uint64_t len =
                std::min<std::uint64_t>(opt.chunk_size, opt.checkpoint_blob.size() - begin);
            Nonce n = nonces.next();
            out.insert(out.end(), n.begin(), n.end());
            Bytes sealed = gcm_seal(model_key, n, checkpoint_aad(c),
                                    opt.checkpoint_blob.data() + begin, static_cast<size_t>(len));
            out.insert(out.end(), sealed.begin(), sealed.end());
        }
    }
    return out;
}

const TensorEntry& ContainerView::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name)
            return t;
    throw BadIndex("no tensor named '" + name + "'");
}

ContainerView parse_container(const Bytes& container) {
    Reader r(container);
    Bytes magic = r.raw(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw ParseError("bad magic");
    ContainerView v;
    v.bytes = &container;
    v.version = r.u16();
    v.cipher = r.u16();
    if (v.version != kFormatVersion)
        throw ParseError("unsupported format version " + std::to_string(v.version));
    if (v.cipher != kCipherAes256Gcm)
        throw ParseError("unsupported cipher id " + std::to_string(v.cipher));
    std::uint32_t count = r.u32();
    std::uint64_t expected_cursor = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorEntry e;
        std::uint16_t name_len = r.u16();
        e.name = r.str(name_len);
        e.group = r.u32();
        e.plain_len = r.u64();
        e.chunk_size = r.u32();
        e.chunk_count = r.u32();
        e.file_offset = r.u64();
        if (e.chunk_size == 0)
            throw ParseError("tensor '" + e.name + "': zero chunk size");
        if (e.chunk_count != chunk_count_for(e.plain_len, e.chunk_size))
            throw ParseError("tensor '" + e.name + "': chunk count mismatch");
        if (expected_cursor != 0 && e.file_offset < expected_cursor)
            throw ParseError("tensor '" + e.name + "': overlapping chunk records");
        std::uint64_t records = 0;
        for (std::uint32_t c = 0; c < e.chunk_count; ++c) {
            std::uint64_t begin = static_cast<std::uint64_t>(c) * e.chunk_size;
            records += kNonceBytes + std::min<std::uint64_t>(e.chunk_size, e.plain_len - begin) +
                       kTagBytes;
        }
        if (e.file_offset + records > container.size())
            throw ParseError("tensor '" + e.name + "': chunk records out of bounds");
        expected_cursor = e.file_offset + records;
        v.tensors.push_back(std::move(e));
    }
    v.wrapped_key_offset = expected_cursor;

    // Walk the wrapped-key record to locate the checkpoint record.
    Reader k(container, static_cast<size_t>(v.wrapped_key_offset));
    k.raw(kNonceBytes);
    std::uint32_t key_len = k.u32();
    if (key_len != kKeyBytes)
        throw ParseError("wrapped key record: bad key length");
    k.raw(key_len + kTagBytes);
    v.checkpoint_offset = k.pos();

    Reader c(container, static_cast<size_t>(v.checkpoint_offset));
    std::uint64_t plain_len = c.u64();
    std::uint32_t chunk_size = c.u32();
    std::uint32_t chunk_count = c.u32();
    if (chunk_size == 0 || chunk_count != chunk_count_for(plain_len, chunk_size))
        throw ParseError("checkpoint record: bad framing");
    for (std::uint32_t i = 0; i < chunk_count; ++i) {
        std::uint64_t begin = static_cast<std::uint64_t>(i) * chunk_size;
        c.raw(kNonceBytes +
              static_cast<size_t>(std::min<std::uint64_t>(chunk_size, plain_len - begin)) +
              kTagBytes);
    }
    return v;
}

namespace {

struct ChunkLoc {
    size_t nonce_off;
    size_t cipher_off;
    size_t cipher_len;
    size_t tag_off;
};

ChunkLoc locate_chunk(const TensorEntry& e, std::uint32_t chunk_index) {
    if (chunk_index >= e.chunk_count)
        throw BadIndex("chunk " + std::to_string(chunk_index) + " of " +
                       std::to_string(e.chunk_count) + " in tensor '" + e.name + "'");
    std::uint64_t off = e.file_offset;
    for (std::uint32_t c = 0; c < chunk_index; ++c) {
        std::uint64_t begin = static_cast<std::uint64_t>(c) * e.chunk_size;
        off += kNonceBytes + std::min<std::uint64_t>(e.chunk_size, e.plain_len - begin) + kTagBytes;
    }
    std::uint64_t begin = static_cast<std::uint64_t>(chunk_index) * e.chunk_size;
    std::uint64_t len = std::min<std::uint64_t>(e.chunk_size, e.plain_len - begin);
    ChunkLoc loc;
    loc.nonce_off = static_cast<size_t>(off);
    loc.cipher_off = static_cast<size_t>(off + kNonceBytes);
    loc.cipher_len = static_cast<size_t>(len);
    loc.tag_off = loc.cipher_off + loc.cipher_len;
    return loc;
}

} // namespace

Bytes unpack_chunk(const ContainerView& view, const std::string& tensor_name,
                   std::uint32_t chunk_index, const Key& model_key) {
    std::uint32_t tensor_index = 0;
    const TensorEntry* entry = nullptr;
    for (const auto& t : view.tensors) {
        if (t.name == tensor_name) {
            entry = &t;
            break;
        }
        ++tensor_index;
    }
    if (!entry)
        throw BadIndex("no tensor named '" + tensor_name + "'");
    ChunkLoc loc = locate_chunk(*entry, chunk_index);
    const Bytes& b = *view.bytes;
    Nonce n{};
    std::copy_n(b.data() + loc.nonce_off, kNonceBytes, n.begin());
    return gcm_open(model_key, n, chunk_aad(tensor_index, chunk_index), b.data() + loc.cipher_off,
                    loc.cipher_len, b.data() + loc.tag_off);
}

Bytes unpack_tensor(const ContainerView& view, const std::string& tensor_name,
                    const Key& model_key) {
    const TensorEntry& e = view.tensor(tensor_name);
    Bytes out;
    out.reserve(static_cast<size_t>(e.plain_len));
    for (std::uint32_t c = 0; c < e.chunk_count; ++c) {
        Bytes chunk = unpack_chunk(view, tensor_name, c, model_key);
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

Key unwrap_model_key(const ContainerView& view, const Key& root_key) {
    Reader r(*view.bytes, static_cast<size_t>(view.wrapped_key_offset));
    Bytes nonce_raw = r.raw(kNonceBytes);
    std::uint32_t key_len = r.u32();
    Bytes cipher = r.raw(key_len);
    Bytes tag = r.raw(kTagBytes);
    Nonce n{};
    std::copy_n(nonce_raw.data(), kNonceBytes, n.begin());
    Bytes plain;
    try {
        plain = gcm_open(root_key, n, key_aad(), cipher.data(), cipher.size(), tag.data());
    } catch (const TamperDetected&) {
        throw KeyUnwrapFailure("model key unwrap failed (wrong root key or corrupt record)");
    }
    Key key{};
    std::copy_n(plain.data(), kKeyBytes, key.begin());
    return key;
}

Bytes unpack_checkpoint(const ContainerView& view, const Key& model_key) {
    Reader r(*view.bytes, static_cast<size_t>(view.checkpoint_offset));
    std::uint64_t plain_len = r.u64();
    std::uint32_t chunk_size = r.u32();
    std::uint32_t chunk_count = r.u32();
    Bytes out;
    out.reserve(static_cast<size_t>(plain_len));
    for (std::uint32_t c = 0; c < chunk_count; ++c) {
        std::uint64_t begin = static_cast<std::uint64_t>(c) * chunk_size;
        size_t len = static_cast<size_t>(std::min<std::uint64_t>(chunk_size, plain_len - begin));
        Bytes nonce_raw = r.raw(kNonceBytes);
        Bytes cipher = r.raw(len);
        Bytes tag = r.raw(kTagBytes);
        Nonce n{};
        std::copy_n(nonce_raw.data(), kNonceBytes, n.begin());
        Bytes chunk = gcm_open(model_key, n, checkpoint_aad(c), cipher.data(), cipher.size(),
                               tag.data());
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

Bytes checkpoint_roundtrip(const Bytes& init_state, const Key& model_key, const Key& root_key) {
    PackOptions opt;
    opt.chunk_size = 1u << 20;
    opt.checkpoint_blob = init_state;
    Bytes container = pack({}, model_key, root_key, opt);
    ContainerView v = parse_container(container);
    return unpack_checkpoint(v, model_key);
}

Key key_from_hex(const std::string& hex) {
    if (hex.size() != 2 * kKeyBytes)
        throw ParseError("key must be 64 hex characters");
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9')
            return c - '0';
        if (c >= 'a' && c <= 'f')
            return c - 'a' + 10;
        if (c >= 'A' && c <= 'F')
            return c - 'A' + 10;
        throw ParseError("bad hex digit in key");
    };
    Key k{};
    for (size_t i = 0; i < kKeyBytes; ++i)
        k[i] = static_cast<std::uint8_t>(nib(hex[2 * i]) * 16 + nib(hex[2 * i + 1]));
    return k;
}

Key random_key() {
    Key k{};
    if (RAND_bytes(k.data(), static_cast<int>(k.size())) != 1)
        throw Error("RAND_bytes failed");
    return k;
}

} // namespace tzsim::store
