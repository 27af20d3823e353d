#pragma once

// Binary checkpoint container. Layout (all integers little-endian):
//
//   magic     8 bytes   "SEENETCK"
//   version   u32       1
//   meta_len  u32       byte length of the metadata string
//   meta      bytes     UTF-8 JSON, free-form
//   count     u32       number of tensor entries
//   entry * count, sorted by name:
//     kind      u8      0 = trainable parameter, 1 = fixed buffer
//     name_len  u32
//     name      bytes
//     rank      u32     0..2
//     dims      u64 * rank
//     values    f64 * prod(dims), IEEE-754 binary64
//
// See docs/checkpoint_format.md.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "seenet/tensor.hpp"

namespace seenet {

struct Checkpoint {
    std::string meta;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;
};

namespace detail {

inline constexpr std::array<char, 8> kMagic{'S', 'E', 'E', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::string& out, T v) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) bits = std::bit_cast<std::uint64_t>(v);
    else bits = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bits |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        if constexpr (std::is_same_v<T, double>) return std::bit_cast<double>(bits);
        else return static_cast<T>(bits);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw InputError("checkpoint: truncated file");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out(detail::kMagic.begin(), detail::kMagic.end());
    detail::put_le<std::uint32_t>(out, detail::kVersion);
    detail::put_le<std::uint32_t>(out, std::uint32_t(ck.meta.size()));
    out += ck.meta;

    std::map<std::string, std::pair<std::uint8_t, const Tensor*>> all;
    for (const auto& [n, t] : ck.params) all[n] = {0, &t};
    for (const auto& [n, t] : ck.buffers) {
        if (all.count(n)) throw ContractError("checkpoint: name '" + n + "' is both parameter and buffer");
        all[n] = {1, &t};
    }
    detail::put_le<std::uint32_t>(out, std::uint32_t(all.size()));
    for (const auto& [name, entry] : all) {
        const auto& [kind, t] = entry;
        detail::put_le<std::uint8_t>(out, kind);
        detail::put_le<std::uint32_t>(out, std::uint32_t(name.size()));
        out += name;
        detail::put_le<std::uint32_t>(out, std::uint32_t(t->rank()));
        for (std::size_t d : t->shape()) detail::put_le<std::uint64_t>(out, d);
        for (double v : t->values()) detail::put_le<double>(out, v);
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& buf) {
    detail::Reader r(buf);
    const std::string magic = r.bytes(8);
    if (std::memcmp(magic.data(), detail::kMagic.data(), 8) != 0) throw InputError("checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != detail::kVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.meta = r.bytes(r.get<std::uint32_t>());
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto kind = r.get<std::uint8_t>();
        std::string name = r.bytes(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank > 2) throw InputError("checkpoint: entry '" + name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = std::size_t(r.get<std::uint64_t>());
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = r.get<double>();
        Tensor t(std::move(shape), std::move(values));
        if (kind == 0) ck.params.emplace(std::move(name), std::move(t));
        else if (kind == 1) ck.buffers.emplace(std::move(name), std::move(t));
        else throw InputError("checkpoint: unknown entry kind " + std::to_string(kind));
    }
    if (!r.done()) throw InputError("checkpoint: trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("checkpoint: cannot open '" + path + "' for writing");
    const std::string bytes = encode_checkpoint(ck);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw InputError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf);
}

}  // namespace seenet
