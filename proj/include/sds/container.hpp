#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sds/error.hpp"
#include "sds/matrix.hpp"

namespace sds {

// SDST container, version 1, little-endian throughout:
//   magic "SDST" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 ndim | u64 dims[] |
//              u8 dtype (1 = f32) | row-major payload
struct TensorEntry {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;  // dtype f32 is the only one defined

    std::uint64_t numel() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

class TensorContainer {
public:
    void add(TensorEntry entry) {
        if (entry.name.empty()) {
            throw FormatError(FormatIssue::EmptyName, "tensor entry with empty name");
        }
        if (index_.count(entry.name)) {
            throw FormatError(FormatIssue::DuplicateName,
                              "duplicate tensor name '" + entry.name + "'");
        }
        if (entry.data.size() != entry.numel()) {
            throw FormatError(FormatIssue::BadShape, "tensor '" + entry.name + "' payload has " +
                                                         std::to_string(entry.data.size()) +
                                                         " values for " +
                                                         std::to_string(entry.numel()) +
                                                         " declared elements");
        }
        index_[entry.name] = entries_.size();
        entries_.push_back(std::move(entry));
    }

    void add_matrix(const std::string& name, const DenseMatrix& m) {
        add(TensorEntry{name, {m.rows(), m.cols()}, m.values()});
    }

    void add_vector(const std::string& name, const std::vector<float>& v) {
        add(TensorEntry{name, {v.size()}, v});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const TensorEntry& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw FormatError(FormatIssue::BadShape, "tensor '" + name + "' not in container");
        }
        return entries_[it->second];
    }

    DenseMatrix get_matrix(const std::string& name) const {
        const auto& e = get(name);
        if (e.dims.size() != 2) {
            throw FormatError(FormatIssue::BadShape,
                              "tensor '" + name + "' is not 2-D (ndim " +
                                  std::to_string(e.dims.size()) + ")");
        }
        return DenseMatrix(static_cast<std::size_t>(e.dims[0]),
                           static_cast<std::size_t>(e.dims[1]), e.data);
    }

    const std::vector<TensorEntry>& entries() const { return entries_; }

private:
    std::vector<TensorEntry> entries_;  // insertion order preserved for bit-exact round trips
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(const char* p, std::size_t n) : p_(p), n_(n) {}

    void need(std::size_t k) const {
        if (pos_ + k > n_) throw FormatError(FormatIssue::Truncated, "container truncated");
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(
            static_cast<unsigned char>(p_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(
            static_cast<unsigned char>(p_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(p_[pos_++]);
    }

    std::string bytes(std::size_t k) {
        need(k);
        std::string s(p_ + pos_, k);
        pos_ += k;
        return s;
    }

    std::size_t remaining() const { return n_ - pos_; }

private:
    const char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Writes `content` to `path` through a temp file in the same directory plus
/// rename, so readers never observe a half-written artifact.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatIssue::Io, "cannot open '" + tmp + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            std::remove(tmp.c_str());
            throw FormatError(FormatIssue::Io, "short write to '" + tmp + "'");
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw FormatError(FormatIssue::Io, "cannot rename '" + tmp + "' to '" + path + "'");
    }
}

inline std::string serialize_container(const TensorContainer& c) {
    std::string out;
    out += "SDST";
    detail::put_u32(out, 1);  // version
    detail::put_u32(out, static_cast<std::uint32_t>(c.entries().size()));
    for (const auto& e : c.entries()) {
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        detail::put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) detail::put_u64(out, d);
        out.push_back(static_cast<char>(1));  // dtype f32
        const std::size_t payload = e.data.size() * sizeof(float);
        const std::size_t base = out.size();
        out.resize(base + payload);
        if (payload) std::memcpy(&out[base], e.data.data(), payload);
    }
    return out;
}

inline void write_container(const std::string& path, const TensorContainer& c) {
    write_file_atomic(path, serialize_container(c));
}

inline TensorContainer parse_container(const std::string& bytes) {
    detail::ByteReader r(bytes.data(), bytes.size());
    if (r.bytes(4) != "SDST") {
        throw FormatError(FormatIssue::BadMagic, "bad magic, not an SDST container");
    }
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw FormatError(FormatIssue::BadVersion,
                          "unsupported container version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    TensorContainer c;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = r.u32();
        if (name_len == 0) throw FormatError(FormatIssue::EmptyName, "tensor with empty name");
        TensorEntry e;
        e.name = r.bytes(name_len);
        const std::uint32_t ndim = r.u32();
        std::uint64_t numel = 1;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            const std::uint64_t d = r.u64();
            if (d != 0 && numel > (1ULL << 40) / d) {
                throw FormatError(FormatIssue::BadShape,
                                  "tensor '" + e.name + "' declares an implausible shape");
            }
            e.dims.push_back(d);
            numel *= d;
        }
        const std::uint8_t dtype = r.u8();
        if (dtype != 1) {
            throw FormatError(FormatIssue::BadDtype, "tensor '" + e.name + "' has dtype code " +
                                                         std::to_string(dtype) +
                                                         ", only f32 (1) is defined");
        }
        // validate the payload is really present before sizing the buffer
        const std::string payload = r.bytes(static_cast<std::size_t>(numel) * sizeof(float));
        e.data.resize(static_cast<std::size_t>(numel));
        if (numel) std::memcpy(e.data.data(), payload.data(), payload.size());
        c.add(std::move(e));
    }
    return c;
}

inline TensorContainer read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatIssue::Io, "cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_container(bytes);
}

}  // namespace sds
