#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "omnict/errors.hpp"

namespace omnict {

// Dense row-major f32 n-d array. Last index is fastest.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    Tensor() = default;

    Tensor(std::vector<std::int64_t> s, float fill) : shape(std::move(s)) {
        if (shape.empty()) throw ValidationError("tensor: shape must have at least one extent");
        std::int64_t n = 1;
        for (auto e : shape) {
            if (e < 1) throw ValidationError("tensor: extent must be >= 1, got " + std::to_string(e));
            n *= e;
        }
        data.assign(static_cast<std::size_t>(n), fill);
    }

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s), 0.0f); }
    static Tensor filled(std::vector<std::int64_t> s, float v) { return Tensor(std::move(s), v); }

    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    std::int64_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
    }
    std::int64_t extent(std::int64_t axis) const { return shape.at(static_cast<std::size_t>(axis)); }

    std::vector<std::int64_t> strides() const {
        std::vector<std::int64_t> st(shape.size());
        std::int64_t acc = 1;
        for (std::size_t i = shape.size(); i-- > 0;) {
            st[i] = acc;
            acc *= shape[i];
        }
        return st;
    }

    std::int64_t offset(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<std::int64_t>(idx.size()) != rank())
            throw ValidationError("tensor: index rank mismatch");
        std::int64_t off = 0, i = 0;
        for (auto v : idx) {
            if (v < 0 || v >= shape[static_cast<std::size_t>(i)])
                throw ValidationError("tensor: index out of bounds");
            off = off * shape[static_cast<std::size_t>(i)] + v;
            ++i;
        }
        return off;
    }

    float& at(std::initializer_list<std::int64_t> idx) { return data[static_cast<std::size_t>(offset(idx))]; }
    float at(std::initializer_list<std::int64_t> idx) const { return data[static_cast<std::size_t>(offset(idx))]; }
};

// SplitMix64. Fully specified, reproducible across platforms.
struct Prng {
    std::uint64_t state = 0;

    explicit Prng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) from the top 53 bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform1(double lo, double hi) {
        if (lo >= hi) throw ValidationError("prng: lo must be < hi");
        double v = lo + next_double() * (hi - lo);
        if (v >= hi) v = std::nextafter(hi, lo);
        return v;
    }

    std::vector<float> uniform(std::int64_t n, float lo, float hi) {
        if (lo >= hi) throw ValidationError("prng: lo must be < hi");
        std::vector<float> out(static_cast<std::size_t>(n));
        for (auto& v : out) {
            v = static_cast<float>(lo + next_double() * (static_cast<double>(hi) - lo));
            if (v >= hi) v = std::nextafter(hi, lo);
        }
        return out;
    }
};

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr char kOmctMagic[8] = {'O', 'M', 'C', 'T', '0', '0', '0', '1'};

// OMCT tensor container: magic, u32 LE header length, JSON header, f32 LE payload.
inline void tensor_write(const Tensor& t, const std::filesystem::path& path) {
    nlohmann::json header;
    header["dtype"] = "f32";
    header["order"] = "C";
    header["shape"] = t.shape;
    const std::string hs = header.dump();

    std::vector<unsigned char> buf;
    buf.reserve(12 + hs.size() + t.data.size() * 4);
    buf.insert(buf.end(), kOmctMagic, kOmctMagic + 8);
    detail::put_u32_le(buf, static_cast<std::uint32_t>(hs.size()));
    buf.insert(buf.end(), hs.begin(), hs.end());
    for (float f : t.data) {
        detail::put_u32_le(buf, std::bit_cast<std::uint32_t>(f));
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

inline Tensor tensor_read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), kOmctMagic, 8) != 0)
        throw FormatError("not an OMCT tensor file: " + path.string());
    const std::uint32_t hlen = detail::get_u32_le(buf.data() + 8);
    if (buf.size() < 12 + static_cast<std::size_t>(hlen))
        throw FormatError("truncated OMCT header: " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 12, buf.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad OMCT header JSON: ") + e.what());
    }
    if (header.value("dtype", "") != "f32" || header.value("order", "") != "C" || !header.contains("shape"))
        throw FormatError("unsupported OMCT header: " + path.string());

    std::vector<std::int64_t> shape = header["shape"].get<std::vector<std::int64_t>>();
    Tensor t(shape, 0.0f);
    const std::size_t payload = buf.size() - 12 - hlen;
    if (payload != t.data.size() * 4)
        throw FormatError("OMCT payload size mismatch: expected " + std::to_string(t.data.size() * 4) +
                          " bytes, found " + std::to_string(payload));
    const unsigned char* p = buf.data() + 12 + hlen;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        t.data[i] = std::bit_cast<float>(detail::get_u32_le(p + 4 * i));
    }
    return t;
}

}  // namespace omnict
