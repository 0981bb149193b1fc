#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "omnict/errors.hpp"
#include "omnict/volume.hpp"

namespace omnict {

namespace detail {

inline std::int16_t get_i16_le(const unsigned char* p) {
    return static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0]) |
                                     (static_cast<std::uint16_t>(p[1]) << 8));
}

inline float get_f32_le(const unsigned char* p) { return std::bit_cast<float>(get_u32_le(p)); }

}  // namespace detail

// Single-file uncompressed NIfTI-1 (.nii) subset: magic "n+1\0", datatype
// int16 (4) or float32 (16), dim[0] = 3. Header fields read: dim, datatype,
// bitpix, pixdim, vox_offset, scl_slope, scl_inter, magic. qform/sform are
// ignored; axis order is fixed as x fastest, then y, then z.
inline CTVolume load_nifti(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (buf.size() < 348) throw FormatError("NIfTI file shorter than its 348-byte header: " + path.string());
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
        throw FormatError("unsupported NIfTI magic (single-file n+1 form required): " + path.string());

    const std::int16_t ndim = detail::get_i16_le(buf.data() + 40);
    if (ndim != 3) throw FormatError("NIfTI dim[0] must be 3, got " + std::to_string(ndim));
    const std::int64_t nx = detail::get_i16_le(buf.data() + 42);
    const std::int64_t ny = detail::get_i16_le(buf.data() + 44);
    const std::int64_t nz = detail::get_i16_le(buf.data() + 46);
    if (nx < 1 || ny < 1 || nz < 1) throw FormatError("NIfTI dims must be >= 1");

    const std::int16_t datatype = detail::get_i16_le(buf.data() + 70);
    if (datatype != 4 && datatype != 16)
        throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype) +
                          " (int16 and float32 only)");
    const std::size_t elem = datatype == 4 ? 2 : 4;

    float slope = detail::get_f32_le(buf.data() + 112);
    const float inter = detail::get_f32_le(buf.data() + 116);
    if (slope == 0.0f) slope = 1.0f;

    const float vox_offset_f = detail::get_f32_le(buf.data() + 108);
    const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
    if (vox_offset_f < 348.0f) throw FormatError("NIfTI vox_offset below header size");

    const std::size_t need = static_cast<std::size_t>(nx * ny * nz) * elem;
    if (buf.size() < vox_offset + need)
        throw FormatError("NIfTI payload shorter than header promises: " + path.string());

    CTVolume vol;
    vol.data = Tensor::zeros({nz, ny, nx});
    const unsigned char* p = buf.data() + vox_offset;
    for (std::size_t i = 0; i < vol.data.data.size(); ++i) {
        // NIfTI stores x fastest; so does the D x H x W tensor at (z,y,x).
        const float raw = datatype == 4 ? static_cast<float>(detail::get_i16_le(p + i * 2))
                                        : detail::get_f32_le(p + i * 4);
        vol.data.data[i] = raw * slope + inter;
    }

    const float dx = detail::get_f32_le(buf.data() + 76 + 4);
    const float dy = detail::get_f32_le(buf.data() + 76 + 8);
    const float dz = detail::get_f32_le(buf.data() + 76 + 12);
    bool defaulted = false;
    auto spacing = [&](float s) -> double {
        if (s > 0.0f) return static_cast<double>(s);
        defaulted = true;
        return 1.0;
    };
    vol.meta.spacing_mm = {spacing(dz), spacing(dy), spacing(dx)};
    vol.meta.source = defaulted ? "nifti:default-spacing" : "nifti";
    return vol;
}

}  // namespace omnict
