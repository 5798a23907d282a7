#pragma once

// Minimal NIfTI-1 (single-file "n+1") reader/writer plus a raw+JSON sidecar
// format. Supported: 3D, little-endian, uncompressed, uint8 / int16 / float32.
// Orientation matrices are not interpreted; only pixdim spacing and the
// qoffset origin are honored.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "image.hpp"

namespace sam2aug
{

enum class Dtype : std::int16_t
{
    UInt8 = 2,
    Int16 = 4,
    Float32 = 16,
};

inline std::string_view to_string(Dtype d) noexcept
{
    switch (d) {
    case Dtype::UInt8: return "uint8";
    case Dtype::Int16: return "int16";
    case Dtype::Float32: return "float32";
    }
    return "?";
}

inline Dtype parse_dtype(std::string_view s)
{
    if (s == "uint8")
        return Dtype::UInt8;
    if (s == "int16")
        return Dtype::Int16;
    if (s == "float32")
        return Dtype::Float32;
    fail(Errc::UnsupportedDatatype, std::string(s));
}

constexpr int bytes_per_voxel(Dtype d) noexcept
{
    return d == Dtype::UInt8 ? 1 : d == Dtype::Int16 ? 2 : 4;
}

namespace nifti
{

inline constexpr std::size_t header_size = 348;
inline constexpr std::size_t data_offset = 352;

// byte offsets of the fields we touch
inline constexpr std::size_t off_sizeof_hdr = 0;
inline constexpr std::size_t off_regular = 38;
inline constexpr std::size_t off_dim = 40;
inline constexpr std::size_t off_datatype = 70;
inline constexpr std::size_t off_bitpix = 72;
inline constexpr std::size_t off_pixdim = 76;
inline constexpr std::size_t off_vox_offset = 108;
inline constexpr std::size_t off_scl_slope = 112;
inline constexpr std::size_t off_scl_inter = 116;
inline constexpr std::size_t off_xyzt_units = 123;
inline constexpr std::size_t off_qform_code = 252;
inline constexpr std::size_t off_quatern_b = 256;
inline constexpr std::size_t off_qoffset = 268;
inline constexpr std::size_t off_magic = 344;

namespace detail
{

template <typename T>
T load_le(const unsigned char* p) noexcept
{
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

template <typename T>
void store_le(unsigned char* p, T v) noexcept
{
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b.begin(), b.end());
    std::memcpy(p, b.data(), sizeof(T));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(Errc::IoFailure, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        fail(Errc::IoFailure, "read error on " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(Errc::IoFailure, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(Errc::IoFailure, "write error on " + path.string());
}

/// Decode a little-endian payload into floats.
inline void decode_payload(const unsigned char* src, Dtype dtype, std::vector<float>& dst)
{
    const int bpv = bytes_per_voxel(dtype);
    for (std::size_t n = 0; n < dst.size(); ++n) {
        const unsigned char* p = src + n * static_cast<std::size_t>(bpv);
        switch (dtype) {
        case Dtype::UInt8: dst[n] = static_cast<float>(*p); break;
        case Dtype::Int16: dst[n] = static_cast<float>(load_le<std::int16_t>(p)); break;
        case Dtype::Float32: dst[n] = load_le<float>(p); break;
        }
    }
}

/// Check that every value is representable in dtype; optionally round and saturate.
template <typename T>
std::vector<unsigned char> encode_payload(const std::vector<T>& values, Dtype dtype, bool allow_rounding)
{
    const int bpv = bytes_per_voxel(dtype);
    std::vector<unsigned char> out(values.size() * static_cast<std::size_t>(bpv));
    auto integral = [&](double v, double lo, double hi) {
        if (!std::isfinite(v))
            fail(Errc::LossyDtype, "non-finite value cannot be stored as " + std::string(to_string(dtype)));
        const double r = std::nearbyint(v);
        if (!allow_rounding && (r != v || r < lo || r > hi))
            fail(Errc::LossyDtype,
                 "value " + std::to_string(v) + " not representable as " + std::string(to_string(dtype)));
        return std::clamp(r, lo, hi);
    };
    for (std::size_t n = 0; n < values.size(); ++n) {
        const double v = static_cast<double>(values[n]);
        unsigned char* p = out.data() + n * static_cast<std::size_t>(bpv);
        switch (dtype) {
        case Dtype::UInt8: *p = static_cast<std::uint8_t>(integral(v, 0.0, 255.0)); break;
        case Dtype::Int16: store_le(p, static_cast<std::int16_t>(integral(v, -32768.0, 32767.0))); break;
        case Dtype::Float32: {
            const auto f = static_cast<float>(values[n]);
            if (!std::isfinite(f))
                fail(Errc::LossyDtype, "non-finite value");
            store_le(p, f);
            break;
        }
        }
    }
    return out;
}

inline BinaryMask to_mask(const Volume& v)
{
    BinaryMask m(v.geom);
    for (std::size_t n = 0; n < v.size(); ++n) {
        const float r = std::nearbyint(v.data[n]);
        if (r != 0.0f && r != 1.0f)
            fail(Errc::NonBinaryMask, "voxel " + std::to_string(n) + " has value " + std::to_string(v.data[n]));
        m.data[n] = r == 1.0f ? 1 : 0;
    }
    return m;
}

} // namespace detail

/// Parsed header fields relevant to this subset.
struct Header
{
    Geometry geom;
    Dtype dtype = Dtype::Float32;
    float vox_offset = static_cast<float>(data_offset);
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
};

inline Header parse_header(const std::vector<unsigned char>& bytes)
{
    using detail::load_le;
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        fail(Errc::CompressedInput, "gzip-compressed NIfTI is not supported");
    if (bytes.size() < header_size)
        fail(Errc::MalformedHeader, "file shorter than 348 bytes");
    const unsigned char* h = bytes.data();
    const auto sizeof_hdr = load_le<std::int32_t>(h + off_sizeof_hdr);
    if (sizeof_hdr != 348) {
        if (sizeof_hdr == 0x5C010000)
            fail(Errc::MalformedHeader, "big-endian files are not supported");
        fail(Errc::MalformedHeader, "sizeof_hdr is " + std::to_string(sizeof_hdr));
    }
    if (std::memcmp(h + off_magic, "n+1\0", 4) != 0)
        fail(Errc::MalformedHeader, "magic is not \"n+1\"");

    std::array<std::int16_t, 8> dim{};
    for (int d = 0; d < 8; ++d)
        dim[d] = load_le<std::int16_t>(h + off_dim + 2 * d);
    if (dim[0] < 1 || dim[0] > 7)
        fail(Errc::MalformedHeader, "dim[0] out of range");
    Header out;
    for (int a = 0; a < 3; ++a) {
        const int n = a + 1 <= dim[0] ? dim[a + 1] : 1;
        if (n < 1)
            fail(Errc::MalformedHeader, "non-positive dimension");
        out.geom.dims[a] = n;
    }
    for (int d = 4; d <= dim[0]; ++d)
        if (dim[d] > 1)
            fail(Errc::MalformedHeader, "only 3D volumes are supported");

    const auto code = load_le<std::int16_t>(h + off_datatype);
    if (code != 2 && code != 4 && code != 16)
        fail(Errc::UnsupportedDatatype, "datatype code " + std::to_string(code));
    out.dtype = static_cast<Dtype>(code);
    const auto bitpix = load_le<std::int16_t>(h + off_bitpix);
    if (bitpix != 8 * bytes_per_voxel(out.dtype))
        fail(Errc::MalformedHeader, "bitpix does not match datatype");

    for (int a = 0; a < 3; ++a) {
        const float s = a + 1 <= dim[0] ? load_le<float>(h + off_pixdim + 4 * (a + 1)) : 1.0f;
        if (!(s > 0.0f) || !std::isfinite(s))
            fail(Errc::MalformedHeader, "pixdim must be positive");
        out.geom.spacing[a] = static_cast<double>(s);
        const float o = load_le<float>(h + off_qoffset + 4 * a);
        out.geom.origin[a] = std::isfinite(o) ? static_cast<double>(o) : 0.0;
    }
    out.vox_offset = load_le<float>(h + off_vox_offset);
    if (!(out.vox_offset >= static_cast<float>(header_size)))
        fail(Errc::MalformedHeader, "vox_offset before end of header");
    out.scl_slope = load_le<float>(h + off_scl_slope);
    out.scl_inter = load_le<float>(h + off_scl_inter);
    if (!std::isfinite(out.scl_slope))
        out.scl_slope = 0.0f;
    if (!std::isfinite(out.scl_inter))
        out.scl_inter = 0.0f;
    return out;
}

inline std::vector<unsigned char> make_header(const Geometry& g, Dtype dtype)
{
    using detail::store_le;
    std::vector<unsigned char> h(data_offset, 0);
    store_le<std::int32_t>(h.data() + off_sizeof_hdr, 348);
    h[off_regular] = 'r';
    const std::array<std::int16_t, 8> dim{3,
                                          static_cast<std::int16_t>(g.dims[0]),
                                          static_cast<std::int16_t>(g.dims[1]),
                                          static_cast<std::int16_t>(g.dims[2]),
                                          1,
                                          1,
                                          1,
                                          1};
    for (int d = 0; d < 8; ++d)
        store_le(h.data() + off_dim + 2 * d, dim[d]);
    store_le(h.data() + off_datatype, static_cast<std::int16_t>(dtype));
    store_le(h.data() + off_bitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(dtype)));
    const std::array<float, 8> pixdim{1.0f,
                                      static_cast<float>(g.spacing[0]),
                                      static_cast<float>(g.spacing[1]),
                                      static_cast<float>(g.spacing[2]),
                                      1.0f,
                                      1.0f,
                                      1.0f,
                                      1.0f};
    for (int d = 0; d < 8; ++d)
        store_le(h.data() + off_pixdim + 4 * d, pixdim[d]);
    store_le(h.data() + off_vox_offset, static_cast<float>(data_offset));
    store_le(h.data() + off_scl_slope, 1.0f);
    store_le(h.data() + off_scl_inter, 0.0f);
    h[off_xyzt_units] = 2; // mm
    store_le<std::int16_t>(h.data() + off_qform_code, 1);
    for (int a = 0; a < 3; ++a) {
        store_le(h.data() + off_quatern_b + 4 * a, 0.0f);
        store_le(h.data() + off_qoffset + 4 * a, static_cast<float>(g.origin[a]));
    }
    std::memcpy(h.data() + off_magic, "n+1\0", 4);
    return h;
}

} // namespace nifti

/// Load a scalar volume. Integer payloads are widened to float; scl_slope and
/// scl_inter are applied when the slope is nonzero.
inline Volume read_nifti(const std::filesystem::path& path)
{
    const auto bytes = nifti::detail::read_file(path);
    const auto hdr = nifti::parse_header(bytes);
    const auto offset = static_cast<std::size_t>(hdr.vox_offset);
    Volume v(hdr.geom);
    const std::size_t need = v.size() * static_cast<std::size_t>(bytes_per_voxel(hdr.dtype));
    if (bytes.size() < offset + need)
        fail(Errc::MalformedHeader, "payload truncated in " + path.string());
    nifti::detail::decode_payload(bytes.data() + offset, hdr.dtype, v.data);
    if (hdr.scl_slope != 0.0f && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f))
        for (auto& x : v.data)
            x = x * hdr.scl_slope + hdr.scl_inter;
    for (auto x : v.data)
        if (!std::isfinite(x))
            fail(Errc::MalformedHeader, "non-finite voxel value in " + path.string());
    return v;
}

/// Load a binary mask; values are rounded and must then be 0 or 1.
inline BinaryMask read_nifti_mask(const std::filesystem::path& path)
{
    return nifti::detail::to_mask(read_nifti(path));
}

inline void write_nifti(const Volume& v, const std::filesystem::path& path, Dtype dtype = Dtype::Float32,
                        bool allow_rounding = false)
{
    validate(v.geom);
    auto bytes = nifti::make_header(v.geom, dtype);
    const auto payload = nifti::detail::encode_payload(v.data, dtype, allow_rounding);
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    nifti::detail::write_file(path, bytes);
}

inline void write_nifti(const BinaryMask& m, const std::filesystem::path& path, Dtype dtype = Dtype::UInt8)
{
    validate(m.geom);
    validate_binary(m);
    auto bytes = nifti::make_header(m.geom, dtype);
    const auto payload = nifti::detail::encode_payload(m.data, dtype, false);
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    nifti::detail::write_file(path, bytes);
}

// Raw + JSON sidecar: <name>.json holds {"dims","spacing","origin","dtype"},
// <name>.raw holds the little-endian payload.

inline std::filesystem::path sidecar_raw_path(const std::filesystem::path& json_path)
{
    auto p = json_path;
    p.replace_extension(".raw");
    return p;
}

inline void write_sidecar(const Volume& v, const std::filesystem::path& json_path, Dtype dtype = Dtype::Float32,
                          bool allow_rounding = false)
{
    validate(v.geom);
    nlohmann::json j;
    j["dims"] = v.geom.dims;
    j["spacing"] = v.geom.spacing;
    j["origin"] = v.geom.origin;
    j["dtype"] = std::string(to_string(dtype));
    nifti::detail::write_file(sidecar_raw_path(json_path), nifti::detail::encode_payload(v.data, dtype, allow_rounding));
    std::ofstream out(json_path);
    if (!out)
        fail(Errc::IoFailure, "cannot create " + json_path.string());
    out << j.dump(2) << '\n';
}

inline void write_sidecar(const BinaryMask& m, const std::filesystem::path& json_path)
{
    validate_binary(m);
    Volume v(m.geom);
    std::copy(m.data.begin(), m.data.end(), v.data.begin());
    write_sidecar(v, json_path, Dtype::UInt8);
}

inline Volume read_sidecar(const std::filesystem::path& json_path)
{
    std::ifstream in(json_path);
    if (!in)
        fail(Errc::IoFailure, "cannot open " + json_path.string());
    nlohmann::json j;
    Geometry g;
    Dtype dtype;
    try {
        in >> j;
        g.dims = j.at("dims").get<Index3>();
        g.spacing = j.at("spacing").get<Vec3>();
        g.origin = j.at("origin").get<Vec3>();
        dtype = parse_dtype(j.at("dtype").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::MalformedHeader, json_path.string() + ": " + e.what());
    }
    try {
        validate(g);
    } catch (const Error& e) {
        fail(Errc::MalformedHeader, e.what());
    }
    const auto bytes = nifti::detail::read_file(sidecar_raw_path(json_path));
    Volume v(g);
    if (bytes.size() != v.size() * static_cast<std::size_t>(bytes_per_voxel(dtype)))
        fail(Errc::MalformedHeader, "raw payload size does not match dims");
    nifti::detail::decode_payload(bytes.data(), dtype, v.data);
    return v;
}

inline BinaryMask read_sidecar_mask(const std::filesystem::path& json_path)
{
    return nifti::detail::to_mask(read_sidecar(json_path));
}

} // namespace sam2aug
