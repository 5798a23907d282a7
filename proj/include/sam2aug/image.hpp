#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"

namespace sam2aug
{

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Voxel grid placement. World position of voxel (i,j,k) is
/// origin + (i,j,k) * spacing, in millimeters; no rotation is modeled.
struct Geometry
{
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const noexcept
    {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    std::size_t offset(int i, int j, int k) const noexcept
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }

    Index3 index_of(std::size_t off) const noexcept
    {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return {static_cast<int>(off % nx), static_cast<int>((off / nx) % ny), static_cast<int>(off / (nx * ny))};
    }

    bool contains(int i, int j, int k) const noexcept
    {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    Vec3 world(double i, double j, double k) const noexcept
    {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }

    /// World position of the grid's geometric center (midpoint of the corner voxel centers).
    Vec3 center() const noexcept
    {
        return world(0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1));
    }

    bool same_grid(const Geometry& o) const noexcept { return dims == o.dims; }

    bool operator==(const Geometry&) const = default;
};

inline void validate(const Geometry& g)
{
    for (int a = 0; a < 3; ++a) {
        if (g.dims[a] < 1)
            fail(Errc::InvalidArgument, "dims must be >= 1");
        if (!(g.spacing[a] > 0.0) || !std::isfinite(g.spacing[a]))
            fail(Errc::InvalidArgument, "spacing must be finite and > 0");
        if (!std::isfinite(g.origin[a]))
            fail(Errc::InvalidArgument, "origin must be finite");
    }
}

/// Scalar grid in x-fastest order.
template <typename T>
struct Image
{
    Geometry geom;
    std::vector<T> data;

    Image() = default;

    explicit Image(const Geometry& g, T fill = T{}) : geom(g), data(g.voxel_count(), fill) {}

    const Index3& dims() const noexcept { return geom.dims; }
    std::size_t size() const noexcept { return data.size(); }

    T& operator()(int i, int j, int k) noexcept { return data[geom.offset(i, j, k)]; }
    const T& operator()(int i, int j, int k) const noexcept { return data[geom.offset(i, j, k)]; }

    bool operator==(const Image&) const = default;
};

using Volume = Image<float>;
using BinaryMask = Image<std::uint8_t>;

inline void require_same_dims(const Geometry& a, const Geometry& b, const char* what)
{
    if (a.dims != b.dims)
        fail(Errc::GeometryMismatch, std::string(what) + ": dims differ");
}

inline bool is_binary(const BinaryMask& m) noexcept
{
    for (auto v : m.data)
        if (v > 1)
            return false;
    return true;
}

inline void validate_binary(const BinaryMask& m)
{
    if (!is_binary(m))
        fail(Errc::NonBinaryMask, "mask contains values outside {0,1}");
}

inline void validate_finite(const Volume& v)
{
    for (auto x : v.data)
        if (!std::isfinite(x))
            fail(Errc::InvalidArgument, "volume contains non-finite values");
}

inline std::size_t count_foreground(const BinaryMask& m) noexcept
{
    std::size_t n = 0;
    for (auto v : m.data)
        n += v != 0;
    return n;
}

inline BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b)
{
    require_same_dims(a.geom, b.geom, "intersection");
    BinaryMask out(a.geom);
    for (std::size_t n = 0; n < a.size(); ++n)
        out.data[n] = (a.data[n] && b.data[n]) ? 1 : 0;
    return out;
}

inline BinaryMask complement(const BinaryMask& m)
{
    BinaryMask out(m.geom);
    for (std::size_t n = 0; n < m.size(); ++n)
        out.data[n] = m.data[n] ? 0 : 1;
    return out;
}

/// a is a subset of b (as foreground sets).
inline bool is_subset(const BinaryMask& a, const BinaryMask& b)
{
    require_same_dims(a.geom, b.geom, "subset");
    for (std::size_t n = 0; n < a.size(); ++n)
        if (a.data[n] && !b.data[n])
            return false;
    return true;
}

} // namespace sam2aug
