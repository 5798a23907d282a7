#pragma once

#include <algorithm>
#include <array>
#include <string>

#include "error.hpp"
#include "image.hpp"

namespace sam2aug
{

/// Axis-aligned voxel box: min inclusive, max exclusive, zero-based.
/// A single-slice box has max[2] == min[2] + 1.
struct BBox3
{
    Index3 min{0, 0, 0};
    Index3 max{1, 1, 1};

    int extent(int axis) const noexcept { return max[axis] - min[axis]; }

    bool valid() const noexcept { return min[0] < max[0] && min[1] < max[1] && min[2] < max[2]; }

    bool within(const Index3& dims) const noexcept
    {
        for (int a = 0; a < 3; ++a)
            if (min[a] < 0 || max[a] > dims[a])
                return false;
        return true;
    }

    bool contains(int i, int j, int k) const noexcept
    {
        return i >= min[0] && i < max[0] && j >= min[1] && j < max[1] && k >= min[2] && k < max[2];
    }

    bool contains(const BBox3& o) const noexcept
    {
        for (int a = 0; a < 3; ++a)
            if (o.min[a] < min[a] || o.max[a] > max[a])
                return false;
        return true;
    }

    /// Flat wire order [x0, y0, z0, x1, y1, z1].
    std::array<int, 6> to_array() const noexcept { return {min[0], min[1], min[2], max[0], max[1], max[2]}; }

    static BBox3 from_array(const std::array<int, 6>& a) noexcept
    {
        return BBox3{{a[0], a[1], a[2]}, {a[3], a[4], a[5]}};
    }

    bool operator==(const BBox3&) const = default;
};

inline std::string to_string(const BBox3& b)
{
    return "(" + std::to_string(b.min[0]) + "," + std::to_string(b.min[1]) + "," + std::to_string(b.min[2]) + ")-(" +
           std::to_string(b.max[0]) + "," + std::to_string(b.max[1]) + "," + std::to_string(b.max[2]) + ")";
}

/// Per-face signed moves; positive pushes the face outward.
/// Order: x0 (left), x1 (right), y0 (top), y1 (bottom), z0, z1.
using FaceDeltas = std::array<int, 6>;

enum Face : int
{
    FaceX0 = 0,
    FaceX1 = 1,
    FaceY0 = 2,
    FaceY1 = 3,
    FaceZ0 = 4,
    FaceZ1 = 5,
};

/// Tight box around the foreground.
inline BBox3 mask_bbox(const BinaryMask& mask)
{
    const auto& d = mask.dims();
    Index3 lo{d[0], d[1], d[2]};
    Index3 hi{-1, -1, -1};
    std::size_t n = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i, ++n) {
                if (!mask.data[n])
                    continue;
                lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
            }
    if (hi[0] < 0)
        fail(Errc::EmptyMask, "mask has no foreground voxel");
    return BBox3{lo, {hi[0] + 1, hi[1] + 1, hi[2] + 1}};
}

/// Move each face by its delta and clip to [0, bounds]. An axis that would
/// become empty collapses to the single voxel at the pre-move midpoint
/// (lo + hi - 1) / 2, rounded down.
inline BBox3 expand_bbox(const BBox3& box, const FaceDeltas& deltas, const Index3& bounds)
{
    BBox3 out;
    for (int a = 0; a < 3; ++a) {
        int lo = box.min[a] - deltas[2 * a];
        int hi = box.max[a] + deltas[2 * a + 1];
        lo = std::clamp(lo, 0, bounds[a]);
        hi = std::clamp(hi, 0, bounds[a]);
        if (lo >= hi) {
            const int mid = std::clamp((box.min[a] + box.max[a] - 1) / 2, 0, bounds[a] - 1);
            lo = mid;
            hi = mid + 1;
        }
        out.min[a] = lo;
        out.max[a] = hi;
    }
    return out;
}

inline BinaryMask bbox_mask(const BBox3& box, const Geometry& geom)
{
    BinaryMask m(geom);
    const auto& d = geom.dims;
    for (int k = std::max(0, box.min[2]); k < std::min(d[2], box.max[2]); ++k)
        for (int j = std::max(0, box.min[1]); j < std::min(d[1], box.max[1]); ++j)
            for (int i = std::max(0, box.min[0]); i < std::min(d[0], box.max[0]); ++i)
                m(i, j, k) = 1;
    return m;
}

/// Foreground of mask restricted to box.
inline BinaryMask clip_to_bbox(const BinaryMask& mask, const BBox3& box)
{
    BinaryMask out(mask.geom);
    const auto& d = mask.dims();
    for (int k = std::max(0, box.min[2]); k < std::min(d[2], box.max[2]); ++k)
        for (int j = std::max(0, box.min[1]); j < std::min(d[1], box.max[1]); ++j)
            for (int i = std::max(0, box.min[0]); i < std::min(d[0], box.max[0]); ++i)
                out(i, j, k) = mask(i, j, k);
    return out;
}

} // namespace sam2aug
