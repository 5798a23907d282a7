#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace sam2aug
{

enum class Neighborhood
{
    Cross4InPlane, ///< +-x, +-y
    Cross6,        ///< +-x, +-y, +-z
    Cube26,        ///< full 3x3x3 minus center
};

inline std::string_view to_string(Neighborhood n) noexcept
{
    switch (n) {
    case Neighborhood::Cross4InPlane: return "cross4-in-plane";
    case Neighborhood::Cross6: return "cross6";
    case Neighborhood::Cube26: return "cube26";
    }
    return "?";
}

inline Neighborhood parse_neighborhood(std::string_view s)
{
    if (s == "cross4-in-plane")
        return Neighborhood::Cross4InPlane;
    if (s == "cross6")
        return Neighborhood::Cross6;
    if (s == "cube26")
        return Neighborhood::Cube26;
    fail(Errc::InvalidArgument, "unknown structuring element '" + std::string(s) + "'");
}

/// Unit neighborhood applied `radius` times.
struct StructuringElement
{
    Neighborhood kind = Neighborhood::Cross4InPlane;
    int radius = 1;

    StructuringElement() = default;
    StructuringElement(Neighborhood k, int r) : kind(k), radius(r)
    {
        if (r < 1)
            fail(Errc::InvalidArgument, "structuring element radius must be >= 1");
    }
};

inline std::vector<Index3> neighbor_offsets(Neighborhood n)
{
    switch (n) {
    case Neighborhood::Cross4InPlane: return {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}};
    case Neighborhood::Cross6: return {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    case Neighborhood::Cube26: {
        std::vector<Index3> out;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dx || dy || dz)
                        out.push_back({dx, dy, dz});
        return out;
    }
    }
    return {};
}

namespace detail
{

// One pass with the unit element. Erosion treats out-of-grid as background;
// dilation simply never writes outside the grid.
inline BinaryMask morph_step(const BinaryMask& in, std::span<const Index3> offs, bool erode)
{
    BinaryMask out(in.geom);
    const auto& d = in.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const bool self = in(i, j, k) != 0;
                bool v = self;
                if (erode && self) {
                    for (const auto& o : offs) {
                        const int x = i + o[0], y = j + o[1], z = k + o[2];
                        if (!in.geom.contains(x, y, z) || !in(x, y, z)) {
                            v = false;
                            break;
                        }
                    }
                } else if (!erode && !self) {
                    for (const auto& o : offs) {
                        const int x = i + o[0], y = j + o[1], z = k + o[2];
                        if (in.geom.contains(x, y, z) && in(x, y, z)) {
                            v = true;
                            break;
                        }
                    }
                }
                out(i, j, k) = v ? 1 : 0;
            }
    return out;
}

} // namespace detail

inline BinaryMask erode(const BinaryMask& mask, const StructuringElement& se)
{
    const auto offs = neighbor_offsets(se.kind);
    BinaryMask cur = mask;
    for (int r = 0; r < se.radius; ++r)
        cur = detail::morph_step(cur, offs, true);
    return cur;
}

inline BinaryMask dilate(const BinaryMask& mask, const StructuringElement& se)
{
    const auto offs = neighbor_offsets(se.kind);
    BinaryMask cur = mask;
    for (int r = 0; r < se.radius; ++r)
        cur = detail::morph_step(cur, offs, false);
    return cur;
}

/// 6-connected component count of the foreground.
inline int count_components(const BinaryMask& mask)
{
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<std::size_t> stack;
    const auto offs = neighbor_offsets(Neighborhood::Cross6);
    int count = 0;
    for (std::size_t s = 0; s < mask.size(); ++s) {
        if (!mask.data[s] || seen[s])
            continue;
        ++count;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const auto idx = mask.geom.index_of(stack.back());
            stack.pop_back();
            for (const auto& o : offs) {
                const int x = idx[0] + o[0], y = idx[1] + o[1], z = idx[2] + o[2];
                if (!mask.geom.contains(x, y, z))
                    continue;
                const auto n = mask.geom.offset(x, y, z);
                if (mask.data[n] && !seen[n]) {
                    seen[n] = 1;
                    stack.push_back(n);
                }
            }
        }
    }
    return count;
}

} // namespace sam2aug
