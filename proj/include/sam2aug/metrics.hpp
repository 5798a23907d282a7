#pragma once

// Overlap and surface-distance metrics: Dice, normalized surface Dice (NSD),
// 95th-percentile Hausdorff (HD95) and average surface distance (ASD).
//
// Surfaces are foreground voxels with at least one background or out-of-grid
// 6-neighbour. Distances between surfaces come either from an exact squared
// Euclidean distance transform (separable lower-envelope passes, per-axis
// weights for anisotropic spacing) or from brute-force all-pairs search.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "image.hpp"

namespace sam2aug
{

enum class DistanceUnit
{
    Voxel,
    Mm,
};

enum class DistanceMode
{
    Edt,
    Brute,
};

inline std::string_view to_string(DistanceUnit u) noexcept { return u == DistanceUnit::Voxel ? "voxel" : "mm"; }
inline std::string_view to_string(DistanceMode m) noexcept { return m == DistanceMode::Edt ? "edt" : "brute"; }

inline DistanceUnit parse_unit(std::string_view s)
{
    if (s == "voxel")
        return DistanceUnit::Voxel;
    if (s == "mm")
        return DistanceUnit::Mm;
    fail(Errc::InvalidArgument, "unit must be 'voxel' or 'mm'");
}

inline DistanceMode parse_mode(std::string_view s)
{
    if (s == "edt")
        return DistanceMode::Edt;
    if (s == "brute")
        return DistanceMode::Brute;
    fail(Errc::InvalidArgument, "mode must be 'edt' or 'brute'");
}

struct SurfaceSet
{
    Geometry geom;
    std::vector<Index3> points; ///< x-fastest scan order, no duplicates
};

inline SurfaceSet surface_voxels(const BinaryMask& mask)
{
    static constexpr int offs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    SurfaceSet s{mask.geom, {}};
    const auto& d = mask.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!mask(i, j, k))
                    continue;
                for (const auto& o : offs) {
                    const int x = i + o[0], y = j + o[1], z = k + o[2];
                    if (!mask.geom.contains(x, y, z) || !mask(x, y, z)) {
                        s.points.push_back({i, j, k});
                        break;
                    }
                }
            }
    return s;
}

inline Vec3 axis_weights(const Geometry& g, DistanceUnit unit) noexcept
{
    if (unit == DistanceUnit::Voxel)
        return {1.0, 1.0, 1.0};
    return {g.spacing[0] * g.spacing[0], g.spacing[1] * g.spacing[1], g.spacing[2] * g.spacing[2]};
}

namespace detail
{

/// 1D lower envelope of parabolas w*(p-q)^2 + f[q] over finite f[q].
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, double w, std::vector<int>& v,
                   std::vector<double>& z)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf)
            continue;
        while (k >= 0) {
            const int r = v[k];
            const double s = ((f[q] + w * q * q) - (f[r] + w * r * r)) / (2.0 * w * (q - r));
            if (s <= z[k]) {
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
        }
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    int j = 0;
    for (int p = 0; p < n; ++p) {
        while (j < k && z[j + 1] < p)
            ++j;
        const double dp = static_cast<double>(p - v[j]);
        d[p] = f[v[j]] + w * (dp * dp);
    }
}

} // namespace detail

/// Exact squared distance from every voxel to the nearest point of `points`.
inline std::vector<double> squared_edt(const Geometry& geom, const std::vector<Index3>& points, const Vec3& weights)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(geom.voxel_count(), inf);
    for (const auto& p : points)
        g[geom.offset(p[0], p[1], p[2])] = 0.0;
    const auto& dims = geom.dims;
    const int longest = std::max({dims[0], dims[1], dims[2]});
    std::vector<double> f(longest), d(longest), z(longest + 1);
    std::vector<int> v(longest);
    for (int axis = 0; axis < 3; ++axis) {
        const int n = dims[axis];
        f.resize(n);
        d.resize(n);
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        for (int u = 0; u < dims[a1]; ++u)
            for (int w = 0; w < dims[a2]; ++w) {
                Index3 idx{};
                idx[a1] = u;
                idx[a2] = w;
                for (int q = 0; q < n; ++q) {
                    idx[axis] = q;
                    f[q] = g[geom.offset(idx[0], idx[1], idx[2])];
                }
                detail::edt_1d(f, d, weights[axis], v, z);
                for (int q = 0; q < n; ++q) {
                    idx[axis] = q;
                    g[geom.offset(idx[0], idx[1], idx[2])] = d[q];
                }
            }
    }
    return g;
}

/// Squared nearest-surface distances in both directions.
struct DirectedDistances
{
    std::vector<double> a_to_b_sq; ///< d(x, S_b)^2 for x in a, in a's point order
    std::vector<double> b_to_a_sq; ///< d(y, S_a)^2 for y in b
};

inline std::vector<double> sqrt_all(const std::vector<double>& sq)
{
    std::vector<double> out(sq.size());
    std::transform(sq.begin(), sq.end(), out.begin(), [](double x) { return std::sqrt(x); });
    return out;
}

inline double squared_distance(const Index3& p, const Index3& q, const Vec3& w) noexcept
{
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    return w[0] * (dx * dx) + w[1] * (dy * dy) + w[2] * (dz * dz);
}

inline std::vector<double> brute_directed_sq(const std::vector<Index3>& from, const std::vector<Index3>& to,
                                             const Vec3& w)
{
    std::vector<double> out(from.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < from.size(); ++i)
        for (const auto& q : to)
            out[i] = std::min(out[i], squared_distance(from[i], q, w));
    return out;
}

inline DirectedDistances surface_distances(const SurfaceSet& a, const SurfaceSet& b, DistanceUnit unit,
                                           DistanceMode mode)
{
    require_same_dims(a.geom, b.geom, "surface_distances");
    if (a.points.empty() || b.points.empty())
        fail(Errc::EmptySurface, "surface distance needs two non-empty surfaces");
    const Vec3 w = axis_weights(a.geom, unit);
    DirectedDistances out;
    if (mode == DistanceMode::Brute) {
        out.a_to_b_sq = brute_directed_sq(a.points, b.points, w);
        out.b_to_a_sq = brute_directed_sq(b.points, a.points, w);
        return out;
    }
    const auto to_b = squared_edt(a.geom, b.points, w);
    const auto to_a = squared_edt(a.geom, a.points, w);
    out.a_to_b_sq.reserve(a.points.size());
    for (const auto& p : a.points)
        out.a_to_b_sq.push_back(to_b[a.geom.offset(p[0], p[1], p[2])]);
    out.b_to_a_sq.reserve(b.points.size());
    for (const auto& p : b.points)
        out.b_to_a_sq.push_back(to_a[a.geom.offset(p[0], p[1], p[2])]);
    return out;
}

/// Nearest-rank percentile: ascending sort, 1-based rank ceil(pct/100 * n).
inline double nearest_rank_percentile(std::vector<double> values, int pct)
{
    if (values.empty())
        fail(Errc::InvalidArgument, "percentile of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::size_t rank = (static_cast<std::size_t>(pct) * n + 99) / 100;
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
}

// ---------------------------------------------------------------------------
// Metrics

enum class Degenerate
{
    None,
    BothEmpty,
    OneEmpty,
};

inline std::string_view to_string(Degenerate d) noexcept
{
    switch (d) {
    case Degenerate::None: return "none";
    case Degenerate::BothEmpty: return "both_empty";
    case Degenerate::OneEmpty: return "one_empty";
    }
    return "?";
}

struct MetricConfig
{
    double tau = 0.5;
    DistanceUnit unit = DistanceUnit::Voxel;
    DistanceMode mode = DistanceMode::Edt;
};

struct MetricReport
{
    double dice = 0.0;
    double nsd = 0.0;
    std::optional<double> hd95;
    std::optional<double> asd;
    DistanceUnit unit = DistanceUnit::Voxel;
    double tau = 0.5;
    Degenerate degenerate = Degenerate::None;
};

/// 2|G and P| / (|G| + |P|); two empty masks score 1.
inline double dice(const BinaryMask& g, const BinaryMask& p)
{
    require_same_dims(g.geom, p.geom, "dice");
    std::size_t inter = 0, ng = 0, np = 0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        ng += g.data[n] != 0;
        np += p.data[n] != 0;
        inter += g.data[n] && p.data[n];
    }
    if (ng + np == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ng + np);
}

namespace detail
{

inline double nsd_from(const DirectedDistances& d, double tau)
{
    std::size_t hits = 0;
    for (double x : d.a_to_b_sq)
        hits += std::sqrt(x) <= tau;
    for (double x : d.b_to_a_sq)
        hits += std::sqrt(x) <= tau;
    return static_cast<double>(hits) / static_cast<double>(d.a_to_b_sq.size() + d.b_to_a_sq.size());
}

inline double hd95_from(const DirectedDistances& d)
{
    return std::max(nearest_rank_percentile(sqrt_all(d.a_to_b_sq), 95),
                    nearest_rank_percentile(sqrt_all(d.b_to_a_sq), 95));
}

inline double asd_from(const DirectedDistances& d)
{
    double sum = 0.0;
    for (double x : d.a_to_b_sq)
        sum += std::sqrt(x);
    for (double x : d.b_to_a_sq)
        sum += std::sqrt(x);
    return sum / static_cast<double>(d.a_to_b_sq.size() + d.b_to_a_sq.size());
}

inline Degenerate classify(const SurfaceSet& sg, const SurfaceSet& sp) noexcept
{
    if (sg.points.empty() && sp.points.empty())
        return Degenerate::BothEmpty;
    if (sg.points.empty() || sp.points.empty())
        return Degenerate::OneEmpty;
    return Degenerate::None;
}

} // namespace detail

inline double nsd(const BinaryMask& g, const BinaryMask& p, double tau = 0.5, DistanceUnit unit = DistanceUnit::Voxel,
                  DistanceMode mode = DistanceMode::Edt)
{
    require_same_dims(g.geom, p.geom, "nsd");
    const auto sg = surface_voxels(g), sp = surface_voxels(p);
    switch (detail::classify(sg, sp)) {
    case Degenerate::BothEmpty: return 1.0;
    case Degenerate::OneEmpty: return 0.0;
    case Degenerate::None: break;
    }
    return detail::nsd_from(surface_distances(sg, sp, unit, mode), tau);
}

inline double hd95(const BinaryMask& g, const BinaryMask& p, DistanceUnit unit = DistanceUnit::Voxel,
                   DistanceMode mode = DistanceMode::Edt)
{
    require_same_dims(g.geom, p.geom, "hd95");
    const auto sg = surface_voxels(g), sp = surface_voxels(p);
    switch (detail::classify(sg, sp)) {
    case Degenerate::BothEmpty: return 0.0;
    case Degenerate::OneEmpty: fail(Errc::UndefinedDistance, "hd95 with exactly one empty mask");
    case Degenerate::None: break;
    }
    return detail::hd95_from(surface_distances(sg, sp, unit, mode));
}

inline double asd(const BinaryMask& g, const BinaryMask& p, DistanceUnit unit = DistanceUnit::Voxel,
                  DistanceMode mode = DistanceMode::Edt)
{
    require_same_dims(g.geom, p.geom, "asd");
    const auto sg = surface_voxels(g), sp = surface_voxels(p);
    switch (detail::classify(sg, sp)) {
    case Degenerate::BothEmpty: return 0.0;
    case Degenerate::OneEmpty: fail(Errc::UndefinedDistance, "asd with exactly one empty mask");
    case Degenerate::None: break;
    }
    return detail::asd_from(surface_distances(sg, sp, unit, mode));
}

/// All four metrics with one surface extraction and one distance computation.
/// Both empty: (1, 1, 0, 0). One empty: dice 0, nsd 0, distances undefined.
inline MetricReport evaluate_case(const BinaryMask& g, const BinaryMask& p, const MetricConfig& cfg = {})
{
    require_same_dims(g.geom, p.geom, "evaluate_case");
    MetricReport r;
    r.unit = cfg.unit;
    r.tau = cfg.tau;
    r.dice = dice(g, p);
    const auto sg = surface_voxels(g), sp = surface_voxels(p);
    r.degenerate = detail::classify(sg, sp);
    switch (r.degenerate) {
    case Degenerate::BothEmpty:
        r.nsd = 1.0;
        r.hd95 = 0.0;
        r.asd = 0.0;
        return r;
    case Degenerate::OneEmpty:
        r.dice = 0.0;
        r.nsd = 0.0;
        return r;
    case Degenerate::None: break;
    }
    const auto d = surface_distances(sg, sp, cfg.unit, cfg.mode);
    r.nsd = detail::nsd_from(d, cfg.tau);
    r.hd95 = detail::hd95_from(d);
    r.asd = detail::asd_from(d);
    return r;
}

// ---------------------------------------------------------------------------
// Serialization

/// Fixed textual form for reports ("%.10g"); keeps CSV output byte-stable.
inline std::string format_number(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::string format_optional(const std::optional<double>& x) { return x ? format_number(*x) : "NA"; }

inline nlohmann::json to_json_value(const std::optional<double>& x)
{
    return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const MetricReport& r)
{
    j = nlohmann::json{{"dice", r.dice},
                       {"nsd", r.nsd},
                       {"hd95", to_json_value(r.hd95)},
                       {"asd", to_json_value(r.asd)},
                       {"unit", std::string(to_string(r.unit))},
                       {"tau", r.tau},
                       {"degenerate", std::string(to_string(r.degenerate))}};
}

inline constexpr std::string_view metric_csv_header = "case_id,dice,nsd,hd95,asd,unit,tau,degenerate";

inline std::string metric_csv_row(const std::string& case_id, const MetricReport& r)
{
    return case_id + "," + format_number(r.dice) + "," + format_number(r.nsd) + "," + format_optional(r.hd95) + "," +
           format_optional(r.asd) + "," + std::string(to_string(r.unit)) + "," + format_number(r.tau) + "," +
           std::string(to_string(r.degenerate));
}

} // namespace sam2aug
