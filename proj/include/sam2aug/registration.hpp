#pragma once

// Rigid 6-DOF intensity registration and resampling.
//
// Transform convention (used everywhere in this library):
//   A RigidTransform maps a point p of the fixed space into moving space,
//       q = R (p - c) + c + t,   R = Rz(rz) * Ry(ry) * Rx(rx),
//   where c is the world-space (mm) center of the fixed grid.
//   Resampling pulls: out(p) = moving(q). register_rigid(fixed, moving)
//   returns the t for which moving(t(p)) best matches fixed(p). A moving
//   image whose content sits +3 mm further along x than in the fixed image
//   is therefore recovered as tx = +3.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "image.hpp"

namespace sam2aug
{

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 matmul(const Mat3& a, const Mat3& b) noexcept
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                r[i][j] += a[i][k] * b[k][j];
    return r;
}

inline Mat3 transpose(const Mat3& a) noexcept
{
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            r[i][j] = a[j][i];
    return r;
}

inline Vec3 matvec(const Mat3& a, const Vec3& v) noexcept
{
    return {a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2], a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2]};
}

struct RigidTransform
{
    Vec3 rotation{0.0, 0.0, 0.0};    ///< radians about x, y, z
    Vec3 translation{0.0, 0.0, 0.0}; ///< millimeters

    static RigidTransform identity() noexcept { return {}; }

    Mat3 matrix() const noexcept
    {
        const double cx = std::cos(rotation[0]), sx = std::sin(rotation[0]);
        const double cy = std::cos(rotation[1]), sy = std::sin(rotation[1]);
        const double cz = std::cos(rotation[2]), sz = std::sin(rotation[2]);
        const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
        const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
        const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
        return matmul(rz, matmul(ry, rx));
    }

    /// Inverse of matrix(); valid for |ry| < pi/2.
    static Vec3 angles_from_matrix(const Mat3& r) noexcept
    {
        const double ry = std::asin(std::clamp(-r[2][0], -1.0, 1.0));
        const double rx = std::atan2(r[2][1], r[2][2]);
        const double rz = std::atan2(r[1][0], r[0][0]);
        return {rx, ry, rz};
    }

    Vec3 apply(const Vec3& p, const Vec3& center) const noexcept
    {
        const Vec3 d{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
        const Vec3 r = matvec(matrix(), d);
        return {r[0] + center[0] + translation[0], r[1] + center[1] + translation[1],
                r[2] + center[2] + translation[2]};
    }

    /// Inverse about the same center: R^T and -R^T t.
    RigidTransform inverse() const noexcept
    {
        const Mat3 rt = transpose(matrix());
        const Vec3 t = matvec(rt, translation);
        return {angles_from_matrix(rt), {-t[0], -t[1], -t[2]}};
    }

    /// (*this) after `first`, both about the same center.
    RigidTransform compose(const RigidTransform& first) const noexcept
    {
        const Mat3 ra = matrix();
        const Vec3 tb = matvec(ra, first.translation);
        return {angles_from_matrix(matmul(ra, first.matrix())),
                {tb[0] + translation[0], tb[1] + translation[1], tb[2] + translation[2]}};
    }

    bool operator==(const RigidTransform&) const = default;
};

inline void to_json(nlohmann::json& j, const RigidTransform& t)
{
    j = nlohmann::json{{"rotation_rad", t.rotation}, {"translation_mm", t.translation}};
}

inline void from_json(const nlohmann::json& j, RigidTransform& t)
{
    t.rotation = j.at("rotation_rad").get<Vec3>();
    t.translation = j.at("translation_mm").get<Vec3>();
    for (int a = 0; a < 3; ++a)
        if (!std::isfinite(t.rotation[a]) || !std::isfinite(t.translation[a]))
            fail(Errc::InvalidArgument, "transform parameters must be finite");
}

enum class Interpolation
{
    Trilinear,
    Nearest,
};

enum class SimilarityMetric
{
    Mse,
    Ncc,
};

// ---------------------------------------------------------------------------
// Resampling

struct Resampled
{
    Volume image;
    BinaryMask support; ///< 1 where the sample point fell inside the moving grid
};

namespace detail
{

inline constexpr double inside_eps = 1e-6;

/// Affine map from target voxel index to moving continuous index.
struct IndexMap
{
    Mat3 a{};
    Vec3 b{};

    Vec3 operator()(double i, double j, double k) const noexcept
    {
        return {a[0][0] * i + a[0][1] * j + a[0][2] * k + b[0], a[1][0] * i + a[1][1] * j + a[1][2] * k + b[1],
                a[2][0] * i + a[2][1] * j + a[2][2] * k + b[2]};
    }
};

inline IndexMap make_index_map(const Geometry& target, const Geometry& moving, const RigidTransform& t,
                               const Vec3& center)
{
    const Mat3 r = t.matrix();
    IndexMap m;
    // p = origin_t + spacing_t * idx ; q = R (p - c) + c + t ; idx_m = (q - origin_m) / spacing_m
    const Vec3 p0{target.origin[0] - center[0], target.origin[1] - center[1], target.origin[2] - center[2]};
    const Vec3 rp0 = matvec(r, p0);
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col)
            m.a[row][col] = r[row][col] * target.spacing[col] / moving.spacing[row];
        m.b[row] = (rp0[row] + center[row] + t.translation[row] - moving.origin[row]) / moving.spacing[row];
    }
    return m;
}

inline bool axis_inside(double c, int n) noexcept
{
    return c >= -inside_eps && c <= static_cast<double>(n - 1) + inside_eps;
}

inline bool sample_linear(const Volume& v, const Vec3& c, double& out) noexcept
{
    const auto& d = v.dims();
    if (!axis_inside(c[0], d[0]) || !axis_inside(c[1], d[1]) || !axis_inside(c[2], d[2]))
        return false;
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 1) {
            i0[a] = 0;
            f[a] = 0.0;
            continue;
        }
        const double cc = std::clamp(c[a], 0.0, static_cast<double>(d[a] - 1));
        i0[a] = std::min(static_cast<int>(std::floor(cc)), d[a] - 2);
        f[a] = cc - i0[a];
    }
    const int i1[3] = {std::min(i0[0] + 1, d[0] - 1), std::min(i0[1] + 1, d[1] - 1), std::min(i0[2] + 1, d[2] - 1)};
    auto at = [&](int x, int y, int z) { return static_cast<double>(v(x, y, z)); };
    const double c00 = at(i0[0], i0[1], i0[2]) * (1 - f[0]) + at(i1[0], i0[1], i0[2]) * f[0];
    const double c10 = at(i0[0], i1[1], i0[2]) * (1 - f[0]) + at(i1[0], i1[1], i0[2]) * f[0];
    const double c01 = at(i0[0], i0[1], i1[2]) * (1 - f[0]) + at(i1[0], i0[1], i1[2]) * f[0];
    const double c11 = at(i0[0], i1[1], i1[2]) * (1 - f[0]) + at(i1[0], i1[1], i1[2]) * f[0];
    const double c0 = c00 * (1 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1 - f[1]) + c11 * f[1];
    out = c0 * (1 - f[2]) + c1 * f[2];
    return true;
}

template <typename T>
bool sample_nearest(const Image<T>& v, const Vec3& c, T& out) noexcept
{
    const int x = static_cast<int>(std::floor(c[0] + 0.5));
    const int y = static_cast<int>(std::floor(c[1] + 0.5));
    const int z = static_cast<int>(std::floor(c[2] + 0.5));
    if (!v.geom.contains(x, y, z))
        return false;
    out = v(x, y, z);
    return true;
}

} // namespace detail

/// Pull-resample `moving` onto `target` through t, rotating about `center`.
/// Out-of-grid samples are 0 and excluded from the support mask.
inline Resampled resample(const Volume& moving, const RigidTransform& t, const Geometry& target,
                          Interpolation interp, const Vec3& center)
{
    const auto map = detail::make_index_map(target, moving.geom, t, center);
    Resampled out{Volume(target, 0.0f), BinaryMask(target, 0)};
    std::size_t n = 0;
    for (int k = 0; k < target.dims[2]; ++k)
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i, ++n) {
                const Vec3 c = map(i, j, k);
                if (interp == Interpolation::Trilinear) {
                    double v;
                    if (detail::sample_linear(moving, c, v)) {
                        out.image.data[n] = static_cast<float>(v);
                        out.support.data[n] = 1;
                    }
                } else {
                    float v;
                    if (detail::sample_nearest(moving, c, v)) {
                        out.image.data[n] = v;
                        out.support.data[n] = 1;
                    }
                }
            }
    return out;
}

inline Resampled resample(const Volume& moving, const RigidTransform& t, const Geometry& target,
                          Interpolation interp = Interpolation::Trilinear)
{
    return resample(moving, t, target, interp, target.center());
}

/// Nearest-neighbour warp of a mask; out-of-grid maps to background.
inline BinaryMask propagate_mask(const BinaryMask& prior_mask, const RigidTransform& t, const Geometry& target)
{
    const auto map = detail::make_index_map(target, prior_mask.geom, t, target.center());
    BinaryMask out(target, 0);
    std::size_t n = 0;
    for (int k = 0; k < target.dims[2]; ++k)
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i, ++n) {
                std::uint8_t v = 0;
                if (detail::sample_nearest(prior_mask, map(i, j, k), v))
                    out.data[n] = v ? 1 : 0;
            }
    return out;
}

// ---------------------------------------------------------------------------
// Similarity

/// Cost where lower is better: MSE, or 1 - NCC. Computed over voxels with
/// support set (all voxels when support is null).
inline double similarity(const Volume& fixed, const Volume& moving_resampled, SimilarityMetric metric,
                         const BinaryMask* support = nullptr)
{
    require_same_dims(fixed.geom, moving_resampled.geom, "similarity");
    if (support)
        require_same_dims(fixed.geom, support->geom, "similarity support");
    double n = 0, sf = 0, sm = 0, sff = 0, smm = 0, sfm = 0, sse = 0;
    for (std::size_t v = 0; v < fixed.size(); ++v) {
        if (support && !support->data[v])
            continue;
        const double f = fixed.data[v], m = moving_resampled.data[v];
        n += 1;
        sse += (f - m) * (f - m);
        sf += f;
        sm += m;
        sff += f * f;
        smm += m * m;
        sfm += f * m;
    }
    if (n == 0)
        fail(Errc::EmptyOverlap, "no in-bounds voxels");
    if (metric == SimilarityMetric::Mse)
        return sse / n;
    const double cov = sfm - sf * sm / n;
    const double vf = sff - sf * sf / n;
    const double vm = smm - sm * sm / n;
    if (!(vf > 0.0) || !(vm > 0.0))
        return 1.0;
    return 1.0 - std::clamp(cov / std::sqrt(vf * vm), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Registration

struct RegConfig
{
    SimilarityMetric metric = SimilarityMetric::Mse;
    std::vector<int> pyramid{4, 2, 1};
    int max_iters = 200;
    double trans_step_mm = 1.0;   ///< initial translation step at factor 1; scaled by the factor
    double rot_step_rad = 0.01;   ///< initial rotation step at factor 1; scaled by the factor
    double tolerance = 1e-3;      ///< stop when the joint step norm (rad and mm) drops below this
    double min_overlap = 0.25;    ///< candidates with a smaller in-bounds fraction are rejected
    int max_line_steps = 32;
    double smoothing_sigma_vox = 1.5; ///< Gaussian pre-smoothing of both inputs; 0 disables
};

inline void validate(const RegConfig& c)
{
    if (c.pyramid.empty())
        fail(Errc::InvalidArgument, "pyramid must not be empty");
    for (std::size_t i = 0; i < c.pyramid.size(); ++i) {
        if (c.pyramid[i] < 1)
            fail(Errc::InvalidArgument, "pyramid factors must be positive");
        if (i > 0 && c.pyramid[i] > c.pyramid[i - 1])
            fail(Errc::InvalidArgument, "pyramid factors must be non-increasing");
    }
    if (c.max_iters < 1)
        fail(Errc::InvalidArgument, "max_iters must be >= 1");
    if (!(c.tolerance > 0.0) || !(c.trans_step_mm > 0.0) || !(c.rot_step_rad > 0.0))
        fail(Errc::InvalidArgument, "steps and tolerance must be positive");
    if (!(c.smoothing_sigma_vox >= 0.0))
        fail(Errc::InvalidArgument, "smoothing_sigma_vox must be >= 0");
}

struct LevelTrace
{
    int factor = 1;
    int iterations = 0;
    bool converged = false;
    std::vector<double> accepted_costs; ///< starting cost followed by every accepted step
};

struct RegistrationResult
{
    RigidTransform transform;
    double final_cost = 0.0;
    bool iterations_exhausted = false;
    std::vector<LevelTrace> levels;
};

/// Block-average downsampling; world positions of the new voxel centers are
/// the means of their block's centers.
inline Volume downsample(const Volume& v, int factor)
{
    if (factor <= 1)
        return v;
    Geometry g = v.geom;
    Index3 f{};
    for (int a = 0; a < 3; ++a) {
        f[a] = std::min(factor, v.geom.dims[a]);
        g.dims[a] = v.geom.dims[a] / f[a];
        g.spacing[a] = v.geom.spacing[a] * f[a];
        g.origin[a] = v.geom.origin[a] + 0.5 * (f[a] - 1) * v.geom.spacing[a];
    }
    Volume out(g, 0.0f);
    const double inv = 1.0 / (static_cast<double>(f[0]) * f[1] * f[2]);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                double acc = 0.0;
                for (int dz = 0; dz < f[2]; ++dz)
                    for (int dy = 0; dy < f[1]; ++dy)
                        for (int dx = 0; dx < f[0]; ++dx)
                            acc += v(i * f[0] + dx, j * f[1] + dy, k * f[2] + dz);
                out(i, j, k) = static_cast<float>(acc * inv);
            }
    return out;
}

/// Separable Gaussian blur with sigma in voxels; the kernel is truncated at
/// 3 sigma and renormalized where it overhangs the grid.
inline Volume gaussian_smooth(const Volume& v, double sigma_vox)
{
    if (!(sigma_vox > 0.0))
        return v;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_vox));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
    Volume cur = v;
    const auto& d = v.geom.dims;
    for (int axis = 0; axis < 3; ++axis) {
        Volume out(v.geom);
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const Index3 at{i, j, k};
                    double acc = 0.0, wsum = 0.0;
                    for (int o = -radius; o <= radius; ++o) {
                        Index3 q = at;
                        q[axis] += o;
                        if (q[axis] < 0 || q[axis] >= d[axis])
                            continue;
                        const double w = kernel[static_cast<std::size_t>(o + radius)];
                        acc += w * cur(q[0], q[1], q[2]);
                        wsum += w;
                    }
                    out(i, j, k) = static_cast<float>(acc / wsum);
                }
        cur = std::move(out);
    }
    return cur;
}

namespace detail
{

inline void require_nondegenerate(const Volume& v, const char* which)
{
    if (v.data.empty())
        fail(Errc::DegenerateInput, std::string(which) + " volume is empty");
    const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
    if (!(*hi > *lo))
        fail(Errc::DegenerateInput, std::string(which) + " volume has zero intensity range");
}

/// Cost of a parameter vector at one pyramid level; +inf when overlap is too small.
class LevelCost
{
public:
    LevelCost(const Volume& fixed, const Volume& moving, const Vec3& center, const RegConfig& cfg)
        : fixed_(fixed), moving_(moving), center_(center), cfg_(cfg)
    {
    }

    double operator()(const std::array<double, 6>& p) const
    {
        const RigidTransform t{{p[0], p[1], p[2]}, {p[3], p[4], p[5]}};
        const auto map = make_index_map(fixed_.geom, moving_.geom, t, center_);
        const auto& d = fixed_.geom.dims;
        double n = 0, sf = 0, sm = 0, sff = 0, smm = 0, sfm = 0, sse = 0;
        std::size_t idx = 0;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i, ++idx) {
                    double m;
                    if (!sample_linear(moving_, map(i, j, k), m))
                        continue;
                    const double f = fixed_.data[idx];
                    n += 1;
                    sse += (f - m) * (f - m);
                    sf += f;
                    sm += m;
                    sff += f * f;
                    smm += m * m;
                    sfm += f * m;
                }
        if (n == 0 || n < cfg_.min_overlap * static_cast<double>(fixed_.size()))
            return std::numeric_limits<double>::infinity();
        if (cfg_.metric == SimilarityMetric::Mse)
            return sse / n;
        const double cov = sfm - sf * sm / n;
        const double vf = sff - sf * sf / n;
        const double vm = smm - sm * sm / n;
        if (!(vf > 0.0) || !(vm > 0.0))
            return 1.0;
        return 1.0 - std::clamp(cov / std::sqrt(vf * vm), -1.0, 1.0);
    }

private:
    const Volume& fixed_;
    const Volume& moving_;
    Vec3 center_;
    const RegConfig& cfg_;
};

} // namespace detail

/// Coarse-to-fine coordinate descent over (rx, ry, rz, tx, ty, tz).
///
/// Per level and per parameter, the cost is probed at +-step (a central
/// difference); the better side is taken if it lowers the cost and then
/// followed as a line search while it keeps improving. A parameter whose
/// probes both fail has its step halved. A level ends when the joint step
/// norm falls below the tolerance or the iteration cap is hit. Deterministic.
/// Both inputs are Gaussian-smoothed first: without it, hard intensity edges
/// and trilinear averaging of noise bias the cost minimum away from the true
/// rotation. final_cost refers to the smoothed images.
inline RegistrationResult register_rigid(const Volume& fixed, const Volume& moving, const RegConfig& config = {})
{
    validate(config);
    detail::require_nondegenerate(fixed, "fixed");
    detail::require_nondegenerate(moving, "moving");

    const Vec3 center = fixed.geom.center();
    const double base_mm = std::min({fixed.geom.spacing[0], fixed.geom.spacing[1], fixed.geom.spacing[2]});
    std::array<double, 6> p{};
    RegistrationResult result;

    const Volume fs = gaussian_smooth(fixed, config.smoothing_sigma_vox);
    const Volume ms = gaussian_smooth(moving, config.smoothing_sigma_vox);
    for (int factor : config.pyramid) {
        const Volume fl = downsample(fs, factor);
        const Volume ml = downsample(ms, factor);
        const detail::LevelCost cost(fl, ml, center, config);

        std::array<double, 6> step{};
        for (int a = 0; a < 3; ++a) {
            step[a] = config.rot_step_rad * factor;
            step[a + 3] = config.trans_step_mm * base_mm * factor;
        }

        LevelTrace trace;
        trace.factor = factor;
        double current = cost(p);
        trace.accepted_costs.push_back(current);

        while (trace.iterations < config.max_iters) {
            ++trace.iterations;
            for (int i = 0; i < 6; ++i) {
                auto plus = p, minus = p;
                plus[i] += step[i];
                minus[i] -= step[i];
                const double cp = cost(plus), cm = cost(minus);
                const double best = std::min(cp, cm);
                if (!(best < current)) {
                    step[i] *= 0.5;
                    continue;
                }
                const double dir = cp <= cm ? 1.0 : -1.0;
                p = cp <= cm ? plus : minus;
                current = best;
                trace.accepted_costs.push_back(current);
                for (int s = 0; s < config.max_line_steps; ++s) {
                    auto next = p;
                    next[i] += dir * step[i];
                    const double c = cost(next);
                    if (!(c < current))
                        break;
                    p = next;
                    current = c;
                    trace.accepted_costs.push_back(current);
                }
            }
            double norm2 = 0.0;
            for (double s : step)
                norm2 += s * s;
            if (std::sqrt(norm2) < config.tolerance) {
                trace.converged = true;
                break;
            }
        }
        if (!trace.converged)
            result.iterations_exhausted = true;
        result.final_cost = current;
        result.levels.push_back(std::move(trace));
    }
    result.transform = {{p[0], p[1], p[2]}, {p[3], p[4], p[5]}};
    return result;
}

} // namespace sam2aug
