#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

#include "sam2aug/image.hpp"
#include "sam2aug/rng.hpp"

namespace testing_support
{

using namespace sam2aug;
namespace fs = std::filesystem;

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir
{
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("sam2aug_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline Geometry cube_geometry(int n, double spacing = 1.0)
{
    Geometry g;
    g.dims = {n, n, n};
    g.spacing = {spacing, spacing, spacing};
    g.origin = {0.0, 0.0, 0.0};
    return g;
}

inline BinaryMask box_mask(const Geometry& g, Index3 lo, Index3 hi)
{
    BinaryMask m(g);
    for (int k = lo[2]; k < hi[2]; ++k)
        for (int j = lo[1]; j < hi[1]; ++j)
            for (int i = lo[0]; i < hi[0]; ++i)
                m(i, j, k) = 1;
    return m;
}

/// Random blobby mask: union of a few random boxes plus salt noise.
inline BinaryMask random_mask(const Geometry& g, Rng& rng, double salt = 0.01)
{
    BinaryMask m(g);
    const int blobs = static_cast<int>(rng.uniform_int(1, 4));
    for (int b = 0; b < blobs; ++b) {
        Index3 lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<int>(rng.uniform_int(0, g.dims[a] - 1));
            hi[a] = std::min(g.dims[a], lo[a] + static_cast<int>(rng.uniform_int(1, std::max(1, g.dims[a] / 2))));
        }
        for (int k = lo[2]; k < hi[2]; ++k)
            for (int j = lo[1]; j < hi[1]; ++j)
                for (int i = lo[0]; i < hi[0]; ++i)
                    m(i, j, k) = 1;
    }
    for (auto& v : m.data)
        if (rng.bernoulli(salt))
            v = 1;
    return m;
}

/// Surface voxels by the definition: foreground with a background (or
/// out-of-grid) 6-neighbor.
inline std::vector<Index3> oracle_surface(const BinaryMask& m)
{
    std::vector<Index3> out;
    const auto& d = m.dims();
    auto fg = [&](int i, int j, int k) {
        return i >= 0 && j >= 0 && k >= 0 && i < d[0] && j < d[1] && k < d[2] && m(i, j, k) != 0;
    };
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                if (fg(i, j, k) && (!fg(i - 1, j, k) || !fg(i + 1, j, k) || !fg(i, j - 1, k) || !fg(i, j + 1, k) ||
                                    !fg(i, j, k - 1) || !fg(i, j, k + 1)))
                    out.push_back({i, j, k});
    return out;
}

/// Independent all-pairs nearest-surface distances (not squared).
inline std::vector<double> oracle_directed(const std::vector<Index3>& from, const std::vector<Index3>& to,
                                           const Vec3& spacing)
{
    std::vector<double> out;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            double s = 0;
            for (int a = 0; a < 3; ++a) {
                const double d = (p[a] - q[a]) * spacing[a];
                s += d * d;
            }
            best = std::min(best, s);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

/// Independent metric computation from the definitions: Dice by counting,
/// NSD/HD95/ASD from all-pairs surface distances. HD95 uses nearest rank
/// ceil(0.95 n) computed in floating point.
struct OracleMetrics
{
    double dice = 0, nsd = 0, hd95 = 0, asd = 0;
};

inline OracleMetrics oracle_metrics(const BinaryMask& g, const BinaryMask& p, double tau, const Vec3& spacing)
{
    OracleMetrics r;
    double inter = 0, ng = 0, np = 0;
    for (std::size_t n = 0; n < g.data.size(); ++n) {
        inter += g.data[n] && p.data[n];
        ng += g.data[n];
        np += p.data[n];
    }
    r.dice = 2 * inter / (ng + np);
    const auto sg = oracle_surface(g), sp = oracle_surface(p);
    const auto dg = oracle_directed(sg, sp, spacing), dp = oracle_directed(sp, sg, spacing);
    double hits = 0, sum = 0;
    for (double d : dg) {
        hits += d <= tau;
        sum += d;
    }
    for (double d : dp) {
        hits += d <= tau;
        sum += d;
    }
    r.nsd = hits / static_cast<double>(dg.size() + dp.size());
    r.asd = sum / static_cast<double>(dg.size() + dp.size());
    auto p95 = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()) - 1e-12));
        return v[std::max<std::size_t>(rank, 1) - 1];
    };
    r.hd95 = std::max(p95(dg), p95(dp));
    return r;
}

inline bool close_rel(double a, double b, double tol = 1e-9)
{
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

/// Copy of m shifted by (di,dj,dk); voxels leaving the grid are dropped.
inline BinaryMask shifted(const BinaryMask& m, int di, int dj, int dk)
{
    BinaryMask out(m.geom);
    const auto& d = m.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const int a = i + di, b = j + dj, c = k + dk;
                if (m(i, j, k) && a >= 0 && b >= 0 && c >= 0 && a < d[0] && b < d[1] && c < d[2])
                    out(a, b, c) = 1;
            }
    return out;
}

/// Upper tail of the chi-squared distribution with 3 degrees of freedom:
/// Q(3/2, x/2) = erfc(sqrt(x/2)) + sqrt(2x/pi) exp(-x/2).
inline double chi2_sf_3dof(double x)
{
    constexpr double pi = 3.14159265358979323846;
    return std::erfc(std::sqrt(x / 2.0)) + std::sqrt(2.0 * x / pi) * std::exp(-x / 2.0);
}

inline std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace testing_support
