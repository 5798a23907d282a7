#pragma once

// Synthetic prior/current scan pairs with analytic ground truth.
//
// A scan is a linear background ramp plus `contrast` inside an ellipsoidal
// tumor, plus optional Gaussian noise. The current scan is the prior anatomy
// pulled through spec.transform (same convention as registration: current
// point p shows prior anatomy at transform.apply(p, grid center)), with the
// tumor radii multiplied by radius_scale. Masks are evaluated analytically at
// voxel centers, never resampled.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "image.hpp"
#include "manifest.hpp"
#include "nifti.hpp"
#include "registration.hpp"
#include "rng.hpp"

namespace sam2aug
{

struct PhantomSpec
{
    Geometry geometry{{40, 40, 28}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
    Vec3 tumor_center_mm{19.5, 19.5, 13.5};
    Vec3 tumor_radii_mm{8.0, 7.0, 5.0};
    double contrast = 60.0;
    double ramp_base = 100.0;
    Vec3 ramp_gradient{0.8, 0.5, 0.3}; ///< intensity per mm
    double noise_sigma = 2.0;
    RigidTransform transform;
    double radius_scale = 1.0;
    std::uint64_t seed = 0;
};

struct PhantomCase
{
    Volume prior_image;
    BinaryMask prior_mask;
    Volume current_image;
    BinaryMask current_mask;
    RigidTransform truth; ///< current -> prior pull transform
};

namespace detail
{

inline constexpr int phantom_margin_vox = 2;

/// Throws TumorOutOfBounds when the tumor seen through `t` (scaled) is closer
/// than the margin to the grid border.
inline void check_tumor_margin(const PhantomSpec& s, const RigidTransform& t, double scale)
{
    const Vec3 c = s.geometry.center();
    const Mat3 rt = transpose(t.matrix());
    // tumor center in current space: inverse transform of the prior center
    const auto inv = t.inverse();
    const Vec3 cc = inv.apply(s.tumor_center_mm, c);
    for (int a = 0; a < 3; ++a) {
        double h2 = 0.0;
        for (int b = 0; b < 3; ++b) {
            const double r = s.tumor_radii_mm[b] * scale;
            h2 += rt[a][b] * rt[a][b] * r * r;
        }
        const double half = std::sqrt(h2);
        const double lo = s.geometry.origin[a] + phantom_margin_vox * s.geometry.spacing[a];
        const double hi = s.geometry.origin[a] + (s.geometry.dims[a] - 1 - phantom_margin_vox) * s.geometry.spacing[a];
        if (cc[a] - half < lo || cc[a] + half > hi)
            fail(Errc::TumorOutOfBounds, "tumor within " + std::to_string(phantom_margin_vox) +
                                             " voxels of the grid border along axis " + std::to_string(a));
    }
}

} // namespace detail

inline void validate(const PhantomSpec& s)
{
    for (int a = 0; a < 3; ++a) {
        if (s.geometry.dims[a] < 1)
            fail(Errc::InvalidSpec, "geometry.dims must be >= 1");
        if (!(s.geometry.spacing[a] > 0.0))
            fail(Errc::InvalidSpec, "geometry.spacing must be > 0");
        if (!(s.tumor_radii_mm[a] > 0.0))
            fail(Errc::InvalidSpec, "tumor.radii_mm must be > 0");
    }
    if (!(s.noise_sigma >= 0.0))
        fail(Errc::InvalidSpec, "noise_sigma must be >= 0");
    if (!(s.radius_scale > 0.0))
        fail(Errc::InvalidSpec, "radius_scale must be > 0");
    detail::check_tumor_margin(s, RigidTransform::identity(), 1.0);
    detail::check_tumor_margin(s, s.transform, s.radius_scale);
}

/// One scan of the phantom anatomy seen through `t` with scaled tumor.
inline std::pair<Volume, BinaryMask> render_scan(const PhantomSpec& s, const RigidTransform& t, double scale,
                                                 std::uint64_t noise_seed)
{
    const Geometry& g = s.geometry;
    const Vec3 c = g.center();
    const bool identity = t == RigidTransform::identity();
    Volume img(g);
    BinaryMask mask(g);
    Rng rng(noise_seed);
    const Vec3 r{s.tumor_radii_mm[0] * scale, s.tumor_radii_mm[1] * scale, s.tumor_radii_mm[2] * scale};
    std::size_t n = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++n) {
                const Vec3 p = g.world(i, j, k);
                const Vec3 q = identity ? p : t.apply(p, c);
                double e = 0.0;
                for (int a = 0; a < 3; ++a) {
                    const double u = (q[a] - s.tumor_center_mm[a]) / r[a];
                    e += u * u;
                }
                const bool inside = e <= 1.0;
                double v = s.ramp_base;
                for (int a = 0; a < 3; ++a)
                    v += s.ramp_gradient[a] * q[a];
                if (inside)
                    v += s.contrast;
                if (s.noise_sigma > 0.0)
                    v += s.noise_sigma * rng.normal();
                img.data[n] = static_cast<float>(v);
                mask.data[n] = inside ? 1 : 0;
            }
    return {std::move(img), std::move(mask)};
}

inline PhantomCase generate_case(const PhantomSpec& spec)
{
    validate(spec);
    PhantomCase out;
    std::tie(out.prior_image, out.prior_mask) =
        render_scan(spec, RigidTransform::identity(), 1.0, mix_seed(spec.seed, std::uint64_t{1}));
    std::tie(out.current_image, out.current_mask) =
        render_scan(spec, spec.transform, spec.radius_scale, mix_seed(spec.seed, std::uint64_t{2}));
    out.truth = spec.transform;
    return out;
}

inline void to_json(nlohmann::json& j, const PhantomSpec& s)
{
    j = nlohmann::json{
        {"dims", s.geometry.dims},
        {"spacing", s.geometry.spacing},
        {"origin", s.geometry.origin},
        {"tumor", {{"center_mm", s.tumor_center_mm}, {"radii_mm", s.tumor_radii_mm}, {"contrast", s.contrast}}},
        {"background", {{"base", s.ramp_base}, {"gradient_per_mm", s.ramp_gradient}}},
        {"noise_sigma", s.noise_sigma},
        {"transform", s.transform},
        {"radius_scale", s.radius_scale},
        {"seed", s.seed},
    };
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s)
{
    PhantomSpec o;
    auto field = [&](const char* name, auto& dst) {
        if (!j.contains(name))
            return;
        try {
            j.at(name).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            fail(Errc::InvalidSpec, std::string(name) + " has the wrong type");
        }
    };
    field("dims", o.geometry.dims);
    field("spacing", o.geometry.spacing);
    field("origin", o.geometry.origin);
    field("noise_sigma", o.noise_sigma);
    field("radius_scale", o.radius_scale);
    field("seed", o.seed);
    try {
        if (j.contains("tumor")) {
            const auto& t = j.at("tumor");
            if (t.contains("center_mm"))
                o.tumor_center_mm = t.at("center_mm").get<Vec3>();
            if (t.contains("radii_mm"))
                o.tumor_radii_mm = t.at("radii_mm").get<Vec3>();
            if (t.contains("contrast"))
                o.contrast = t.at("contrast").get<double>();
        }
        if (j.contains("background")) {
            const auto& b = j.at("background");
            if (b.contains("base"))
                o.ramp_base = b.at("base").get<double>();
            if (b.contains("gradient_per_mm"))
                o.ramp_gradient = b.at("gradient_per_mm").get<Vec3>();
        }
        if (j.contains("transform"))
            o.transform = j.at("transform").get<RigidTransform>();
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::InvalidSpec, e.what());
    }
    s = o;
}

// ---------------------------------------------------------------------------
// Multi-patient manifests

/// Per-fraction motion drawn relative to each patient's simulation scan.
struct MotionRanges
{
    double max_translation_vox = 3.0; ///< per axis, uniform in [-max, max] voxels
    double max_rotation_deg = 3.0;    ///< per axis
    std::array<double, 2> radius_scale{0.97, 1.03};
    double center_jitter_vox = 2.0; ///< per-patient tumor placement
};

struct ManifestSpec
{
    int n_patients = 2;
    int fractions = 3; ///< adaptive fractions per patient, in addition to the simulation scan
    PhantomSpec tmpl;
    MotionRanges ranges;
    std::uint64_t seed = 0;
};

inline void from_json(const nlohmann::json& j, ManifestSpec& m)
{
    ManifestSpec o;
    try {
        o.n_patients = j.value("n_patients", o.n_patients);
        o.fractions = j.value("fractions", o.fractions);
        o.seed = j.value("seed", o.seed);
        if (j.contains("template"))
            o.tmpl = j.at("template").get<PhantomSpec>();
        if (j.contains("ranges")) {
            const auto& r = j.at("ranges");
            o.ranges.max_translation_vox = r.value("max_translation_vox", o.ranges.max_translation_vox);
            o.ranges.max_rotation_deg = r.value("max_rotation_deg", o.ranges.max_rotation_deg);
            if (r.contains("radius_scale"))
                o.ranges.radius_scale = r.at("radius_scale").get<std::array<double, 2>>();
            o.ranges.center_jitter_vox = r.value("center_jitter_vox", o.ranges.center_jitter_vox);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::InvalidSpec, e.what());
    }
    if (o.n_patients < 1)
        fail(Errc::InvalidSpec, "n_patients must be >= 1");
    if (o.fractions < 1)
        fail(Errc::InvalidSpec, "fractions must be >= 1");
    if (o.ranges.max_translation_vox < 0 || o.ranges.max_rotation_deg < 0 || o.ranges.center_jitter_vox < 0)
        fail(Errc::InvalidSpec, "ranges must be nonnegative");
    if (!(o.ranges.radius_scale[0] > 0.0) || o.ranges.radius_scale[1] < o.ranges.radius_scale[0])
        fail(Errc::InvalidSpec, "ranges.radius_scale must satisfy 0 < lo <= hi");
    validate(o.tmpl);
    m = o;
}

/// Truth record for one generated scan.
struct PhantomTruth
{
    std::string case_id;
    RigidTransform to_simulation; ///< this scan -> simulation scan pull transform
    double radius_scale = 1.0;
};

/// Draw per-patient, per-fraction phantoms, write NIfTI files under out_dir
/// and return the manifest (root = out_dir). Also writes manifest.json and
/// truth.json.
inline DatasetManifest generate_manifest(const ManifestSpec& ms, const std::filesystem::path& out_dir)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        fail(Errc::IoFailure, "cannot create " + out_dir.string());
    DatasetManifest manifest;
    manifest.root = out_dir;
    nlohmann::json truth = nlohmann::json::array();
    const double deg = std::numbers::pi / 180.0;
    for (int p = 0; p < ms.n_patients; ++p) {
        char pid_buf[16];
        std::snprintf(pid_buf, sizeof pid_buf, "P%03d", p);
        const std::string pid = pid_buf;
        Rng rng(mix_seed(ms.seed, pid));
        PhantomSpec base = ms.tmpl;
        for (int a = 0; a < 3; ++a)
            base.tumor_center_mm[a] +=
                rng.uniform(-ms.ranges.center_jitter_vox, ms.ranges.center_jitter_vox) * base.geometry.spacing[a];
        fs::create_directories(out_dir / pid, ec);
        if (ec)
            fail(Errc::IoFailure, "cannot create " + (out_dir / pid).string());
        for (int f = 0; f <= ms.fractions; ++f) {
            RigidTransform t;
            double scale = 1.0;
            if (f > 0) {
                for (int a = 0; a < 3; ++a) {
                    t.rotation[a] = rng.uniform(-ms.ranges.max_rotation_deg, ms.ranges.max_rotation_deg) * deg;
                    t.translation[a] = rng.uniform(-ms.ranges.max_translation_vox, ms.ranges.max_translation_vox) *
                                       base.geometry.spacing[a];
                }
                scale = rng.uniform(ms.ranges.radius_scale[0], ms.ranges.radius_scale[1]);
            }
            validate(base);
            detail::check_tumor_margin(base, t, scale);
            const auto [img, mask] = render_scan(base, t, scale, mix_seed(ms.seed, pid + "/" + std::to_string(f)));
            const std::string stem = pid + "/f" + std::to_string(f);
            write_nifti(img, out_dir / (stem + "_image.nii"));
            write_nifti(mask, out_dir / (stem + "_mask.nii"));
            ManifestCase c{pid, f, stem + "_image.nii", stem + "_mask.nii"};
            truth.push_back({{"case_id", c.case_id()}, {"to_simulation", t}, {"radius_scale", scale}});
            manifest.cases.push_back(std::move(c));
        }
    }
    DatasetManifest on_disk = manifest;
    on_disk.root = ".";
    save_manifest(on_disk, out_dir / "manifest.json");
    std::ofstream tout(out_dir / "truth.json");
    tout << truth.dump(2) << '\n';
    return manifest;
}

} // namespace sam2aug
