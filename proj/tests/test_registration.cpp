#include <gtest/gtest.h>

#include <numbers>

#include "sam2aug/phantom.hpp"
#include "sam2aug/registration.hpp"
#include "support.hpp"

using namespace sam2aug;
using namespace testing_support;

namespace
{

constexpr double deg = std::numbers::pi / 180.0;

Volume ramp_volume(const Geometry& g)
{
    Volume v(g);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                v(i, j, k) = static_cast<float>(2.0 * i + 3.0 * j - 1.0 * k + 10.0);
    return v;
}

Volume noise_volume(const Geometry& g, std::uint64_t seed)
{
    Rng rng(seed);
    Volume v(g);
    for (auto& x : v.data)
        x = static_cast<float>(rng.normal());
    return v;
}

PhantomSpec phantom_with(const RigidTransform& t, double noise = 0.0)
{
    PhantomSpec s;
    s.transform = t;
    s.noise_sigma = noise;
    s.seed = 5;
    return s;
}

} // namespace

TEST(Transform, InverseAndCompose)
{
    const RigidTransform t{{0.05, -0.03, 0.1}, {1.5, -2.0, 0.25}};
    const Vec3 c{10, 12, 5};
    const Vec3 p{3, 4, 5};
    const auto q = t.inverse().apply(t.apply(p, c), c);
    for (int a = 0; a < 3; ++a)
        EXPECT_NEAR(q[a], p[a], 1e-12);
    const RigidTransform u{{-0.02, 0.04, 0.01}, {0.5, 0.5, -1.0}};
    const auto composed = u.compose(t).apply(p, c);
    const auto chained = u.apply(t.apply(p, c), c);
    for (int a = 0; a < 3; ++a)
        EXPECT_NEAR(composed[a], chained[a], 1e-12);
    const auto angles = RigidTransform::angles_from_matrix(t.matrix());
    for (int a = 0; a < 3; ++a)
        EXPECT_NEAR(angles[a], t.rotation[a], 1e-12);
}

TEST(Resample, IdentityIsExact)
{
    Rng rng(1);
    const auto v = noise_volume(cube_geometry(9), 3);
    for (auto interp : {Interpolation::Trilinear, Interpolation::Nearest}) {
        const auto r = resample(v, RigidTransform::identity(), v.geom, interp);
        EXPECT_EQ(r.image, v);
        EXPECT_EQ(count_foreground(r.support), v.size());
    }
}

TEST(Resample, IntegerShiftNearest)
{
    const auto v = noise_volume(cube_geometry(8), 4);
    const RigidTransform t{{0, 0, 0}, {2.0, -1.0, 0.0}};
    const auto r = resample(v, t, v.geom, Interpolation::Nearest);
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 8; ++i) {
                const int si = i + 2, sj = j - 1;
                const float expect = (si < 8 && sj >= 0) ? v(si, sj, k) : 0.0f;
                EXPECT_EQ(r.image(i, j, k), expect);
            }
}

TEST(Resample, HalfVoxelRampIsAnalytic)
{
    const auto v = ramp_volume(cube_geometry(10));
    const RigidTransform t{{0, 0, 0}, {0.5, 0.0, 0.0}};
    const auto r = resample(v, t, v.geom);
    for (int k = 0; k < 10; ++k)
        for (int j = 0; j < 10; ++j)
            for (int i = 0; i < 9; ++i)
                EXPECT_NEAR(r.image(i, j, k), 2.0 * (i + 0.5) + 3.0 * j - k + 10.0, 1e-4);
}

TEST(Propagate, CountsUnderTranslation)
{
    const auto g = cube_geometry(12);
    const auto m = box_mask(g, {3, 3, 3}, {7, 8, 6});
    EXPECT_EQ(propagate_mask(m, RigidTransform::identity(), g), m);
    const auto moved = propagate_mask(m, {{0, 0, 0}, {-2.0, 1.0, 3.0}}, g);
    EXPECT_EQ(count_foreground(moved), count_foreground(m));
    EXPECT_EQ(moved, shifted(m, 2, -1, -3));
    // Shift by 5 along x: columns 3,4 land at 8,9; 5,6 at 10,11: half of 4 columns stay.
    const auto half = propagate_mask(box_mask(g, {5, 3, 3}, {9, 5, 5}), {{0, 0, 0}, {-5.0, 0, 0}}, g);
    EXPECT_EQ(count_foreground(half), 2u * 2u * 2u);
}

TEST(Similarity, BasicProperties)
{
    const auto v = noise_volume(cube_geometry(10), 8);
    EXPECT_EQ(similarity(v, v, SimilarityMetric::Mse), 0.0);
    auto w = v;
    for (auto& x : w.data)
        x += 1.0f;
    EXPECT_NEAR(similarity(v, w, SimilarityMetric::Ncc), 0.0, 1e-9);
    const auto u = noise_volume(cube_geometry(10), 9);
    EXPECT_NEAR(similarity(v, u, SimilarityMetric::Ncc), 1.0, 0.1);
    BinaryMask none(v.geom);
    EXPECT_THROW(similarity(v, u, SimilarityMetric::Mse, &none), Error);
}

TEST(Register, SelfRegistration)
{
    const auto c = generate_case(phantom_with(RigidTransform::identity(), 2.0));
    const auto r = register_rigid(c.prior_image, c.prior_image);
    for (int a = 0; a < 3; ++a) {
        EXPECT_LT(std::fabs(r.transform.translation[a]), 0.1);
        EXPECT_LT(std::fabs(r.transform.rotation[a]), 0.002);
    }
}

TEST(Register, RecoversTranslation)
{
    const RigidTransform truth{{0, 0, 0}, {3.0, 0, 0}};
    const auto c = generate_case(phantom_with(truth, 1.0));
    const auto r = register_rigid(c.current_image, c.prior_image);
    EXPECT_NEAR(r.transform.translation[0], 3.0, 0.5);
    EXPECT_NEAR(r.transform.translation[1], 0.0, 0.5);
    EXPECT_NEAR(r.transform.translation[2], 0.0, 0.5);
}

TEST(Register, RecoversRotationAboutZ)
{
    const RigidTransform truth{{0, 0, 5 * deg}, {0, 0, 0}};
    const auto c = generate_case(phantom_with(truth, 1.0));
    const auto r = register_rigid(c.current_image, c.prior_image);
    EXPECT_NEAR(r.transform.rotation[2], 5 * deg, 1 * deg);
}

TEST(Register, CostTraceNonIncreasing)
{
    const RigidTransform truth{{0.02, -0.03, 0.04}, {1.5, -2.0, 1.0}};
    const auto c = generate_case(phantom_with(truth, 2.0));
    const auto r = register_rigid(c.current_image, c.prior_image);
    ASSERT_EQ(r.levels.size(), 3u);
    for (const auto& lv : r.levels)
        for (std::size_t n = 1; n < lv.accepted_costs.size(); ++n)
            EXPECT_LE(lv.accepted_costs[n], lv.accepted_costs[n - 1]);
    const auto again = register_rigid(c.current_image, c.prior_image);
    EXPECT_EQ(again.transform, r.transform);
}

TEST(Register, DegenerateInput)
{
    const Volume flat(cube_geometry(8), 3.0f);
    try {
        register_rigid(flat, noise_volume(cube_geometry(8), 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DegenerateInput);
    }
}

TEST(Register, PropagatedMaskMatchesTruth)
{
    const RigidTransform truth{{0.0, 0.0, 3 * deg}, {2.0, -1.0, 1.0}};
    const auto c = generate_case(phantom_with(truth, 2.0));
    const auto r = register_rigid(c.current_image, c.prior_image);
    const auto p = propagate_mask(c.prior_mask, r.transform, c.current_image.geom);
    double inter = 0;
    for (std::size_t n = 0; n < p.size(); ++n)
        inter += p.data[n] && c.current_mask.data[n];
    const double d = 2 * inter / static_cast<double>(count_foreground(p) + count_foreground(c.current_mask));
    EXPECT_GE(d, 0.9);
}
