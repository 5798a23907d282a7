#include <gtest/gtest.h>

#include "sam2aug/bbox.hpp"
#include "sam2aug/morphology.hpp"
#include "support.hpp"

using namespace sam2aug;
using namespace testing_support;

namespace
{

Geometry slab(int nx, int ny, int nz)
{
    Geometry g;
    g.dims = {nx, ny, nz};
    return g;
}

/// One erosion step by definition: every in-grid neighbor and the voxel
/// itself are foreground, and no neighbor falls outside the grid.
BinaryMask oracle_erode_once(const BinaryMask& m, const std::vector<Index3>& offs)
{
    BinaryMask out(m.geom);
    const auto& d = m.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!m(i, j, k))
                    continue;
                bool keep = true;
                for (const auto& o : offs) {
                    const int a = i + o[0], b = j + o[1], c = k + o[2];
                    if (a < 0 || b < 0 || c < 0 || a >= d[0] || b >= d[1] || c >= d[2] || !m(a, b, c))
                        keep = false;
                }
                out(i, j, k) = keep;
            }
    return out;
}

BinaryMask oracle_dilate_once(const BinaryMask& m, const std::vector<Index3>& offs)
{
    BinaryMask out = m;
    const auto& d = m.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                if (m(i, j, k))
                    for (const auto& o : offs) {
                        const int a = i + o[0], b = j + o[1], c = k + o[2];
                        if (a >= 0 && b >= 0 && c >= 0 && a < d[0] && b < d[1] && c < d[2])
                            out(a, b, c) = 1;
                    }
    return out;
}

} // namespace

TEST(BBox, TightBox)
{
    BinaryMask m(cube_geometry(8));
    m(2, 3, 4) = 1;
    m(5, 3, 4) = 1;
    EXPECT_EQ(mask_bbox(m), (BBox3{{2, 3, 4}, {6, 4, 5}}));
    BinaryMask u(cube_geometry(4));
    u(0, 0, 0) = 1;
    EXPECT_EQ(mask_bbox(u), (BBox3{{0, 0, 0}, {1, 1, 1}}));
}

TEST(BBox, EmptyMaskThrows)
{
    try {
        mask_bbox(BinaryMask(cube_geometry(4)));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyMask);
    }
}

TEST(BBox, ExpandArithmeticAndClipping)
{
    const Index3 b64{64, 64, 64};
    EXPECT_EQ(expand_bbox({{10, 10, 0}, {20, 20, 1}}, {2, 2, 0, 0, 0, 0}, b64), (BBox3{{8, 10, 0}, {22, 20, 1}}));
    const BBox3 any{{3, 4, 5}, {9, 10, 11}};
    EXPECT_EQ(expand_bbox(any, {0, 0, 0, 0, 0, 0}, b64), any);
    EXPECT_EQ(expand_bbox({{0, 0, 0}, {4, 4, 1}}, {3, 0, 0, 0, 0, 0}, {8, 8, 8}), (BBox3{{0, 0, 0}, {4, 4, 1}}));
}

TEST(BBox, ContractionCollapsesToMidpoint)
{
    // x extent [4,10): contracting by 5 on both sides would empty the axis.
    const auto out = expand_bbox({{4, 0, 0}, {10, 2, 1}}, {-5, -5, 0, 0, 0, 0}, {16, 16, 16});
    EXPECT_EQ(out.min[0], 6); // (4 + 10 - 1) / 2
    EXPECT_EQ(out.max[0], 7);
    EXPECT_TRUE(out.valid());
}

TEST(BBox, ClipAndMask)
{
    const auto g = cube_geometry(6);
    const auto m = box_mask(g, {0, 0, 0}, {6, 6, 6});
    const BBox3 b{{1, 2, 3}, {3, 5, 4}};
    EXPECT_EQ(count_foreground(clip_to_bbox(m, b)), 2u * 3u * 1u);
    EXPECT_EQ(bbox_mask(b, g), clip_to_bbox(m, b));
}

TEST(Morphology, ErosionHandCases)
{
    const auto g = slab(5, 5, 1);
    const auto sq = box_mask(g, {1, 1, 0}, {4, 4, 1});
    const auto e = erode(sq, {Neighborhood::Cross4InPlane, 1});
    EXPECT_EQ(count_foreground(e), 1u);
    EXPECT_EQ(e(2, 2, 0), 1);
    EXPECT_EQ(count_foreground(erode(BinaryMask(g), {Neighborhood::Cube26, 1})), 0u);
    for (auto n : {Neighborhood::Cross4InPlane, Neighborhood::Cross6, Neighborhood::Cube26}) {
        BinaryMask one(cube_geometry(5));
        one(2, 2, 2) = 1;
        EXPECT_EQ(count_foreground(erode(one, {n, 1})), 0u) << to_string(n);
    }
}

TEST(Morphology, DilationHandCases)
{
    BinaryMask m(slab(9, 9, 1));
    m(4, 4, 0) = 1;
    EXPECT_EQ(count_foreground(dilate(m, {Neighborhood::Cross4InPlane, 1})), 5u);
    EXPECT_EQ(count_foreground(dilate(BinaryMask(m.geom), {Neighborhood::Cube26, 2})), 0u);
    BinaryMask c(cube_geometry(4));
    c(0, 0, 0) = 1;
    EXPECT_EQ(count_foreground(dilate(c, {Neighborhood::Cross6, 1})), 4u);
}

TEST(Morphology, RadiusZeroRejected)
{
    EXPECT_THROW(StructuringElement(Neighborhood::Cross6, 0), Error);
}

TEST(Morphology, MatchesDefinitionOnRandomMasks)
{
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const auto m = random_mask(cube_geometry(10), rng, 0.05);
        for (auto n : {Neighborhood::Cross4InPlane, Neighborhood::Cross6, Neighborhood::Cube26}) {
            const auto offs = neighbor_offsets(n);
            for (int r = 1; r <= 2; ++r) {
                auto oe = m, od = m;
                for (int s = 0; s < r; ++s) {
                    oe = oracle_erode_once(oe, offs);
                    od = oracle_dilate_once(od, offs);
                }
                const auto e = erode(m, {n, r});
                const auto d = dilate(m, {n, r});
                ASSERT_EQ(e, oe);
                ASSERT_EQ(d, od);
                EXPECT_TRUE(is_subset(e, m));
                EXPECT_TRUE(is_subset(m, d));
            }
        }
    }
}

TEST(Morphology, ComponentCount)
{
    const auto g = cube_geometry(8);
    auto m = box_mask(g, {0, 0, 0}, {2, 2, 2});
    EXPECT_EQ(count_components(m), 1);
    m(5, 5, 5) = 1;
    m(7, 7, 7) = 1;
    EXPECT_EQ(count_components(m), 3);
    m(2, 2, 2) = 1; // diagonal contact only
    EXPECT_EQ(count_components(m), 4);
    EXPECT_EQ(count_components(BinaryMask(g)), 0);
}
