#include <gtest/gtest.h>

#include <cstring>

#include "sam2aug/nifti.hpp"
#include "support.hpp"

using namespace sam2aug;
using namespace testing_support;

namespace
{

Volume random_volume(const Geometry& g, Dtype dtype, Rng& rng)
{
    Volume v(g);
    for (auto& x : v.data) {
        switch (dtype) {
        case Dtype::UInt8: x = static_cast<float>(rng.uniform_int(0, 255)); break;
        case Dtype::Int16: x = static_cast<float>(rng.uniform_int(-32768, 32767)); break;
        case Dtype::Float32: x = static_cast<float>(rng.normal() * 1000.0); break;
        }
    }
    return v;
}

std::vector<unsigned char> read_bytes(const fs::path& p)
{
    const auto s = slurp(p);
    return {s.begin(), s.end()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b)
{
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST(Nifti, Float32RoundTripIsBitExact)
{
    TempDir dir("nifti");
    Rng rng(7);
    Geometry g = cube_geometry(8);
    g.spacing = {0.75, 1.25, 2.5};
    g.origin = {-12.5, 3.25, 100.0};
    const auto v = random_volume(g, Dtype::Float32, rng);
    write_nifti(v, dir / "v.nii");
    const auto back = read_nifti(dir / "v.nii");
    EXPECT_EQ(back.geom, v.geom);
    ASSERT_EQ(back.data.size(), v.data.size());
    EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float)), 0);
}

TEST(Nifti, RoundTripAllDtypes)
{
    TempDir dir("nifti");
    Rng rng(11);
    for (Dtype dt : {Dtype::UInt8, Dtype::Int16, Dtype::Float32}) {
        Geometry g;
        g.dims = {5, 7, 3};
        g.spacing = {1.5, 1.5, 3.0};
        const auto v = random_volume(g, dt, rng);
        const auto path = dir / (std::string(to_string(dt)) + ".nii");
        write_nifti(v, path, dt);
        EXPECT_EQ(read_nifti(path), v) << to_string(dt);
    }
}

TEST(Nifti, AllZeroMaskFileSize)
{
    TempDir dir("nifti");
    const BinaryMask m(cube_geometry(4));
    write_nifti(m, dir / "m.nii");
    EXPECT_EQ(fs::file_size(dir / "m.nii"), 352u + 64u);
}

TEST(Nifti, HeaderFieldMapping)
{
    TempDir dir("nifti");
    // Hand-assembled header, independent of make_header.
    std::vector<unsigned char> b(352 + 16 * 16 * 4, 0);
    auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(&b[off], &v, 2); };
    auto put32 = [&](std::size_t off, std::int32_t v) { std::memcpy(&b[off], &v, 4); };
    auto putf = [&](std::size_t off, float v) { std::memcpy(&b[off], &v, 4); };
    put32(0, 348);
    const std::int16_t dim[8] = {3, 16, 16, 4, 1, 1, 1, 1};
    for (int d = 0; d < 8; ++d)
        put16(40 + 2 * d, dim[d]);
    put16(70, 2);
    put16(72, 8);
    const float pix[4] = {1.0f, 1.5f, 1.5f, 3.0f};
    for (int d = 0; d < 4; ++d)
        putf(76 + 4 * d, pix[d]);
    putf(108, 352.0f);
    std::memcpy(&b[344], "n+1\0", 4);
    write_bytes(dir / "h.nii", b);
    const auto v = read_nifti(dir / "h.nii");
    EXPECT_EQ(v.dims(), (Index3{16, 16, 4}));
    EXPECT_EQ(v.geom.spacing, (Vec3{1.5, 1.5, 3.0}));
}

TEST(Nifti, VoxelOrderIsXFastest)
{
    TempDir dir("nifti");
    Geometry g;
    g.dims = {3, 4, 5};
    Volume v(g);
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 3; ++i)
                v(i, j, k) = static_cast<float>(i + 10 * j + 100 * k);
    write_nifti(v, dir / "o.nii", Dtype::Int16);
    const auto bytes = read_bytes(dir / "o.nii");
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 3; ++i) {
                std::int16_t raw;
                std::memcpy(&raw, &bytes[352 + 2 * static_cast<std::size_t>(i + j * 3 + k * 12)], 2);
                EXPECT_EQ(raw, i + 10 * j + 100 * k);
            }
}

TEST(Nifti, NonBinaryMaskRejected)
{
    TempDir dir("nifti");
    Volume v(cube_geometry(3));
    v.data[4] = 2.0f;
    write_nifti(v, dir / "m.nii", Dtype::UInt8);
    try {
        read_nifti_mask(dir / "m.nii");
        FAIL() << "expected NonBinaryMask";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonBinaryMask);
    }
}

TEST(Nifti, LossyDtypeUnlessRoundingAllowed)
{
    TempDir dir("nifti");
    Volume v(cube_geometry(2));
    v.data[0] = 0.5f;
    v.data[1] = 300.0f;
    try {
        write_nifti(v, dir / "l.nii", Dtype::UInt8);
        FAIL() << "expected LossyDtype";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::LossyDtype);
    }
    write_nifti(v, dir / "l.nii", Dtype::UInt8, true);
    const auto back = read_nifti(dir / "l.nii");
    EXPECT_EQ(back.data[0], 0.0f);
    EXPECT_EQ(back.data[1], 255.0f);
}

TEST(Nifti, HeaderErrors)
{
    TempDir dir("nifti");
    write_nifti(BinaryMask(cube_geometry(2)), dir / "ok.nii");
    const auto good = read_bytes(dir / "ok.nii");
    auto expect_code = [&](std::vector<unsigned char> b, Errc code) {
        write_bytes(dir / "bad.nii", b);
        try {
            read_nifti(dir / "bad.nii");
            ADD_FAILURE() << "expected " << to_string(code);
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), code) << e.what();
        }
    };
    auto b = good;
    b[344] = 'x';
    expect_code(b, Errc::MalformedHeader);
    b = good;
    b[0] = 0;
    b[1] = 0;
    expect_code(b, Errc::MalformedHeader);
    b = good;
    b[70] = 64; // float64
    expect_code(b, Errc::UnsupportedDatatype);
    expect_code({0x1f, 0x8b, 8, 0}, Errc::CompressedInput);
    expect_code(std::vector<unsigned char>(good.begin(), good.begin() + 100), Errc::MalformedHeader);
    b = good;
    std::reverse(b.begin(), b.begin() + 4); // big-endian sizeof_hdr
    expect_code(b, Errc::MalformedHeader);
}

TEST(Nifti, ScaleSlopeApplied)
{
    TempDir dir("nifti");
    Volume v(cube_geometry(2));
    for (std::size_t n = 0; n < v.size(); ++n)
        v.data[n] = static_cast<float>(n);
    write_nifti(v, dir / "s.nii", Dtype::Int16);
    auto b = read_bytes(dir / "s.nii");
    const float slope = 2.0f, inter = -1.0f;
    std::memcpy(&b[112], &slope, 4);
    std::memcpy(&b[116], &inter, 4);
    write_bytes(dir / "s.nii", b);
    const auto back = read_nifti(dir / "s.nii");
    for (std::size_t n = 0; n < v.size(); ++n)
        EXPECT_EQ(back.data[n], 2.0f * static_cast<float>(n) - 1.0f);
}

TEST(Nifti, SidecarRoundTrip)
{
    TempDir dir("nifti");
    Rng rng(3);
    Geometry g;
    g.dims = {4, 3, 2};
    g.spacing = {0.1, 0.2, 0.3};
    g.origin = {1.1, -2.2, 3.3};
    const auto v = random_volume(g, Dtype::Float32, rng);
    write_sidecar(v, dir / "v.json");
    EXPECT_EQ(read_sidecar(dir / "v.json"), v);
    const auto m = box_mask(g, {0, 0, 0}, {2, 2, 1});
    write_sidecar(m, dir / "m.json");
    EXPECT_EQ(read_sidecar_mask(dir / "m.json"), m);
}
