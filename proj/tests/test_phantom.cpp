#include <gtest/gtest.h>

#include "sam2aug/manifest.hpp"
#include "sam2aug/phantom.hpp"
#include "support.hpp"

using namespace sam2aug;
using namespace testing_support;

TEST(Phantom, IdentityNoiseFreeCurrentEqualsPrior)
{
    PhantomSpec s;
    s.noise_sigma = 0.0;
    const auto c = generate_case(s);
    EXPECT_EQ(c.current_image, c.prior_image);
    EXPECT_EQ(c.current_mask, c.prior_mask);
}

TEST(Phantom, SphereVoxelCountMatchesLatticeEnumeration)
{
    PhantomSpec s;
    s.geometry.dims = {20, 20, 20};
    s.tumor_center_mm = {10.0, 10.0, 10.0}; // on a lattice point
    s.tumor_radii_mm = {4.0, 4.0, 4.0};
    s.noise_sigma = 0.0;
    int lattice = 0;
    for (int x = -4; x <= 4; ++x)
        for (int y = -4; y <= 4; ++y)
            for (int z = -4; z <= 4; ++z)
                lattice += x * x + y * y + z * z <= 16;
    EXPECT_EQ(lattice, 257);
    EXPECT_EQ(count_foreground(generate_case(s).prior_mask), 257u);
}

TEST(Phantom, Deterministic)
{
    PhantomSpec s;
    s.seed = 17;
    s.transform = {{0.01, 0.02, -0.03}, {1.0, -2.0, 0.5}};
    const auto a = generate_case(s), b = generate_case(s);
    EXPECT_EQ(a.prior_image, b.prior_image);
    EXPECT_EQ(a.current_image, b.current_image);
    EXPECT_EQ(a.current_mask, b.current_mask);
    s.seed = 18;
    EXPECT_NE(generate_case(s).prior_image, a.prior_image);
}

TEST(Phantom, CurrentMaskIsAnalytic)
{
    PhantomSpec s;
    s.transform = {{0.0, 0.0, 0.05}, {2.0, 1.0, -1.0}};
    s.radius_scale = 1.02;
    const auto c = generate_case(s);
    const Vec3 ctr = s.geometry.center();
    const auto& g = s.geometry;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const auto q = s.transform.apply(g.world(i, j, k), ctr);
                double e = 0;
                for (int a = 0; a < 3; ++a) {
                    const double u = (q[a] - s.tumor_center_mm[a]) / (s.tumor_radii_mm[a] * s.radius_scale);
                    e += u * u;
                }
                ASSERT_EQ(c.current_mask(i, j, k), e <= 1.0 ? 1 : 0);
            }
}

TEST(Phantom, ValidationNamesField)
{
    PhantomSpec s;
    s.tumor_radii_mm[1] = -1.0;
    try {
        validate(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidSpec);
        EXPECT_NE(std::string(e.what()).find("radii"), std::string::npos);
    }
    PhantomSpec far;
    far.transform.translation = {15.0, 0.0, 0.0};
    try {
        generate_case(far);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::TumorOutOfBounds);
    }
}

TEST(Phantom, SpecJsonRoundTrip)
{
    PhantomSpec s;
    s.seed = 3;
    s.transform = {{0.0, 0.01, 0.0}, {1.0, 0.0, 0.0}};
    const nlohmann::json j = s;
    const auto back = j.get<PhantomSpec>();
    EXPECT_EQ(nlohmann::json(back), j);
    auto bad = j;
    bad["tumor"]["radii_mm"] = {4.0, -2.0, 3.0};
    try {
        validate(bad.get<PhantomSpec>());
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("tumor.radii_mm"), std::string::npos);
    }
}

TEST(Manifest, GenerateTwoPatientsThreeFractions)
{
    TempDir dir("manifest");
    ManifestSpec ms;
    ms.seed = 4;
    const auto m = generate_manifest(ms, dir.path());
    EXPECT_EQ(m.cases.size(), 8u);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir.path()))
        files += e.path().extension() == ".nii";
    EXPECT_EQ(files, 16);
    const auto loaded = load_manifest(dir / "manifest.json", true);
    EXPECT_EQ(loaded.cases.size(), 8u);
    for (const std::string pid : {"P000", "P001"}) {
        const auto scans = loaded.patient(pid);
        EXPECT_EQ(select_prior(1, scans).fraction_index, 0);
        EXPECT_EQ(fs::path(select_prior(1, scans).image).filename(), "f0_image.nii");
    }
}

TEST(Manifest, RegenerationIsByteIdentical)
{
    TempDir a("manifest"), b("manifest");
    ManifestSpec ms;
    ms.seed = 9;
    ms.n_patients = 1;
    ms.fractions = 2;
    generate_manifest(ms, a.path());
    generate_manifest(ms, b.path());
    for (const auto& e : fs::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file())
            continue;
        const auto rel = fs::relative(e.path(), a.path());
        EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    }
}

TEST(Manifest, ValidationErrors)
{
    TempDir dir("manifest");
    ManifestSpec ms;
    ms.n_patients = 1;
    ms.fractions = 2;
    generate_manifest(ms, dir.path());
    auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    auto expect_error = [&](const nlohmann::json& doc) {
        try {
            validate(manifest_from_json(doc, dir.path()), true);
            ADD_FAILURE() << doc.dump();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::ManifestError) << e.what();
        }
    };
    auto bad = j;
    bad["format_version"] = 2;
    expect_error(bad);
    bad = j;
    bad["cases"].erase(bad["cases"].begin()); // drop the simulation scan
    expect_error(bad);
    bad = j;
    bad["cases"].erase(bad["cases"].begin() + 1); // gap at fraction 1
    expect_error(bad);
    bad = j;
    bad["cases"][1]["current_image"] = "nope.nii";
    expect_error(bad);
    bad = j;
    bad["cases"].push_back(bad["cases"][0]);
    expect_error(bad);
    bad = j;
    bad["cases"][2]["current_mask"] = nullptr;
    expect_error(bad);
    EXPECT_NO_THROW(validate(manifest_from_json(j, dir.path()), true));
}
