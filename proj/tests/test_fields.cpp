#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "varmap/fields.hpp"
#include "varmap/rng.hpp"

using namespace varmap;
namespace fs = std::filesystem;

namespace {

FieldStack random_stack(const GridSpec& g, std::uint64_t seed) {
    FieldStack f(g);
    Rng rng(seed);
    for (float& v : f.data) v = float(rng.uniform(-1.0, 1.0));
    return f;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               fs::path("varmap_fields_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("fstk files round-trip bit-for-bit") {
    TempDir td;
    const GridSpec g{5, 6, 7, 0.25, 1.0};
    FieldMap m;
    m.emplace_back("alpha", random_stack(g, 1));
    m.emplace_back("beta", random_stack(g, 2));
    write_fstk(td.file("pair.fstk"), m);

    const FieldMap back = read_fstk(td.file("pair.fstk"));
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "alpha");
    CHECK(back[1].first == "beta");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].second.grid == m[i].second.grid);
        REQUIRE(back[i].second.data.size() == m[i].second.data.size());
        for (std::size_t j = 0; j < m[i].second.data.size(); ++j)
            CHECK(back[i].second.data[j] == m[i].second.data[j]);
    }
}

TEST_CASE("fstk reader rejects malformed input") {
    TempDir td;
    {
        std::ofstream f(td.file("bad_magic.fstk"), std::ios::binary);
        f << "{\"magic\":\"NOPE\",\"dims\":[1,4,4],\"dx\":1.0,\"dt\":1.0,"
             "\"byteorder\":\"LE\",\"fields\":[\"x\"]}\n";
        const float z[16] = {};
        f.write(reinterpret_cast<const char*>(z), sizeof z);
    }
    CHECK_THROWS_AS(read_fstk(td.file("bad_magic.fstk")), ParseError);

    {
        std::ofstream f(td.file("short.fstk"), std::ios::binary);
        f << "{\"magic\":\"FSTK1\",\"dims\":[1,4,4],\"dx\":1.0,\"dt\":1.0,"
             "\"byteorder\":\"LE\",\"fields\":[\"x\"]}\n";
        const float z[5] = {}; // payload truncated
        f.write(reinterpret_cast<const char*>(z), sizeof z);
    }
    CHECK_THROWS_AS(read_fstk(td.file("short.fstk")), ParseError);

    CHECK_THROWS_AS(read_fstk(td.file("missing.fstk")), DataError);

    // single-field convenience must refuse the wrong name
    {
        FieldMap m;
        m.emplace_back("present", random_stack(GridSpec{1, 4, 4, 1.0, 1.0}, 3));
        write_fstk(td.file("one.fstk"), m);
    }
    CHECK_THROWS_AS(read_fstk_one(td.file("one.fstk"), "absent"), DataError);
}

TEST_CASE("grid validation rejects degenerate extents") {
    GridSpec g;
    g.n_t = 0;
    CHECK_THROWS_AS(g.validate(), ShapeError);
    g = GridSpec{};
    g.dx = 0.0;
    CHECK_THROWS_AS(g.validate(), ShapeError);
    g = GridSpec{};
    g.dt = -1.0;
    CHECK_THROWS_AS(g.validate(), ShapeError);

    FieldStack f(GridSpec{2, 4, 4, 1.0, 1.0});
    f.data.pop_back();
    CHECK_THROWS_AS(f.validate(), ShapeError);

    FieldStack nan_stack(GridSpec{1, 4, 4, 1.0, 1.0});
    nan_stack.data[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK(!nan_stack.all_finite());
    CHECK_THROWS_AS(nan_stack.validate(), DataError);
}

TEST_CASE("composite adds the two state components elementwise") {
    const GridSpec g{3, 4, 5, 0.5, 1.0};
    StateSeq s;
    s.xbar = random_stack(g, 7);
    s.dx = random_stack(g, 8);
    const FieldStack c = composite(s);
    for (std::size_t i = 0; i < c.data.size(); ++i)
        CHECK(c.data[i] == s.xbar.data[i] + s.dx.data[i]);
}

TEST_CASE("spatial_gradient matches the finite-difference stencil on a ramp") {
    // f(t,y,x) = 3x - 2y in physical units: gx = 3/dx*dx = 3, gy = -2
    const double dx = 0.25;
    const GridSpec g{2, 6, 7, dx, 1.0};
    FieldStack f(g);
    for (int t = 0; t < g.n_t; ++t)
        for (int y = 0; y < g.n_y; ++y)
            for (int x = 0; x < g.n_x; ++x) f.at(t, y, x) = float(3.0 * x * dx - 2.0 * y * dx);
    FieldStack gx, gy;
    spatial_gradient(f, gx, gy);
    for (int t = 0; t < g.n_t; ++t)
        for (int y = 0; y < g.n_y; ++y)
            for (int x = 0; x < g.n_x; ++x) {
                CHECK(gx.at(t, y, x) == doctest::Approx(3.0).epsilon(1e-6));
                CHECK(gy.at(t, y, x) == doctest::Approx(-2.0).epsilon(1e-6));
            }
}

TEST_CASE("spatial_gradient uses central interior and one-sided edge stencils") {
    // quadratic f(x) = x^2 (cell units, dx = 1): central gives exactly 2x in
    // the interior; one-sided gives 1 at the left edge and 2W-3 at the right.
    const GridSpec g{1, 4, 8, 1.0, 1.0};
    FieldStack f(g);
    for (int y = 0; y < g.n_y; ++y)
        for (int x = 0; x < g.n_x; ++x) f.at(0, y, x) = float(x * x);
    FieldStack gx, gy;
    spatial_gradient(f, gx, gy);
    for (int x = 1; x < g.n_x - 1; ++x)
        CHECK(gx.at(0, 1, x) == doctest::Approx(2.0 * x).epsilon(1e-6));
    CHECK(gx.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(gx.at(0, 1, g.n_x - 1) == doctest::Approx(2.0 * (g.n_x - 1) - 1.0).epsilon(1e-6));
}

TEST_CASE("temporal_difference divides by dt and repeats the last step") {
    const GridSpec g{3, 4, 4, 1.0, 0.5};
    FieldStack f(g);
    for (int t = 0; t < 3; ++t)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) f.at(t, y, x) = float(t * t); // 0,1,4
    const FieldStack d = temporal_difference(f);
    CHECK(d.at(0, 0, 0) == doctest::Approx(2.0));  // (1-0)/0.5
    CHECK(d.at(1, 0, 0) == doctest::Approx(6.0));  // (4-1)/0.5
    CHECK(d.at(2, 0, 0) == doctest::Approx(6.0));  // repeated
    FieldStack single(GridSpec{1, 4, 4, 1.0, 1.0});
    CHECK_THROWS_AS(temporal_difference(single), ShapeError);
}

TEST_CASE("canonicalize zeroes values off the mask and validate enforces it") {
    const GridSpec g{2, 4, 4, 1.0, 1.0};
    ObsModality m;
    m.id = 1;
    m.values = random_stack(g, 11);
    m.mask = FieldStack(g, 0.0f);
    m.mask.at(0, 1, 1) = 1.0f;
    m.mask.at(1, 2, 0) = 1.0f;

    ObsModality raw = m;
    CHECK_THROWS_AS(raw.validate(), DataError); // off-mask values present
    m.canonicalize();
    m.validate();
    int nonzero = 0;
    for (float v : m.values.data) nonzero += (v != 0.0f);
    CHECK(nonzero <= 2);
    CHECK(m.values.at(0, 1, 1) == raw.values.at(0, 1, 1));

    // non-binary mask is rejected
    ObsModality bad = m;
    bad.mask.at(0, 0, 0) = 0.5f;
    CHECK_THROWS_AS(bad.validate(), DataError);
}
