#include <doctest.h>

#include <cmath>
#include <vector>

#include "varmap/fields.hpp"
#include "varmap/obsops.hpp"
#include "varmap/rng.hpp"

using namespace varmap;

namespace {

FieldStack random_stack(const GridSpec& g, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    FieldStack f(g);
    Rng rng(seed);
    for (float& v : f.data) v = float(rng.uniform(lo, hi));
    return f;
}

StateSeq random_state(const GridSpec& g, std::uint64_t seed) {
    StateSeq s;
    s.xbar = random_stack(g, seed);
    s.dx = random_stack(g, seed + 1);
    return s;
}

ObsModality dense_obs(int id, FieldStack values) {
    ObsModality m;
    m.id = id;
    m.mask = FieldStack(values.grid, 1.0f);
    m.values = std::move(values);
    return m;
}

// independent single-channel same-padding convolution, one frame
void naive_conv_frame(const FieldStack& f, int t, const std::vector<double>& k, int ks,
                      std::vector<double>& out) {
    const int H = f.grid.n_y, W = f.grid.n_x, r = ks / 2;
    out.assign(std::size_t(H) * W, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dxp = -r; dxp <= r; ++dxp) {
                    const int yy = y + dy, xx = x + dxp;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    acc += double(f.at(t, yy, xx)) * k[std::size_t(dy + r) * ks + (dxp + r)];
                }
            out[std::size_t(y) * W + x] = acc;
        }
}

} // namespace

TEST_CASE("masked identity residual honors the mask and the arithmetic") {
    const GridSpec g{2, 4, 4, 1.0, 1.0};

    SUBCASE("empty support gives an all-zero residual") {
        ObsModality y;
        y.id = 1;
        y.values = FieldStack(g, 0.0f);
        y.mask = FieldStack(g, 0.0f);
        const FieldStack r = masked_identity_residual(y, random_state(g, 5));
        for (float v : r.data) CHECK(v == 0.0f);
    }
    SUBCASE("perfect fit gives an all-zero residual") {
        // values on a 1/256 lattice keep xbar + dx exact in both f32 and f64
        StateSeq s = random_state(g, 6);
        for (float& v : s.xbar.data) v = std::round(v * 256.0f) / 256.0f;
        for (float& v : s.dx.data) v = std::round(v * 256.0f) / 256.0f;
        ObsModality y = dense_obs(1, composite(s));
        const FieldStack r = masked_identity_residual(y, s);
        for (float v : r.data) CHECK(v == 0.0f);
    }
    SUBCASE("uniform fields reproduce the scalar arithmetic") {
        StateSeq s;
        s.xbar = FieldStack(g, 0.5f);
        s.dx = FieldStack(g, 0.5f);
        ObsModality y = dense_obs(1, FieldStack(g, 2.0f));
        const FieldStack r = masked_identity_residual(y, s);
        for (float v : r.data) CHECK(v == 1.0f); // 2 - (0.5 + 0.5)
    }
    SUBCASE("grid mismatch is rejected") {
        ObsModality y = dense_obs(1, FieldStack(g, 0.0f));
        CHECK_THROWS_AS(masked_identity_residual(y, random_state(GridSpec{2, 5, 4, 1.0, 1.0}, 7)),
                        ShapeError);
    }
}

TEST_CASE("masked identity residual is jointly linear in observation and state") {
    const GridSpec g{2, 4, 5, 1.0, 1.0};
    StateSeq s = random_state(g, 8);
    ObsModality y = dense_obs(1, random_stack(g, 9));

    const FieldStack r1 = masked_identity_residual(y, s);

    ObsModality y2 = y;
    StateSeq s2 = s;
    for (float& v : y2.values.data) v *= 3.0f;
    for (float& v : s2.xbar.data) v *= 3.0f;
    for (float& v : s2.dx.data) v *= 3.0f;
    const FieldStack r3 = masked_identity_residual(y2, s2);
    for (std::size_t i = 0; i < r1.data.size(); ++i)
        CHECK(r3.data[i] == doctest::Approx(3.0f * r1.data[i]).epsilon(1e-6));
}

TEST_CASE("largescale residual compares the observation to the coarse component only") {
    const GridSpec g{2, 4, 4, 1.0, 1.0};
    StateSeq s = random_state(g, 10);

    ObsModality same = dense_obs(2, s.xbar);
    for (float v : largescale_residual(same, s).data) CHECK(v == 0.0f);

    StateSeq zero = s;
    zero.xbar = FieldStack(g, 0.0f);
    ObsModality y = dense_obs(2, random_stack(g, 11));
    const FieldStack r = largescale_residual(y, zero);
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(r.data[i] == y.values.data[i]);

    // elementwise oracle on random fields: y2 - xbar, independent of dx
    const FieldStack rr = largescale_residual(y, s);
    for (std::size_t i = 0; i < rr.data.size(); ++i)
        CHECK(rr.data[i] == doctest::Approx(y.values.data[i] - s.xbar.data[i]).epsilon(1e-6));
}

TEST_CASE("feature pair residual with delta kernels reduces to the identity residual") {
    const GridSpec g{2, 6, 6, 1.0, 1.0};
    StateSeq s = random_state(g, 12);
    ObsModality y = dense_obs(3, random_stack(g, 13));

    ObsTermSpec spec;
    spec.modality = 3;
    spec.kind = ObsTermKind::FeaturePair;
    spec.params = "fp";
    spec.channels = 1;
    spec.ksize = 3;

    ParamStore P;
    Tensor delta(Shape::nchw(1, 1, 3, 3));
    delta.data[4] = 1.0;
    P.set("fp.k1", delta);
    P.set("fp.k2", delta);

    const std::vector<FieldStack> r = feature_pair_residual(y, s, P, spec);
    REQUIRE(r.size() == 1);
    const FieldStack c = composite(s);
    for (std::size_t i = 0; i < r[0].data.size(); ++i)
        CHECK(double(r[0].data[i]) ==
              doctest::Approx(double(y.values.data[i]) - double(c.data[i])).epsilon(1e-6));

    P.set("fp.k1", Tensor(Shape::nchw(1, 1, 3, 3)));
    P.set("fp.k2", Tensor(Shape::nchw(1, 1, 3, 3)));
    for (const FieldStack& ch : feature_pair_residual(y, s, P, spec))
        for (float v : ch.data) CHECK(v == 0.0f);
}

TEST_CASE("feature pair residual matches a nested-loop convolution oracle") {
    const GridSpec g{1, 6, 6, 1.0, 1.0};
    StateSeq s = random_state(g, 14);
    ObsModality y = dense_obs(3, random_stack(g, 15));

    ObsTermSpec spec;
    spec.modality = 3;
    spec.kind = ObsTermKind::FeaturePair;
    spec.params = "fp";
    spec.channels = 2;
    spec.ksize = 3;

    const ParamStore P = feature_pair_init(spec, 99);
    REQUIRE(P.at("fp.k1").shape == Shape::nchw(2, 1, 3, 3));
    const std::vector<FieldStack> r = feature_pair_residual(y, s, P, spec);
    REQUIRE(r.size() == 2);

    const FieldStack c = composite(s);
    for (int ch = 0; ch < 2; ++ch) {
        std::vector<double> k1(P.at("fp.k1").data.begin() + ch * 9,
                               P.at("fp.k1").data.begin() + (ch + 1) * 9);
        std::vector<double> k2(P.at("fp.k2").data.begin() + ch * 9,
                               P.at("fp.k2").data.begin() + (ch + 1) * 9);
        std::vector<double> a, b;
        naive_conv_frame(y.values, 0, k1, 3, a);
        naive_conv_frame(c, 0, k2, 3, b);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(double(r[std::size_t(ch)].data[i]) == doctest::Approx(a[i] - b[i]).epsilon(1e-5));
    }

    ParamStore missing;
    CHECK_THROWS_AS(feature_pair_residual(y, s, missing, spec), Error);
}

TEST_CASE("geostrophic velocity rotates the composite gradient") {
    const GridSpec g{1, 8, 8, 0.5, 1.0};

    SUBCASE("constant field gives zero velocity") {
        StateSeq s;
        s.xbar = FieldStack(g, 1.25f);
        s.dx = FieldStack(g, -0.25f);
        const auto [u, v] = geostrophic_velocity(s);
        for (float x : u.data) CHECK(x == 0.0f);
        for (float x : v.data) CHECK(x == 0.0f);
    }
    SUBCASE("a y-ramp gives u = -c_g, v = 0 exactly") {
        StateSeq s;
        s.xbar = FieldStack(g, 0.0f);
        s.dx = FieldStack(g, 0.0f);
        for (int y = 0; y < g.n_y; ++y)
            for (int x = 0; x < g.n_x; ++x) s.xbar.at(0, y, x) = float(y * g.dx);
        const auto [u, v] = geostrophic_velocity(s, 2.5);
        for (float x : u.data) CHECK(x == doctest::Approx(-2.5).epsilon(1e-6));
        for (float x : v.data) CHECK(x == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("discrete divergence vanishes because the stencils commute") {
        StateSeq s;
        s.xbar = FieldStack(g, 0.0f);
        s.dx = FieldStack(g, 0.0f);
        for (int y = 0; y < g.n_y; ++y)
            for (int x = 0; x < g.n_x; ++x)
                s.xbar.at(0, y, x) = float(std::sin(1.3 * x * g.dx + 0.4) * std::cos(0.9 * y * g.dx));
        const auto [u, v] = geostrophic_velocity(s);
        FieldStack ux, uy, vx, vy;
        spatial_gradient(u, ux, uy);
        spatial_gradient(v, vx, vy);
        for (std::size_t i = 0; i < ux.data.size(); ++i)
            CHECK(std::abs(ux.data[i] + vy.data[i]) < 1e-5);
    }
}

TEST_CASE("advection residual vanishes for constant tracers and reduces to d/dt at rest") {
    const GridSpec g{4, 6, 6, 0.5, 0.5};
    StateSeq s = random_state(g, 16);

    ObsModality y = dense_obs(3, FieldStack(g, 3.7f));
    for (float v : advection_residual(y, s).data) CHECK(v == 0.0f);

    StateSeq rest;
    rest.xbar = FieldStack(g, 0.0f);
    rest.dx = FieldStack(g, 0.0f);
    ObsModality moving = dense_obs(3, random_stack(g, 17));
    const FieldStack r = advection_residual(moving, rest);
    const FieldStack dt = temporal_difference(moving.values);
    for (std::size_t i = 0; i < r.data.size(); ++i)
        CHECK(r.data[i] == doctest::Approx(dt.data[i]).epsilon(1e-6));

    GridSpec single = g;
    single.n_t = 1;
    ObsModality short_obs = dense_obs(3, FieldStack(single, 0.0f));
    StateSeq short_state;
    short_state.xbar = FieldStack(single, 0.0f);
    short_state.dx = FieldStack(single, 0.0f);
    CHECK_THROWS_AS(advection_residual(short_obs, short_state), ShapeError);
}

TEST_CASE("advection residual converges on an analytically transported tracer") {
    // y(x, t) = sin(2 pi (x + c t)) solves dy/dt - c * dy/dx = 0; the state is
    // a y-ramp whose geostrophic velocity is exactly (c, 0).
    const double c = 0.3;
    auto residual_rms = [&](int nx, int nt) {
        const double dx = 1.0 / nx, dt = 0.5 / nt;
        const GridSpec g{nt, nx, nx, dx, dt};
        FieldStack tracer(g);
        for (int t = 0; t < nt; ++t)
            for (int y = 0; y < nx; ++y)
                for (int x = 0; x < nx; ++x)
                    tracer.at(t, y, x) = float(std::sin(2.0 * M_PI * (x * dx + c * t * dt)));
        StateSeq s;
        s.xbar = FieldStack(g, 0.0f);
        s.dx = FieldStack(g, 0.0f);
        for (int t = 0; t < nt; ++t)
            for (int y = 0; y < nx; ++y)
                for (int x = 0; x < nx; ++x) s.xbar.at(t, y, x) = float(-c * y * dx);
        const FieldStack r = advection_residual(dense_obs(3, std::move(tracer)), s);
        double ss = 0.0;
        for (float v : r.data) ss += double(v) * v;
        return std::sqrt(ss / double(r.data.size()));
    };
    const double coarse = residual_rms(16, 4);
    const double fine = residual_rms(32, 8);
    CHECK(fine < 0.6 * coarse); // first-order forward time difference dominates
    CHECK(fine < 0.2);
}
