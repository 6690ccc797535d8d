#include <doctest.h>

#include <cmath>
#include <vector>

#include "varmap/kernels.hpp"
#include "varmap/rng.hpp"

using namespace varmap;

namespace {

std::vector<double> randv(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Textbook triple-loop convolution, written independently of both lanes.
void naive_conv(const std::vector<double>& x, const std::vector<double>& k,
                std::vector<double>& y, int N, int Ci, int H, int W, int Co, int kh, int kw) {
    y.assign(std::size_t(N) * Co * H * W, 0.0);
    const int ph = kh / 2, pw = kw / 2;
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const int ii = i + u - ph, jj = j + v - pw;
                                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                                acc += x[((std::size_t(n) * Ci + ci) * H + ii) * W + jj] *
                                       k[((std::size_t(co) * Ci + ci) * kh + u) * kw + v];
                            }
                    y[((std::size_t(n) * Co + co) * H + i) * W + j] = acc;
                }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("conv2d forward matches a naive triple loop and the serial lane") {
    Rng rng(Rng::substream(42, 1));
    const int N = 3, Ci = 4, H = 9, W = 7, Co = 5, kh = 3, kw = 3;
    const auto x = randv(std::size_t(N) * Ci * H * W, rng);
    const auto k = randv(std::size_t(Co) * Ci * kh * kw, rng);

    std::vector<double> want;
    naive_conv(x, k, want, N, Ci, H, W, Co, kh, kw);

    std::vector<double> got(want.size()), ref(want.size());
    kern::conv2d_fwd(x.data(), k.data(), got.data(), N, Ci, H, W, Co, kh, kw);
    kern_ref::conv2d_fwd(x.data(), k.data(), ref.data(), N, Ci, H, W, Co, kh, kw);

    CHECK(max_abs_diff(got, want) < 1e-12);
    CHECK(max_abs_diff(ref, want) < 1e-12);
}

TEST_CASE("conv2d with a centered delta kernel is the identity map") {
    Rng rng(Rng::substream(42, 2));
    const int N = 2, C = 3, H = 8, W = 8;
    const auto x = randv(std::size_t(N) * C * H * W, rng);
    // k[co][ci][1][1] = (co == ci), 3x3
    std::vector<double> k(std::size_t(C) * C * 9, 0.0);
    for (int c = 0; c < C; ++c) k[((std::size_t(c) * C + c) * 3 + 1) * 3 + 1] = 1.0;
    std::vector<double> y(x.size());
    kern::conv2d_fwd(x.data(), k.data(), y.data(), N, C, H, W, C, 3, 3);
    CHECK(max_abs_diff(y, x) == 0.0); // exact: every term is 0*x or 1*x
}

TEST_CASE("conv2d adjoints satisfy the inner-product identity") {
    // <conv(x,k), g> == <x, dinput(g,k)> == <k, dweight(x,g)>
    Rng rng(Rng::substream(42, 3));
    const int N = 2, Ci = 3, H = 6, W = 5, Co = 4, kh = 3, kw = 5;
    const auto x = randv(std::size_t(N) * Ci * H * W, rng);
    const auto k = randv(std::size_t(Co) * Ci * kh * kw, rng);
    const auto g = randv(std::size_t(N) * Co * H * W, rng);

    std::vector<double> y(g.size()), dx(x.size()), dk(k.size());
    kern::conv2d_fwd(x.data(), k.data(), y.data(), N, Ci, H, W, Co, kh, kw);
    kern::conv2d_dinput(g.data(), k.data(), dx.data(), N, Ci, H, W, Co, kh, kw);
    kern::conv2d_dweight(x.data(), g.data(), dk.data(), N, Ci, H, W, Co, kh, kw);

    const double yg = kern_ref::dot(y.data(), g.data(), y.size());
    const double xdx = kern_ref::dot(x.data(), dx.data(), x.size());
    const double kdk = kern_ref::dot(k.data(), dk.data(), k.size());
    CHECK(std::abs(yg - xdx) < 1e-8 * std::abs(yg));
    CHECK(std::abs(yg - kdk) < 1e-8 * std::abs(yg));
}

// Value kernels compute identical math but the two lanes may associate and
// fuse differently, so they match to rounding; the blocked reductions pin
// their accumulation order and must match exactly.
TEST_CASE("parallel and serial lanes agree on every shared kernel") {
    Rng rng(Rng::substream(42, 4));
    const int N = 3, C = 6, H = 12, W = 10;
    const std::size_t n = std::size_t(N) * C * H * W;
    const auto x = randv(n, rng);
    const auto g = randv(n, rng);

    SUBCASE("conv family") {
        const int Co = 5, kh = 5, kw = 3;
        const auto k = randv(std::size_t(Co) * C * kh * kw, rng);
        const auto go = randv(std::size_t(N) * Co * H * W, rng);
        std::vector<double> a(std::size_t(N) * Co * H * W), b(a.size());
        kern::conv2d_fwd(x.data(), k.data(), a.data(), N, C, H, W, Co, kh, kw);
        kern_ref::conv2d_fwd(x.data(), k.data(), b.data(), N, C, H, W, Co, kh, kw);
        CHECK(max_abs_diff(a, b) < 1e-12);

        std::vector<double> da(n), db(n);
        kern::conv2d_dinput(go.data(), k.data(), da.data(), N, C, H, W, Co, kh, kw);
        kern_ref::conv2d_dinput(go.data(), k.data(), db.data(), N, C, H, W, Co, kh, kw);
        CHECK(max_abs_diff(da, db) < 1e-12);

        std::vector<double> ka(k.size()), kb(k.size());
        kern::conv2d_dweight(x.data(), go.data(), ka.data(), N, C, H, W, Co, kh, kw);
        kern_ref::conv2d_dweight(x.data(), go.data(), kb.data(), N, C, H, W, Co, kh, kw);
        CHECK(max_abs_diff(ka, kb) < 1e-12);
    }
    SUBCASE("pool, upsample, derivatives") {
        std::vector<double> a(n), b(n);
        kern::avgpool2(x.data(), a.data(), N, C, H, W);
        kern_ref::avgpool2(x.data(), b.data(), N, C, H, W);
        CHECK(max_abs_diff(std::vector<double>(a.begin(), a.begin() + n / 4),
                           std::vector<double>(b.begin(), b.begin() + n / 4)) < 1e-12);

        kern::avgpool2_adj(g.data(), a.data(), N, C, H, W);
        kern_ref::avgpool2_adj(g.data(), b.data(), N, C, H, W);
        CHECK(max_abs_diff(a, b) < 1e-12);

        const int h = H / 2, w = W / 2;
        std::vector<double> ua(n), ub(n);
        kern::up_bilinear2(x.data(), ua.data(), N, C, h, w);
        kern_ref::up_bilinear2(x.data(), ub.data(), N, C, h, w);
        CHECK(max_abs_diff(ua, ub) < 1e-12);
        kern::up_bilinear2_adj(g.data(), ua.data(), N, C, h, w);
        kern_ref::up_bilinear2_adj(g.data(), ub.data(), N, C, h, w);
        CHECK(max_abs_diff(std::vector<double>(ua.begin(), ua.begin() + std::size_t(N) * C * h * w),
                           std::vector<double>(ub.begin(), ub.begin() + std::size_t(N) * C * h * w)) ==
              0.0);

        for (auto fn : {0, 1, 2, 3}) {
            std::vector<double> da(n), db(n);
            switch (fn) {
                case 0:
                    kern::ddx(x.data(), da.data(), N, C, H, W, 20.0);
                    kern_ref::ddx(x.data(), db.data(), N, C, H, W, 20.0);
                    break;
                case 1:
                    kern::ddy(x.data(), da.data(), N, C, H, W, 20.0);
                    kern_ref::ddy(x.data(), db.data(), N, C, H, W, 20.0);
                    break;
                case 2:
                    kern::ddx_adj(g.data(), da.data(), N, C, H, W, 20.0);
                    kern_ref::ddx_adj(g.data(), db.data(), N, C, H, W, 20.0);
                    break;
                default:
                    kern::ddy_adj(g.data(), da.data(), N, C, H, W, 20.0);
                    kern_ref::ddy_adj(g.data(), db.data(), N, C, H, W, 20.0);
            }
            CHECK(max_abs_diff(da, db) < 1e-12);
        }
    }
    SUBCASE("reductions") {
        CHECK(kern::dot(x.data(), g.data(), n) == kern_ref::dot(x.data(), g.data(), n));
        CHECK(kern::masked_sq_norm(x.data(), g.data(), n) ==
              kern_ref::masked_sq_norm(x.data(), g.data(), n));
    }
}

TEST_CASE("reductions are bit-identical across thread counts") {
    Rng rng(Rng::substream(42, 5));
    const std::size_t n = 40'000;
    const auto a = randv(n, rng);
    const auto b = randv(n, rng);

    set_threads(1);
    const double d1 = kern::dot(a.data(), b.data(), n);
    const double m1 = kern::masked_sq_norm(a.data(), b.data(), n);
    set_threads(3);
    const double d3 = kern::dot(a.data(), b.data(), n);
    const double m3 = kern::masked_sq_norm(a.data(), b.data(), n);
    set_threads(0);
    const double d0 = kern::dot(a.data(), b.data(), n);
    const double m0 = kern::masked_sq_norm(a.data(), b.data(), n);

    CHECK(d1 == d3);
    CHECK(d1 == d0);
    CHECK(m1 == m3);
    CHECK(m1 == m0);
}

TEST_CASE("avgpool2 halves extents and preserves the mean") {
    Rng rng(Rng::substream(42, 6));
    const int N = 1, C = 2, H = 8, W = 6;
    const auto x = randv(std::size_t(N) * C * H * W, rng);
    std::vector<double> y(std::size_t(N) * C * (H / 2) * (W / 2));
    kern::avgpool2(x.data(), y.data(), N, C, H, W);
    double mx = 0.0, my = 0.0;
    for (double v : x) mx += v;
    for (double v : y) my += v;
    CHECK(mx / double(x.size()) == doctest::Approx(my / double(y.size())).epsilon(1e-12));
}

TEST_CASE("masked_sq_norm of a constant residual is count times square") {
    std::vector<double> r(8, 2.0), m(8, 1.0);
    CHECK(kern::masked_sq_norm(r.data(), m.data(), 8) == 32.0);
    m[3] = 0.0;
    CHECK(kern::masked_sq_norm(r.data(), m.data(), 8) == 28.0);
}

TEST_CASE("ddx on a linear ramp is exactly the slope, ddy is zero") {
    const int H = 6, W = 8;
    std::vector<double> f(std::size_t(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) f[std::size_t(i) * W + j] = 3.0 * j;
    std::vector<double> gx(f.size()), gy(f.size());
    const double inv_d = 2.0; // slope in physical units: 3 * 2
    kern::ddx(f.data(), gx.data(), 1, 1, H, W, inv_d);
    kern::ddy(f.data(), gy.data(), 1, 1, H, W, inv_d);
    for (double v : gx) CHECK(v == doctest::Approx(6.0).epsilon(1e-13));
    for (double v : gy) CHECK(v == 0.0);
}
