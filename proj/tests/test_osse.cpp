#include <doctest.h>

#include "varmap/errors.hpp"
#include "varmap/fields.hpp"
#include "varmap/osse.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <random>
#include <vector>

using namespace varmap;

namespace {

using cplx = std::complex<double>;

// Naive separable 2-D forward DFT with hand-rolled twiddles, independent of
// the FFT library the implementation uses.
std::vector<cplx> dft2(const std::vector<float>& f, int H, int W) {
    std::vector<cplx> rows(std::size_t(H) * W), out(std::size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int kx = 0; kx < W; ++kx) {
            cplx s = 0.0;
            for (int x = 0; x < W; ++x)
                s += double(f[std::size_t(y) * W + x]) *
                     std::polar(1.0, -2.0 * M_PI * double(kx) * double(x) / double(W));
            rows[std::size_t(y) * W + kx] = s;
        }
    for (int kx = 0; kx < W; ++kx)
        for (int ky = 0; ky < H; ++ky) {
            cplx s = 0.0;
            for (int y = 0; y < H; ++y)
                s += rows[std::size_t(y) * W + kx] *
                     std::polar(1.0, -2.0 * M_PI * double(ky) * double(y) / double(H));
            out[std::size_t(ky) * W + kx] = s;
        }
    return out;
}

int signed_index(int m, int n) { return m <= n / 2 ? m : m - n; }

double wavenumber(int my, int mx, int H, int W, double dx) {
    const double fx = double(signed_index(mx, W)) / (double(W) * dx);
    const double fy = double(signed_index(my, H)) / (double(H) * dx);
    return 2.0 * M_PI * std::hypot(fx, fy);
}

double frame_coverage(const FieldStack& masks, int t) {
    const std::size_t plane = masks.grid.frame_size();
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += masks.data[std::size_t(t) * plane + i];
    return s / double(plane);
}

// Least-squares slope of log(annulus-mean power) against the mean of
// 0.5*log(k^2 + k0^2) per annulus; the synthesis law makes the expected value
// exactly -slope under this regressor for every k.
double fitted_spectral_slope(const FieldStack& frame0, double lambda0, double dx) {
    const int H = frame0.grid.n_y, W = frame0.grid.n_x;
    const auto F = dft2(frame0.data, H, W);
    const double k0 = 2.0 * M_PI / lambda0;
    const double knyq = M_PI / dx;
    const double lk_lo = std::log(1.5 * k0), lk_hi = std::log(0.72 * knyq);
    const int n_bins = 10;
    std::vector<double> power(n_bins, 0.0), reg(n_bins, 0.0);
    std::vector<int> count(n_bins, 0);
    for (int my = 0; my < H; ++my)
        for (int mx = 0; mx < W; ++mx) {
            if ((W % 2 == 0 && mx == W / 2) || (H % 2 == 0 && my == H / 2))
                continue; // Nyquist lines carry no signal by construction
            const double k = wavenumber(my, mx, H, W, dx);
            if (k < 1.5 * k0 || k > 0.72 * knyq) continue;
            const int b = int(double(n_bins) * (std::log(k) - lk_lo) / (lk_hi - lk_lo));
            if (b < 0 || b >= n_bins) continue;
            power[b] += std::norm(F[std::size_t(my) * W + mx]);
            reg[b] += 0.5 * std::log(k * k + k0 * k0);
            count[b] += 1;
        }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int b = 0; b < n_bins; ++b) {
        if (count[b] < 8) continue; // annulus mean too noisy to anchor the fit
        const double x = reg[b] / count[b];
        const double y = std::log(power[b] / count[b]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    REQUIRE(n >= 6);
    return (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
}

double max_abs_diff(const FieldStack& a, const FieldStack& b) {
    REQUIRE(a.data.size() == b.data.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
    return m;
}

} // namespace

TEST_CASE("synthetic truth has unit RMS, zero frame means, and is seed-deterministic") {
    SynthConfig cfg;
    cfg.grid = GridSpec{6, 32, 32, 0.1, 1.0};
    const FieldStack a = synth_truth(cfg);
    CHECK(a.grid == cfg.grid);

    double sum_sq = 0.0;
    for (float v : a.data) sum_sq += double(v) * v;
    CHECK(std::abs(std::sqrt(sum_sq / double(a.data.size())) - 1.0) < 1e-6);

    const std::size_t plane = cfg.grid.frame_size();
    for (int t = 0; t < cfg.grid.n_t; ++t) {
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += a.data[std::size_t(t) * plane + i];
        CHECK(std::abs(mean / double(plane)) < 1e-6);
    }

    const FieldStack b = synth_truth(cfg);
    CHECK(a.data == b.data); // bitwise: same seed, same synthesis

    SynthConfig other = cfg;
    other.seed = cfg.seed + 1;
    const FieldStack c = synth_truth(other);
    CHECK(max_abs_diff(a, c) > 1e-3);
}

TEST_CASE("synthetic truth periodogram recovers the configured spectral slope") {
    for (double slope : {3.0, 4.5}) {
        CAPTURE(slope);
        SynthConfig cfg;
        cfg.grid = GridSpec{1, 64, 64, 0.05, 1.0};
        cfg.slope = slope;
        const FieldStack tr = synth_truth(cfg);
        const double fit = fitted_spectral_slope(tr, cfg.lambda0, cfg.grid.dx);
        CAPTURE(fit);
        CHECK(std::abs(fit + slope) < 0.3);
    }
}

TEST_CASE("integer advection translates frames circularly; frozen config repeats frame 0") {
    SynthConfig cfg;
    cfg.grid = GridSpec{4, 16, 16, 0.25, 1.0};
    cfg.u0 = 1.0;
    cfg.v0 = 2.0;
    cfg.phase_diffusion = 0.0;
    const FieldStack tr = synth_truth(cfg);
    const int H = 16, W = 16;
    const std::size_t plane = std::size_t(H) * W;

    for (int t = 1; t < 4; ++t) {
        double worst = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int xs = ((x - t * 1) % W + W) % W; // f_t(x) = f_0(x - u0 t)
                const int ys = ((y - t * 2) % H + H) % H;
                const double got = tr.data[std::size_t(t) * plane + std::size_t(y) * W + x];
                const double want = tr.data[std::size_t(ys) * W + xs];
                worst = std::max(worst, std::abs(got - want));
            }
        CHECK(worst < 1e-5);
    }

    SynthConfig frozen = cfg;
    frozen.u0 = frozen.v0 = 0.0;
    const FieldStack still = synth_truth(frozen);
    for (int t = 1; t < 4; ++t)
        for (std::size_t i = 0; i < plane; ++i)
            REQUIRE(still.data[std::size_t(t) * plane + i] == still.data[i]);
}

TEST_CASE("phase diffusion decorrelates later frames without touching frame 0") {
    SynthConfig calm;
    calm.grid = GridSpec{5, 32, 32, 0.1, 1.0};
    calm.phase_diffusion = 0.0;
    SynthConfig stormy = calm;
    stormy.phase_diffusion = 0.5;

    const FieldStack a = synth_truth(calm);
    const FieldStack b = synth_truth(stormy);
    const std::size_t plane = calm.grid.frame_size();

    // Frame 0 predates any random walk; it differs only through the global
    // RMS normalization constant, i.e. by a single positive scale factor.
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        num += double(a.data[i]) * double(b.data[i]);
        den += double(a.data[i]) * double(a.data[i]);
    }
    const double scale = num / den;
    CHECK(scale > 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
        worst = std::max(worst, std::abs(scale * double(a.data[i]) - double(b.data[i])));
    CHECK(worst < 1e-5);

    // Later frames must actually decorrelate from their calm counterparts.
    const std::size_t off = std::size_t(4) * plane;
    double diff = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
        diff = std::max(diff, std::abs(scale * double(a.data[off + i]) - double(b.data[off + i])));
    CHECK(diff > 1e-2);
}

TEST_CASE("SST operator maps a plane wave to |k| times itself") {
    const GridSpec g{1, 16, 16, 0.25, 1.0};
    FieldStack ssh(g);
    const int H = g.n_y, W = g.n_x;

    SUBCASE("mixed mode") {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                ssh.data[std::size_t(y) * W + x] =
                    float(std::sin(2.0 * M_PI * (3.0 * x / W + 2.0 * y / H)));
        const double k = 2.0 * M_PI * std::hypot(3.0 / (W * g.dx), 2.0 / (H * g.dx));
        const FieldStack sst = derive_sst(ssh, 0.0, 7);
        double worst = 0.0;
        for (std::size_t i = 0; i < ssh.data.size(); ++i)
            worst = std::max(worst, std::abs(double(sst.data[i]) - k * double(ssh.data[i])));
        CHECK(worst < 1e-6 * k);
    }

    SUBCASE("axis-aligned mode") {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                ssh.data[std::size_t(y) * W + x] = float(std::cos(2.0 * M_PI * 4.0 * x / W));
        const double k = 2.0 * M_PI * 4.0 / (W * g.dx);
        const FieldStack sst = derive_sst(ssh, 0.0, 7);
        double worst = 0.0;
        for (std::size_t i = 0; i < ssh.data.size(); ++i)
            worst = std::max(worst, std::abs(double(sst.data[i]) - k * double(ssh.data[i])));
        CHECK(worst < 1e-6 * k);
    }

    SUBCASE("constant field is annihilated") {
        std::fill(ssh.data.begin(), ssh.data.end(), 3.25f);
        const FieldStack sst = derive_sst(ssh, 0.0, 7);
        for (float v : sst.data) REQUIRE(std::abs(v) < 1e-9);
    }
}

TEST_CASE("SST operator matches a direct-DFT oracle and satisfies Parseval") {
    const GridSpec g{2, 12, 16, 0.5, 1.0};
    FieldStack ssh(g);
    std::mt19937 rng(2024);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (float& v : ssh.data) v = float(nd(rng));

    const FieldStack sst = derive_sst(ssh, 0.0, 7);
    const int H = g.n_y, W = g.n_x;
    const std::size_t plane = g.frame_size();

    for (int t = 0; t < g.n_t; ++t) {
        std::vector<float> frame(ssh.data.begin() + long(t) * long(plane),
                                 ssh.data.begin() + long(t + 1) * long(plane));
        auto F = dft2(frame, H, W);

        // Parseval: sum over pixels of sst^2 equals (1/N) sum over modes of
        // k^2 |ssh_hat|^2 because the operator is diagonal in Fourier space.
        double lhs = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = sst.data[std::size_t(t) * plane + i];
            lhs += v * v;
        }
        double rhs = 0.0;
        for (int my = 0; my < H; ++my)
            for (int mx = 0; mx < W; ++mx) {
                const double k = wavenumber(my, mx, H, W, g.dx);
                rhs += k * k * std::norm(F[std::size_t(my) * W + mx]);
            }
        rhs /= double(plane);
        CHECK(std::abs(lhs - rhs) < 1e-6 * rhs);

        // Pixelwise oracle: inverse-transform k * ssh_hat by hand.
        double max_sst = 0.0;
        for (std::size_t i = 0; i < plane; ++i)
            max_sst = std::max(max_sst, std::abs(double(sst.data[std::size_t(t) * plane + i])));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                cplx acc = 0.0;
                for (int my = 0; my < H; ++my)
                    for (int mx = 0; mx < W; ++mx) {
                        const double k = wavenumber(my, mx, H, W, g.dx);
                        acc += k * F[std::size_t(my) * W + mx] *
                               std::polar(1.0, 2.0 * M_PI * (double(mx) * x / double(W) +
                                                             double(my) * y / double(H)));
                    }
                const double want = acc.real() / double(plane);
                const double got = sst.data[std::size_t(t) * plane + std::size_t(y) * W + x];
                REQUIRE(std::abs(got - want) < 1e-6 * std::max(1.0, max_sst));
            }
    }
}

TEST_CASE("SST synthesis is linear, seeded, and carries the requested noise level") {
    const GridSpec g{6, 32, 32, 0.1, 1.0};
    SynthConfig cfg;
    cfg.grid = g;
    const FieldStack a = synth_truth(cfg);
    SynthConfig cfg2 = cfg;
    cfg2.seed = 999;
    const FieldStack b = synth_truth(cfg2);

    SUBCASE("linearity") {
        FieldStack sum(g);
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = a.data[i] + b.data[i];
        const FieldStack sa = derive_sst(a, 0.0, 5);
        const FieldStack sb = derive_sst(b, 0.0, 5);
        const FieldStack ss = derive_sst(sum, 0.0, 5);
        double worst = 0.0;
        for (std::size_t i = 0; i < ss.data.size(); ++i)
            worst = std::max(worst,
                             std::abs(double(ss.data[i]) - double(sa.data[i]) - double(sb.data[i])));
        CHECK(worst < 1e-5);
    }

    SUBCASE("noise is seed-deterministic and has the configured scale") {
        const FieldStack clean = derive_sst(a, 0.0, 5);
        const FieldStack n1 = derive_sst(a, 0.1, 5);
        const FieldStack n2 = derive_sst(a, 0.1, 5);
        CHECK(n1.data == n2.data);

        double sum_sq = 0.0;
        for (std::size_t i = 0; i < n1.data.size(); ++i) {
            const double d = double(n1.data[i]) - double(clean.data[i]);
            sum_sq += d * d;
        }
        const double rms = std::sqrt(sum_sq / double(n1.data.size()));
        CHECK(rms > 0.09);
        CHECK(rms < 0.11);

        const FieldStack other = derive_sst(a, 0.1, 6);
        CHECK(max_abs_diff(n1, other) > 1e-3);
    }

    SUBCASE("negative noise level is rejected") {
        CHECK_THROWS_AS(derive_sst(a, -0.1, 5), ConfigError);
    }
}

TEST_CASE("daily mask coverage stays within two points of the five percent target") {
    const GridSpec g{30, 64, 64, 0.05, 1.0};
    MaskConfig mc; // defaults target 5%
    const FieldStack masks = make_masks(mc, g, 1234);
    CHECK(masks.grid == g);

    for (float v : masks.data) REQUIRE((v == 0.0f || v == 1.0f));

    double avg = 0.0;
    for (int t = 0; t < g.n_t; ++t) {
        const double c = frame_coverage(masks, t);
        CAPTURE(t);
        CHECK(c > mc.target_coverage - 0.02);
        CHECK(c < mc.target_coverage + 0.02);
        avg += c;
    }
    avg /= double(g.n_t);
    CHECK(avg > 0.04);
    CHECK(avg < 0.06);

    const FieldStack again = make_masks(mc, g, 1234);
    CHECK(masks.data == again.data);
}

TEST_CASE("swath gap removes cells from the band interior") {
    const GridSpec g{1, 64, 64, 0.05, 1.0};
    MaskConfig gapless;
    gapless.swath_gap = 0;
    MaskConfig gapped;
    gapped.swath_gap = 2;

    const FieldStack full = swath_mask(gapless, g, 3, 42);
    const FieldStack cut = swath_mask(gapped, g, 3, 42);
    double n_full = 0.0, n_cut = 0.0;
    for (float v : full.data) n_full += v;
    for (float v : cut.data) n_cut += v;
    CHECK(n_cut > 0.0);
    CHECK(n_cut < n_full);
    // The gapped band is a subset of the gapless one.
    for (std::size_t i = 0; i < full.data.size(); ++i)
        if (cut.data[i] > 0.0f) REQUIRE(full.data[i] > 0.0f);
}

TEST_CASE("mask configuration validation rejects bad extents") {
    const GridSpec g{1, 16, 16, 0.25, 1.0};
    MaskConfig mc;
    mc.swath_gap = 5; // >= swath_width
    CHECK_THROWS_AS(make_masks(mc, g, 1), ConfigError);
    MaskConfig mc2;
    mc2.track_width = 0;
    CHECK_THROWS_AS(nadir_mask(mc2, g, 0, 1), ConfigError);
    MaskConfig mc3;
    mc3.target_coverage = 0.0;
    CHECK_THROWS_AS(make_masks(mc3, g, 1), ConfigError);
}

TEST_CASE("noiseless fully observed altimeter modality reproduces the truth exactly") {
    SynthConfig cfg;
    cfg.grid = GridSpec{4, 16, 16, 0.25, 1.0};
    const FieldStack truth = synth_truth(cfg);

    FieldStack ones(cfg.grid);
    std::fill(ones.data.begin(), ones.data.end(), 1.0f);
    const ObsModality full = make_obs_ssh(truth, ones, 0.0, 9);
    CHECK(full.id == 1);
    CHECK(full.values.data == truth.data);

    // With a sparse mask, off-track cells are exactly zero and on-track cells
    // carry truth plus noise.
    FieldStack sparse(cfg.grid);
    for (std::size_t i = 0; i < sparse.data.size(); ++i) sparse.data[i] = (i % 7 == 0) ? 1.0f : 0.0f;
    const ObsModality obs = make_obs_ssh(truth, sparse, 0.05, 9);
    for (std::size_t i = 0; i < obs.values.data.size(); ++i) {
        if (sparse.data[i] == 0.0f)
            REQUIRE(obs.values.data[i] == 0.0f);
        else
            REQUIRE(std::abs(double(obs.values.data[i]) - double(truth.data[i])) < 0.05 * 6.0);
    }

    const ObsModality rerun = make_obs_ssh(truth, sparse, 0.05, 9);
    CHECK(obs.values.data == rerun.values.data);

    FieldStack wrong(GridSpec{4, 16, 12, 0.25, 1.0});
    CHECK_THROWS_AS(make_obs_ssh(truth, wrong, 0.0, 1), ShapeError);
}

TEST_CASE("window extraction is exact and bounds-checked") {
    SynthConfig cfg;
    cfg.grid = GridSpec{6, 8, 8, 0.5, 1.0};
    const FieldStack f = synth_truth(cfg);
    const std::size_t plane = cfg.grid.frame_size();

    const FieldStack w = window_stack(f, 2, 3);
    CHECK(w.grid.n_t == 3);
    for (std::size_t i = 0; i < w.data.size(); ++i)
        REQUIRE(w.data[i] == f.data[std::size_t(2) * plane + i]);

    CHECK_THROWS_AS(window_stack(f, -1, 3), ShapeError);
    CHECK_THROWS_AS(window_stack(f, 4, 3), ShapeError);
    CHECK_THROWS_AS(window_stack(f, 0, 0), ShapeError);
}

TEST_CASE("dataset windows respect the split boundaries and tile the test block") {
    SynthConfig cfg;
    cfg.grid = GridSpec{60, 16, 16, 0.25, 1.0};
    const FieldStack truth = synth_truth(cfg);
    const FieldStack sst = derive_sst(truth, 0.05, 2);
    MaskConfig mc;
    const FieldStack masks = make_masks(mc, cfg.grid, 3);
    FieldStack oi(cfg.grid); // stand-in gap-free product
    for (std::size_t i = 0; i < oi.data.size(); ++i) oi.data[i] = truth.data[i] * 0.5f;

    const SplitSpec split{35, 45};
    const Dataset ds = make_dataset(truth, sst, masks, 7, 5, 0.05, oi, split, 11);

    std::vector<int> train_starts, val_starts, test_starts;
    for (const auto& s : ds.train) train_starts.push_back(s.start_day);
    for (const auto& s : ds.val) val_starts.push_back(s.start_day);
    for (const auto& s : ds.test) test_starts.push_back(s.start_day);
    CHECK(train_starts == std::vector<int>{0, 5, 10, 15, 20, 25});
    CHECK(val_starts == std::vector<int>{35});
    CHECK(test_starts == std::vector<int>{45, 52, 53});

    // No window straddles a split boundary.
    for (int d : train_starts) REQUIRE(d + 7 <= split.train_end);
    for (int d : val_starts) {
        REQUIRE(d >= split.train_end);
        REQUIRE(d + 7 <= split.val_end);
    }
    std::vector<bool> covered(60, false);
    for (int d : test_starts) {
        REQUIRE(d >= split.val_end);
        REQUIRE(d + 7 <= 60);
        for (int t = d; t < d + 7; ++t) covered[std::size_t(t)] = true;
    }
    for (int t = split.val_end; t < 60; ++t) REQUIRE(covered[std::size_t(t)]);

    // Sample contents are bitwise windows of the parent stacks.
    const TrainSample& s = ds.train[2]; // start day 10
    const std::size_t plane = cfg.grid.frame_size();
    for (std::size_t i = 0; i < s.x_true.data.size(); ++i)
        REQUIRE(s.x_true.data[i] == truth.data[std::size_t(10) * plane + i]);
    REQUIRE(s.obs.modalities.size() == 3);
    CHECK(s.obs.modalities[0].id == 1);
    CHECK(s.obs.modalities[1].id == 2);
    CHECK(s.obs.modalities[2].id == 3);
    for (std::size_t i = 0; i < s.obs.modalities[0].mask.data.size(); ++i)
        REQUIRE(s.obs.modalities[0].mask.data[i] == masks.data[std::size_t(10) * plane + i]);
    for (float v : s.obs.modalities[1].mask.data) REQUIRE(v == 1.0f);
    for (float v : s.obs.modalities[2].mask.data) REQUIRE(v == 1.0f);
    for (std::size_t i = 0; i < s.obs.modalities[2].values.data.size(); ++i)
        REQUIRE(s.obs.modalities[2].values.data[i] == sst.data[std::size_t(10) * plane + i]);
    for (std::size_t i = 0; i < s.obs.modalities[1].values.data.size(); ++i)
        REQUIRE(s.obs.modalities[1].values.data[i] == oi.data[std::size_t(10) * plane + i]);

    // The solver start is the gap-free product for the mean and zero detail.
    for (std::size_t i = 0; i < s.x0.xbar.data.size(); ++i)
        REQUIRE(s.x0.xbar.data[i] == oi.data[std::size_t(10) * plane + i]);
    for (float v : s.x0.dx.data) REQUIRE(v == 0.0f);
}

TEST_CASE("back-to-back windows with stride equal to window split cleanly") {
    SynthConfig cfg;
    cfg.grid = GridSpec{14, 8, 8, 0.5, 1.0};
    const FieldStack truth = synth_truth(cfg);
    const FieldStack sst = derive_sst(truth, 0.0, 2);
    MaskConfig mc;
    const FieldStack masks = make_masks(mc, cfg.grid, 3);
    const FieldStack oi(cfg.grid);

    const Dataset ds = make_dataset(truth, sst, masks, 7, 7, 0.05, oi, SplitSpec{7, 7}, 11);
    REQUIRE(ds.train.size() == 1);
    CHECK(ds.train[0].start_day == 0);
    CHECK(ds.val.empty());
    REQUIRE(ds.test.size() == 1);
    CHECK(ds.test[0].start_day == 7);

    CHECK_THROWS_AS(make_dataset(truth, sst, masks, 15, 7, 0.05, oi, SplitSpec{7, 7}, 11),
                    ConfigError);
    CHECK_THROWS_AS(make_dataset(truth, sst, masks, 7, 0, 0.05, oi, SplitSpec{7, 7}, 11),
                    ConfigError);
    CHECK_THROWS_AS(make_dataset(truth, sst, masks, 7, 7, 0.05, oi, SplitSpec{9, 7}, 11),
                    ConfigError);
}
