#include "varmap/osse.hpp"

#include <cmath>
#include <complex>
#include <cstring>

#include <fftw3.h>

#include "varmap/rng.hpp"

namespace varmap {

void SynthConfig::validate() const {
    grid.validate();
    if (slope <= 0.0) throw ConfigError("osse: spectral slope must be > 0");
    if (lambda0 < 2.0 * grid.dx)
        throw ConfigError("osse: lambda0 must be at least 2*dx (grid cannot carry shorter waves)");
    if (sigma_obs < 0.0 || sigma_sst < 0.0) throw ConfigError("osse: noise levels must be >= 0");
    if (phase_diffusion < 0.0) throw ConfigError("osse: phase_diffusion must be >= 0");
}

void MaskConfig::validate() const {
    if (n_nadir_tracks < 0) throw ConfigError("masks: n_nadir_tracks must be >= 0");
    if (track_width < 1) throw ConfigError("masks: track_width must be >= 1");
    if (swath_width < 0 || swath_gap < 0) throw ConfigError("masks: swath extents must be >= 0");
    if (swath_gap >= swath_width && swath_width > 0)
        throw ConfigError("masks: swath_gap must be smaller than swath_width");
    if (!(target_coverage > 0.0 && target_coverage <= 1.0))
        throw ConfigError("masks: target_coverage must lie in (0,1]");
    if (angle_min > angle_max) throw ConfigError("masks: angle_min must be <= angle_max");
}

namespace {

using cplx = std::complex<double>;

void fft2(std::vector<cplx>& buf, int H, int W, int sign) {
    fftw_plan plan = fftw_plan_dft_2d(H, W, reinterpret_cast<fftw_complex*>(buf.data()),
                                      reinterpret_cast<fftw_complex*>(buf.data()), sign, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
}

int signed_index(int m, int n) { return m <= n / 2 ? m : m - n; }

/// Angular wavenumber magnitude of mode (my, mx) on an H x W grid of step dx.
double mode_k(int my, int mx, int H, int W, double dx) {
    const double fx = double(signed_index(mx, W)) / (double(W) * dx);
    const double fy = double(signed_index(my, H)) / (double(H) * dx);
    return 2.0 * M_PI * std::sqrt(fx * fx + fy * fy);
}

bool canonical_mode(int my, int mx, int H, int W) {
    const int py = (H - my) % H, px = (W - mx) % W;
    return std::make_pair(my, mx) <= std::make_pair(py, px);
}

void remove_frame_mean(float* frame, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += frame[i];
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) frame[i] = float(frame[i] - mean);
}

} // namespace

FieldStack synth_truth(const SynthConfig& cfg) {
    cfg.validate();
    const int T = cfg.grid.n_t, H = cfg.grid.n_y, W = cfg.grid.n_x;
    const std::size_t plane = std::size_t(H) * W;
    const double k0 = 2.0 * M_PI / cfg.lambda0;

    // Base spectrum on the canonical half; conjugate partners keep the field
    // real. Zero DC (zero mean) and zero Nyquist lines (self-conjugate modes
    // cannot carry a rotating phase).
    std::vector<cplx> base(plane, cplx(0.0, 0.0));
    Rng rng(Rng::substream(cfg.seed, 0x055e'0001u));
    for (int my = 0; my < H; ++my)
        for (int mx = 0; mx < W; ++mx) {
            if (!canonical_mode(my, mx, H, W)) continue;
            const double xi1 = rng.normal(), xi2 = rng.normal();
            if ((my == 0 && mx == 0) || (H % 2 == 0 && my == H / 2) || (W % 2 == 0 && mx == W / 2))
                continue;
            const double k = mode_k(my, mx, H, W, cfg.grid.dx);
            const double amp = std::pow(k * k + k0 * k0, -cfg.slope / 4.0);
            base[std::size_t(my) * W + mx] = amp * cplx(xi1, xi2) * M_SQRT1_2;
        }

    std::vector<double> walk(plane, 0.0);
    Rng jitter(Rng::substream(cfg.seed, 0x055e'0002u));

    FieldStack out(cfg.grid);
    std::vector<cplx> spec(plane);
    for (int t = 0; t < T; ++t) {
        if (t > 0 && cfg.phase_diffusion > 0.0) {
            // Decorrelation rate grows with wavenumber so small features churn
            // while the energy-containing scale persists for ~1/pd^2 frames.
            for (int my = 0; my < H; ++my)
                for (int mx = 0; mx < W; ++mx)
                    if (canonical_mode(my, mx, H, W)) {
                        const double k = mode_k(my, mx, H, W, cfg.grid.dx);
                        walk[std::size_t(my) * W + mx] +=
                            cfg.phase_diffusion * (k / k0) * jitter.normal();
                    }
        }
        std::fill(spec.begin(), spec.end(), cplx(0.0, 0.0));
        for (int my = 0; my < H; ++my)
            for (int mx = 0; mx < W; ++mx) {
                if (!canonical_mode(my, mx, H, W)) continue;
                const std::size_t idx = std::size_t(my) * W + mx;
                if (base[idx] == cplx(0.0, 0.0)) continue;
                const double advect = -2.0 * M_PI * double(t) *
                                      (double(signed_index(mx, W)) * cfg.u0 / double(W) +
                                       double(signed_index(my, H)) * cfg.v0 / double(H));
                const cplx c = base[idx] * std::polar(1.0, advect + walk[idx]);
                spec[idx] = c;
                spec[std::size_t((H - my) % H) * W + (W - mx) % W] = std::conj(c);
            }
        fft2(spec, H, W, FFTW_BACKWARD);
        float* frame = out.data.data() + std::size_t(t) * plane;
        for (std::size_t i = 0; i < plane; ++i) frame[i] = float(spec[i].real() / double(plane));
        remove_frame_mean(frame, plane);
    }

    double sum_sq = 0.0;
    for (float v : out.data) sum_sq += double(v) * v;
    const double rms = std::sqrt(sum_sq / double(out.data.size()));
    if (rms > 0.0)
        for (float& v : out.data) v = float(v / rms);
    return out;
}

FieldStack derive_sst(const FieldStack& ssh, double sigma_sst, std::uint64_t seed) {
    ssh.validate();
    if (sigma_sst < 0.0) throw ConfigError("derive_sst: sigma_sst must be >= 0");
    const int T = ssh.grid.n_t, H = ssh.grid.n_y, W = ssh.grid.n_x;
    const std::size_t plane = std::size_t(H) * W;

    FieldStack out(ssh.grid);
    std::vector<cplx> spec(plane);
    Rng rng(Rng::substream(seed, 0x557'0001u));
    for (int t = 0; t < T; ++t) {
        const float* src = ssh.data.data() + std::size_t(t) * plane;
        for (std::size_t i = 0; i < plane; ++i) spec[i] = cplx(double(src[i]), 0.0);
        fft2(spec, H, W, FFTW_FORWARD);
        for (int my = 0; my < H; ++my)
            for (int mx = 0; mx < W; ++mx)
                spec[std::size_t(my) * W + mx] *= mode_k(my, mx, H, W, ssh.grid.dx);
        fft2(spec, H, W, FFTW_BACKWARD);
        float* dst = out.data.data() + std::size_t(t) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double v = spec[i].real() / double(plane);
            if (sigma_sst > 0.0) v += sigma_sst * rng.normal();
            dst[i] = float(v);
        }
        remove_frame_mean(dst, plane);
    }
    return out;
}

namespace {

GridSpec frame_grid(const GridSpec& grid) { return GridSpec{1, grid.n_y, grid.n_x, grid.dx, grid.dt}; }

void paint_band(FieldStack& mask, double ax, double ay, double theta_rad, double center, double half_width,
                double half_gap) {
    const int H = mask.grid.n_y, W = mask.grid.n_x;
    const double nx = -std::sin(theta_rad), ny = std::cos(theta_rad);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = (double(x) + 0.5 - ax) * nx + (double(y) + 0.5 - ay) * ny - center;
            if (std::abs(d) <= half_width && std::abs(d) > half_gap)
                mask.data[std::size_t(y) * W + x] = 1.0f;
        }
}

} // namespace

FieldStack nadir_mask(const MaskConfig& cfg, const GridSpec& grid, int day, std::uint64_t seed) {
    cfg.validate();
    FieldStack mask(frame_grid(grid));
    for (int i = 0; i < cfg.n_nadir_tracks; ++i) {
        Rng rng(Rng::substream(seed, 0x3ad'0000u + std::uint64_t(day) * 64u + std::uint64_t(i)));
        double theta = rng.uniform(cfg.angle_min, cfg.angle_max);
        if (rng.uniform() < 0.5) theta += 90.0;
        const double ax = rng.uniform(0.25, 0.75) * grid.n_x;
        const double ay = rng.uniform(0.25, 0.75) * grid.n_y;
        paint_band(mask, ax, ay, theta * M_PI / 180.0, 0.0, 0.5 * cfg.track_width, -1.0);
    }
    return mask;
}

FieldStack swath_mask(const MaskConfig& cfg, const GridSpec& grid, int day, std::uint64_t seed) {
    cfg.validate();
    FieldStack mask(frame_grid(grid));
    if (cfg.swath_width <= 0) return mask;
    // Fixed orientation; the band scans across the central half of the
    // domain, advancing each day (wide-swath revisit pattern).
    Rng rng(Rng::substream(seed, 0x53a'ffffu));
    double theta = rng.uniform(cfg.angle_min, cfg.angle_max);
    if (rng.uniform() < 0.5) theta += 90.0;
    const double span = 0.5 * grid.n_x;
    const double step = span / 7.0;
    const double offset = -0.5 * span + std::fmod(double(day) * step, span);
    paint_band(mask, 0.5 * grid.n_x, 0.5 * grid.n_y, theta * M_PI / 180.0, offset, 0.5 * cfg.swath_width,
               0.5 * cfg.swath_gap);
    return mask;
}

FieldStack make_masks(const MaskConfig& cfg, const GridSpec& grid, std::uint64_t seed) {
    FieldStack out(grid);
    const std::size_t plane = grid.frame_size();
    for (int t = 0; t < grid.n_t; ++t) {
        const FieldStack nadir = nadir_mask(cfg, grid, t, seed);
        const FieldStack swath = swath_mask(cfg, grid, t, seed);
        float* dst = out.data.data() + std::size_t(t) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            dst[i] = (nadir.data[i] > 0.0f || swath.data[i] > 0.0f) ? 1.0f : 0.0f;
    }
    return out;
}

ObsModality make_obs_ssh(const FieldStack& truth, const FieldStack& masks, double sigma_obs,
                         std::uint64_t seed) {
    if (!(truth.grid == masks.grid)) throw ShapeError("make_obs_ssh: truth and mask grids differ");
    ObsModality m;
    m.id = 1;
    m.mask = masks;
    m.values = FieldStack(truth.grid);
    Rng rng(Rng::substream(seed, 0x0b5'1001u));
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        const double noise = sigma_obs * rng.normal(); // drawn everywhere: independent of the mask
        m.values.data[i] = masks.data[i] > 0.0f ? float(double(truth.data[i]) + noise) : 0.0f;
    }
    m.canonicalize();
    return m;
}

FieldStack window_stack(const FieldStack& f, int start, int count) {
    if (start < 0 || count < 1 || start + count > f.grid.n_t)
        throw ShapeError("window_stack: frame range [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of bounds");
    GridSpec g = f.grid;
    g.n_t = count;
    FieldStack out(g);
    const std::size_t plane = f.grid.frame_size();
    std::memcpy(out.data.data(), f.data.data() + std::size_t(start) * plane,
                std::size_t(count) * plane * sizeof(float));
    return out;
}

namespace {

TrainSample cut_window(const FieldStack& truth, const FieldStack& sst, const ObsModality& y1_full,
                       const FieldStack& oi, int start, int window) {
    TrainSample s;
    s.start_day = start;
    s.x_true = window_stack(truth, start, window);

    ObsModality y1;
    y1.id = 1;
    y1.values = window_stack(y1_full.values, start, window);
    y1.mask = window_stack(y1_full.mask, start, window);

    ObsModality y2;
    y2.id = 2;
    y2.values = window_stack(oi, start, window);
    y2.mask = FieldStack(y2.values.grid);
    std::fill(y2.mask.data.begin(), y2.mask.data.end(), 1.0f);

    ObsModality y3;
    y3.id = 3;
    y3.values = window_stack(sst, start, window);
    y3.mask = FieldStack(y3.values.grid);
    std::fill(y3.mask.data.begin(), y3.mask.data.end(), 1.0f);

    s.obs.modalities = {y1, y2, y3};
    s.obs.validate();

    s.x0.xbar = y2.values; // gap-free product seeds the large-scale component
    s.x0.dx = FieldStack(y2.values.grid);
    return s;
}

} // namespace

Dataset make_dataset(const FieldStack& truth, const FieldStack& sst, const FieldStack& masks,
                     int window, int stride, double sigma_obs, const FieldStack& oi_baseline,
                     const SplitSpec& split, std::uint64_t seed) {
    truth.validate();
    if (!(truth.grid == sst.grid) || !(truth.grid == masks.grid) || !(truth.grid == oi_baseline.grid))
        throw ShapeError("make_dataset: all input stacks must share one grid");
    if (window < 1 || window > truth.grid.n_t) throw ConfigError("make_dataset: bad window length");
    if (stride < 1) throw ConfigError("make_dataset: stride must be >= 1");
    if (!(0 < split.train_end && split.train_end <= split.val_end && split.val_end <= truth.grid.n_t))
        throw ConfigError("make_dataset: split boundaries out of order");

    const ObsModality y1 = make_obs_ssh(truth, masks, sigma_obs, seed);

    Dataset ds;
    for (int d = 0; d + window <= truth.grid.n_t; d += stride) {
        if (d + window <= split.train_end)
            ds.train.push_back(cut_window(truth, sst, y1, oi_baseline, d, window));
        else if (d >= split.train_end && d + window <= split.val_end)
            ds.val.push_back(cut_window(truth, sst, y1, oi_baseline, d, window));
    }
    // Tile the test block completely so the reconstruction covers every day.
    for (int d = split.val_end; d + window <= truth.grid.n_t; d += window)
        ds.test.push_back(cut_window(truth, sst, y1, oi_baseline, d, window));
    const int last = truth.grid.n_t - window;
    if (last >= split.val_end && (ds.test.empty() || ds.test.back().start_day != last))
        ds.test.push_back(cut_window(truth, sst, y1, oi_baseline, last, window));
    return ds;
}

} // namespace varmap
