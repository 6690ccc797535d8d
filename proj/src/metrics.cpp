#include "varmap/metrics.hpp"

#include <cmath>
#include <complex>
#include <iostream>
#include <limits>
#include <vector>

#include <fftw3.h>

#include "varmap/errors.hpp"

namespace varmap {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Gathers the segments of a stack along one axis: axis X yields T*H rows of
// length W; axis T yields H*W pixel time series of length T.
struct SegmentView {
    const float* base;
    std::size_t count, length, seg_stride, elem_stride;

    double at(std::size_t seg, std::size_t i) const {
        return double(base[seg * seg_stride + i * elem_stride]);
    }
};

SegmentView segments_of(const FieldStack& s, SpectralAxis axis) {
    const std::size_t plane = s.grid.frame_size();
    if (axis == SpectralAxis::X)
        return SegmentView{s.data.data(), std::size_t(s.grid.n_t) * s.grid.n_y,
                           std::size_t(s.grid.n_x), std::size_t(s.grid.n_x), 1};
    return SegmentView{s.data.data(), plane, std::size_t(s.grid.n_t), 1, plane};
}

} // namespace

PsdResult psd_1d(const FieldStack& stack, SpectralAxis axis) {
    stack.grid.validate();
    const SegmentView seg = segments_of(stack, axis);
    const std::size_t n = seg.length;
    if (n < 2) throw ShapeError("psd_1d: axis must have at least 2 samples");
    const double d = (axis == SpectralAxis::X) ? stack.grid.dx : stack.grid.dt;

    std::vector<double> window(n);
    double wss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        window[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * double(i) / double(n)));
        wss += window[i] * window[i];
    }

    const std::size_t n_half = n / 2;
    PsdResult out;
    out.k.resize(n_half + 1);
    out.power.assign(n_half + 1, 0.0);
    for (std::size_t m = 0; m <= n_half; ++m) out.k[m] = double(m) / (double(n) * d);

    std::vector<std::complex<double>> buf(n);
    fftw_plan plan = fftw_plan_dft_1d(int(n), reinterpret_cast<fftw_complex*>(buf.data()),
                                      reinterpret_cast<fftw_complex*>(buf.data()),
                                      FFTW_FORWARD, FFTW_ESTIMATE);
    for (std::size_t s = 0; s < seg.count; ++s) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += seg.at(s, i);
        mean /= double(n);
        for (std::size_t i = 0; i < n; ++i) buf[i] = {(seg.at(s, i) - mean) * window[i], 0.0};
        fftw_execute(plan);
        for (std::size_t m = 0; m <= n_half; ++m) {
            double p = std::norm(buf[m]) / wss;
            if (m != 0 && !(n % 2 == 0 && m == n_half)) p *= 2.0; // fold the negative half
            out.power[m] += p;
        }
    }
    fftw_destroy_plan(plan);
    for (double& p : out.power) p /= double(seg.count);
    return out;
}

MuSigma mu_sigma(const FieldStack& xhat, const FieldStack& truth) {
    if (!(xhat.grid == truth.grid)) throw ShapeError("mu_sigma: grids differ");
    const int T = truth.grid.n_t;
    const std::size_t plane = truth.grid.frame_size();

    MuSigma out;
    out.series.assign(std::size_t(T), std::numeric_limits<double>::quiet_NaN());
    std::vector<double> included;
    included.reserve(std::size_t(T));
    for (int t = 0; t < T; ++t) {
        const float* a = xhat.data.data() + std::size_t(t) * plane;
        const float* b = truth.data.data() + std::size_t(t) * plane;
        double se = 0.0, st = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double e = double(a[i]) - double(b[i]);
            se += e * e;
            st += double(b[i]) * double(b[i]);
        }
        if (st == 0.0) {
            std::cerr << "[warn] mu_sigma: frame " << t << " has zero truth RMS, excluded\n";
            ++out.excluded;
            continue;
        }
        const double nrmse = std::sqrt(se / st);
        out.series[std::size_t(t)] = nrmse;
        included.push_back(nrmse);
    }
    if (included.empty()) throw DataError("mu_sigma: every truth frame is zero; score undefined");

    double mean = 0.0;
    for (double v : included) mean += v;
    mean /= double(included.size());
    double var = 0.0;
    for (double v : included) var += (v - mean) * (v - mean);
    var /= double(included.size());
    out.mu = 1.0 - mean;
    out.sigma = std::sqrt(var);
    return out;
}

ResolvedScale resolved_scale(const FieldStack& xhat, const FieldStack& truth, SpectralAxis axis) {
    if (!(xhat.grid == truth.grid)) throw ShapeError("resolved_scale: grids differ");
    FieldStack err(truth.grid);
    for (std::size_t i = 0; i < err.data.size(); ++i)
        err.data[i] = xhat.data[i] - truth.data[i];

    const PsdResult pe = psd_1d(err, axis);
    const PsdResult pt = psd_1d(truth, axis);

    ResolvedScale out;
    double prev_k = 0.0, prev_nsr = 0.0;
    bool have_prev = false, crossed = false;
    for (std::size_t m = 1; m < pt.k.size(); ++m) {
        if (pt.power[m] == 0.0) {
            out.degenerate = true;
            continue;
        }
        const double nsr = pe.power[m] / pt.power[m];
        out.k.push_back(pt.k[m]);
        out.nsr.push_back(nsr);
        if (crossed) continue;
        if (nsr > 0.5) {
            if (!have_prev) {
                out.unresolved = true;
                out.lambda = 0.0;
            } else {
                const double f = (0.5 - prev_nsr) / (nsr - prev_nsr);
                const double log_k = std::log(prev_k) + f * (std::log(pt.k[m]) - std::log(prev_k));
                out.lambda = 1.0 / std::exp(log_k);
            }
            crossed = true;
            continue;
        }
        prev_k = pt.k[m];
        prev_nsr = nsr;
        have_prev = true;
    }
    if (!crossed) {
        if (!have_prev) throw DataError("resolved_scale: truth spectrum has no usable bins");
        out.lambda = 1.0 / prev_k; // clean out to Nyquist
    }
    return out;
}

ScoreReport score_report(const FieldStack& xhat, const FieldStack& truth) {
    const MuSigma ms = mu_sigma(xhat, truth);
    const ResolvedScale rx = resolved_scale(xhat, truth, SpectralAxis::X);
    const ResolvedScale rt = resolved_scale(xhat, truth, SpectralAxis::T);
    ScoreReport rep;
    rep.mu = ms.mu;
    rep.sigma = ms.sigma;
    rep.lambda_x = rx.lambda;
    rep.lambda_t = rt.lambda;
    rep.unresolved_x = rx.unresolved;
    rep.unresolved_t = rt.unresolved;
    rep.nrmse_series = ms.series;
    return rep;
}

} // namespace varmap
