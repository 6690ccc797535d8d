#include "varmap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <omp.h>

namespace varmap {

void set_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}

} // namespace varmap

namespace varmap::kern {

namespace {
constexpr std::size_t kBlock = 8192; // reduction block size, fixed for determinism
}

void conv2d_fwd(const double* x, const double* k, double* y,
                int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
            double* yp = y + (std::size_t(n) * Co + co) * plane;
            std::memset(yp, 0, plane * sizeof(double));
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xp = x + (std::size_t(n) * Ci + ci) * plane;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double c = k[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx];
                        if (c == 0.0) continue;
                        const int dy = ky - ch, dxo = kx - cw;
                        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        const int x0 = std::max(0, -dxo), x1 = std::min(W, W - dxo);
                        for (int oy = y0; oy < y1; ++oy) {
                            double* yr = yp + std::size_t(oy) * W;
                            const double* xr = xp + std::size_t(oy + dy) * W + dxo;
                            for (int ox = x0; ox < x1; ++ox) yr[ox] += c * xr[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_dinput(const double* g, const double* k, double* dx,
                   int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dp = dx + (std::size_t(n) * Ci + ci) * plane;
            std::memset(dp, 0, plane * sizeof(double));
            for (int co = 0; co < Co; ++co) {
                const double* gp = g + (std::size_t(n) * Co + co) * plane;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double c = k[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx];
                        if (c == 0.0) continue;
                        const int dy = ch - ky, dxo = cw - kx; // reversed shift
                        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        const int x0 = std::max(0, -dxo), x1 = std::min(W, W - dxo);
                        for (int iy = y0; iy < y1; ++iy) {
                            double* dr = dp + std::size_t(iy) * W;
                            const double* gr = gp + std::size_t(iy + dy) * W + dxo;
                            for (int ix = x0; ix < x1; ++ix) dr[ix] += c * gr[ix];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_dweight(const double* x, const double* g, double* dk,
                    int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Co; ++co) {
        for (int ci = 0; ci < Ci; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const int dy = ky - ch, dxo = kx - cw;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dxo), x1 = std::min(W, W - dxo);
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const double* gp = g + (std::size_t(n) * Co + co) * plane;
                        const double* xp = x + (std::size_t(n) * Ci + ci) * plane;
                        for (int oy = y0; oy < y1; ++oy) {
                            const double* gr = gp + std::size_t(oy) * W;
                            const double* xr = xp + std::size_t(oy + dy) * W + dxo;
                            double row = 0.0;
                            for (int ox = x0; ox < x1; ++ox) row += gr[ox] * xr[ox];
                            acc += row;
                        }
                    }
                    dk[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
}

#define VARMAP_EW_LOOP(expr)                            \
    _Pragma("omp parallel for schedule(static)")        \
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) { expr; }

void add(const double* a, const double* b, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = a[i] + b[i]) }
void sub(const double* a, const double* b, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = a[i] - b[i]) }
void hadamard(const double* a, const double* b, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = a[i] * b[i]) }
void affine(const double* a, double m, double c, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = m * a[i] + c) }
void relu(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = a[i] > 0.0 ? a[i] : 0.0) }
void relu_step(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = a[i] > 0.0 ? 1.0 : 0.0) }
void tanh_(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = std::tanh(a[i])) }
void sigmoid(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = 1.0 / (1.0 + std::exp(-a[i]))) }
void sqrt_(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = std::sqrt(a[i])) }
void recip(const double* a, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] = 1.0 / a[i]) }
void axpy(double a, const double* x, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] += a * x[i]) }
void mul_acc(const double* a, const double* b, double* y, std::size_t n) { VARMAP_EW_LOOP(y[i] += a[i] * b[i]) }

#undef VARMAP_EW_LOOP

void avgpool2(const double* x, double* y, int N, int C, int H, int W) {
    const int h = H / 2, w = W / 2;
    const std::size_t in_plane = std::size_t(H) * W, out_plane = std::size_t(h) * w;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* xp = x + std::size_t(p) * in_plane;
        double* yp = y + std::size_t(p) * out_plane;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                const double* r0 = xp + std::size_t(2 * oy) * W + 2 * ox;
                yp[std::size_t(oy) * w + ox] = 0.25 * (r0[0] + r0[1] + r0[W] + r0[W + 1]);
            }
    }
}

void avgpool2_adj(const double* g, double* dx, int N, int C, int H, int W) {
    const int h = H / 2, w = W / 2;
    const std::size_t in_plane = std::size_t(H) * W, out_plane = std::size_t(h) * w;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* gp = g + std::size_t(p) * out_plane;
        double* dp = dx + std::size_t(p) * in_plane;
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix)
                dp[std::size_t(iy) * W + ix] = 0.25 * gp[std::size_t(iy / 2) * w + ix / 2];
    }
}

namespace {
// align_corners=false mapping used by both directions
inline void bilin_coeffs(int i, int n_in, int& j0, int& j1, double& w1) {
    double u = 0.5 * (i + 0.5) - 0.5;
    double fl = std::floor(u);
    j0 = int(fl);
    w1 = u - fl;
    j1 = j0 + 1;
    j0 = std::clamp(j0, 0, n_in - 1);
    j1 = std::clamp(j1, 0, n_in - 1);
}
} // namespace

void up_bilinear2(const double* x, double* y, int N, int C, int h, int w) {
    const int H = 2 * h, W = 2 * w;
    const std::size_t in_plane = std::size_t(h) * w, out_plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* xp = x + std::size_t(p) * in_plane;
        double* yp = y + std::size_t(p) * out_plane;
        for (int oy = 0; oy < H; ++oy) {
            int y0, y1;
            double wy;
            bilin_coeffs(oy, h, y0, y1, wy);
            for (int ox = 0; ox < W; ++ox) {
                int x0, x1;
                double wx;
                bilin_coeffs(ox, w, x0, x1, wx);
                yp[std::size_t(oy) * W + ox] =
                    (1 - wy) * ((1 - wx) * xp[std::size_t(y0) * w + x0] + wx * xp[std::size_t(y0) * w + x1]) +
                    wy * ((1 - wx) * xp[std::size_t(y1) * w + x0] + wx * xp[std::size_t(y1) * w + x1]);
            }
        }
    }
}

void up_bilinear2_adj(const double* g, double* dx, int N, int C, int h, int w) {
    const int H = 2 * h, W = 2 * w;
    const std::size_t in_plane = std::size_t(h) * w, out_plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* gp = g + std::size_t(p) * out_plane;
        double* dp = dx + std::size_t(p) * in_plane;
        std::memset(dp, 0, in_plane * sizeof(double));
        for (int oy = 0; oy < H; ++oy) {
            int y0, y1;
            double wy;
            bilin_coeffs(oy, h, y0, y1, wy);
            for (int ox = 0; ox < W; ++ox) {
                int x0, x1;
                double wx;
                bilin_coeffs(ox, w, x0, x1, wx);
                const double gv = gp[std::size_t(oy) * W + ox];
                dp[std::size_t(y0) * w + x0] += (1 - wy) * (1 - wx) * gv;
                dp[std::size_t(y0) * w + x1] += (1 - wy) * wx * gv;
                dp[std::size_t(y1) * w + x0] += wy * (1 - wx) * gv;
                dp[std::size_t(y1) * w + x1] += wy * wx * gv;
            }
        }
    }
}

void bias_add(const double* x, const double* b, double* y, int N, int C, std::size_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double bc = b[c];
            const double* xp = x + (std::size_t(n) * C + c) * hw;
            double* yp = y + (std::size_t(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) yp[i] = xp[i] + bc;
        }
}

void channel_sum(const double* g, double* out, int N, int C, std::size_t hw) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* gp = g + (std::size_t(n) * C + c) * hw;
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += gp[i];
            acc += s;
        }
        out[c] = acc;
    }
}

void ddx(const double* x, double* y, int N, int C, int H, int W, double inv_d) {
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* xp = x + std::size_t(p) * plane;
        double* yp = y + std::size_t(p) * plane;
        for (int iy = 0; iy < H; ++iy) {
            const double* r = xp + std::size_t(iy) * W;
            double* o = yp + std::size_t(iy) * W;
            o[0] = (r[1] - r[0]) * inv_d;
            for (int ix = 1; ix < W - 1; ++ix) o[ix] = 0.5 * (r[ix + 1] - r[ix - 1]) * inv_d;
            o[W - 1] = (r[W - 1] - r[W - 2]) * inv_d;
        }
    }
}

void ddy(const double* x, double* y, int N, int C, int H, int W, double inv_d) {
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* xp = x + std::size_t(p) * plane;
        double* yp = y + std::size_t(p) * plane;
        for (int ix = 0; ix < W; ++ix) {
            yp[ix] = (xp[W + ix] - xp[ix]) * inv_d;
            yp[std::size_t(H - 1) * W + ix] =
                (xp[std::size_t(H - 1) * W + ix] - xp[std::size_t(H - 2) * W + ix]) * inv_d;
        }
        for (int iy = 1; iy < H - 1; ++iy)
            for (int ix = 0; ix < W; ++ix)
                yp[std::size_t(iy) * W + ix] =
                    0.5 * (xp[std::size_t(iy + 1) * W + ix] - xp[std::size_t(iy - 1) * W + ix]) * inv_d;
    }
}

// transposes of the difference stencils, scatter form per plane
void ddx_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d) {
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* gp = g + std::size_t(p) * plane;
        double* dp = dx + std::size_t(p) * plane;
        std::memset(dp, 0, plane * sizeof(double));
        for (int iy = 0; iy < H; ++iy) {
            const double* gr = gp + std::size_t(iy) * W;
            double* dr = dp + std::size_t(iy) * W;
            dr[1] += gr[0] * inv_d;
            dr[0] -= gr[0] * inv_d;
            for (int ix = 1; ix < W - 1; ++ix) {
                dr[ix + 1] += 0.5 * gr[ix] * inv_d;
                dr[ix - 1] -= 0.5 * gr[ix] * inv_d;
            }
            dr[W - 1] += gr[W - 1] * inv_d;
            dr[W - 2] -= gr[W - 1] * inv_d;
        }
    }
}

void ddy_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d) {
    const std::size_t plane = std::size_t(H) * W;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < N * C; ++p) {
        const double* gp = g + std::size_t(p) * plane;
        double* dp = dx + std::size_t(p) * plane;
        std::memset(dp, 0, plane * sizeof(double));
        for (int ix = 0; ix < W; ++ix) {
            dp[W + ix] += gp[ix] * inv_d;
            dp[ix] -= gp[ix] * inv_d;
            dp[std::size_t(H - 1) * W + ix] += gp[std::size_t(H - 1) * W + ix] * inv_d;
            dp[std::size_t(H - 2) * W + ix] -= gp[std::size_t(H - 1) * W + ix] * inv_d;
        }
        for (int iy = 1; iy < H - 1; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                dp[std::size_t(iy + 1) * W + ix] += 0.5 * gp[std::size_t(iy) * W + ix] * inv_d;
                dp[std::size_t(iy - 1) * W + ix] -= 0.5 * gp[std::size_t(iy) * W + ix] * inv_d;
            }
    }
}

double dot(const double* a, const double* b, std::size_t n) {
    const std::size_t nblk = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(nblk, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < std::ptrdiff_t(nblk); ++blk) {
        const std::size_t lo = std::size_t(blk) * kBlock, hi = std::min(n, lo + kBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += a[i] * b[i];
        partial[blk] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p; // fixed order
    return total;
}

double masked_sq_norm(const double* r, const double* mask, std::size_t n) {
    const std::size_t nblk = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(nblk, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < std::ptrdiff_t(nblk); ++blk) {
        const std::size_t lo = std::size_t(blk) * kBlock, hi = std::min(n, lo + kBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += mask[i] * r[i] * r[i];
        partial[blk] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace varmap::kern
