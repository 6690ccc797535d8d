#include "varmap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Textbook serial versions, written as per-output gathers (different loop
// structure than the parallel kernels on purpose).

namespace varmap::kern_ref {

void conv2d_fwd(const double* x, const double* k, double* y,
                int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oy = 0; oy < H; ++oy)
                for (int ox = 0; ox < W; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy + ky - ch, ix = ox + kx - cw;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((std::size_t(n) * Ci + ci) * H + iy) * W + ix] *
                                       k[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx];
                            }
                    y[((std::size_t(n) * Co + co) * H + oy) * W + ox] = acc;
                }
}

void conv2d_dinput(const double* g, const double* k, double* dx,
                   int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Ci; ++ci)
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int co = 0; co < Co; ++co)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int oy = iy - (ky - ch), ox = ix - (kx - cw);
                                if (oy < 0 || oy >= H || ox < 0 || ox >= W) continue;
                                acc += g[((std::size_t(n) * Co + co) * H + oy) * W + ox] *
                                       k[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx];
                            }
                    dx[((std::size_t(n) * Ci + ci) * H + iy) * W + ix] = acc;
                }
}

void conv2d_dweight(const double* x, const double* g, double* dk,
                    int N, int Ci, int H, int W, int Co, int kh, int kw) {
    const int ch = kh / 2, cw = kw / 2;
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n)
                        for (int oy = 0; oy < H; ++oy)
                            for (int ox = 0; ox < W; ++ox) {
                                const int iy = oy + ky - ch, ix = ox + kx - cw;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += g[((std::size_t(n) * Co + co) * H + oy) * W + ox] *
                                       x[((std::size_t(n) * Ci + ci) * H + iy) * W + ix];
                            }
                    dk[((std::size_t(co) * Ci + ci) * kh + ky) * kw + kx] = acc;
                }
}

void avgpool2(const double* x, double* y, int N, int C, int H, int W) {
    const int h = H / 2, w = W / 2;
    for (int p = 0; p < N * C; ++p)
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                double acc = 0.0;
                for (int sy = 0; sy < 2; ++sy)
                    for (int sx = 0; sx < 2; ++sx)
                        acc += x[(std::size_t(p) * H + 2 * oy + sy) * W + 2 * ox + sx];
                y[(std::size_t(p) * h + oy) * w + ox] = acc / 4.0;
            }
}

void avgpool2_adj(const double* g, double* dx, int N, int C, int H, int W) {
    const int h = H / 2, w = W / 2;
    for (int p = 0; p < N * C; ++p)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix)
                dx[(std::size_t(p) * H + iy) * W + ix] =
                    g[(std::size_t(p) * h + iy / 2) * w + ix / 2] / 4.0;
}

namespace {
inline void coeffs(int i, int n_in, int& j0, int& j1, double& w1) {
    double u = 0.5 * (i + 0.5) - 0.5;
    double fl = std::floor(u);
    j0 = std::clamp(int(fl), 0, n_in - 1);
    j1 = std::clamp(int(fl) + 1, 0, n_in - 1);
    w1 = u - fl;
}
} // namespace

void up_bilinear2(const double* x, double* y, int N, int C, int h, int w) {
    const int H = 2 * h, W = 2 * w;
    for (int p = 0; p < N * C; ++p)
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox) {
                int y0, y1, x0, x1;
                double wy, wx;
                coeffs(oy, h, y0, y1, wy);
                coeffs(ox, w, x0, x1, wx);
                const double* xp = x + std::size_t(p) * h * w;
                y[(std::size_t(p) * H + oy) * W + ox] =
                    (1 - wy) * (1 - wx) * xp[std::size_t(y0) * w + x0] +
                    (1 - wy) * wx * xp[std::size_t(y0) * w + x1] +
                    wy * (1 - wx) * xp[std::size_t(y1) * w + x0] +
                    wy * wx * xp[std::size_t(y1) * w + x1];
            }
}

void up_bilinear2_adj(const double* g, double* dx, int N, int C, int h, int w) {
    const int H = 2 * h, W = 2 * w;
    std::memset(dx, 0, std::size_t(N) * C * h * w * sizeof(double));
    for (int p = 0; p < N * C; ++p)
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox) {
                int y0, y1, x0, x1;
                double wy, wx;
                coeffs(oy, h, y0, y1, wy);
                coeffs(ox, w, x0, x1, wx);
                double* dp = dx + std::size_t(p) * h * w;
                const double gv = g[(std::size_t(p) * H + oy) * W + ox];
                dp[std::size_t(y0) * w + x0] += (1 - wy) * (1 - wx) * gv;
                dp[std::size_t(y0) * w + x1] += (1 - wy) * wx * gv;
                dp[std::size_t(y1) * w + x0] += wy * (1 - wx) * gv;
                dp[std::size_t(y1) * w + x1] += wy * wx * gv;
            }
}

void ddx(const double* x, double* y, int N, int C, int H, int W, double inv_d) {
    for (int p = 0; p < N * C; ++p)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double* r = x + (std::size_t(p) * H + iy) * W;
                double v;
                if (ix == 0)
                    v = r[1] - r[0];
                else if (ix == W - 1)
                    v = r[W - 1] - r[W - 2];
                else
                    v = 0.5 * (r[ix + 1] - r[ix - 1]);
                y[(std::size_t(p) * H + iy) * W + ix] = v * inv_d;
            }
}

void ddy(const double* x, double* y, int N, int C, int H, int W, double inv_d) {
    for (int p = 0; p < N * C; ++p)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double* xp = x + std::size_t(p) * H * W;
                double v;
                if (iy == 0)
                    v = xp[std::size_t(1) * W + ix] - xp[ix];
                else if (iy == H - 1)
                    v = xp[std::size_t(H - 1) * W + ix] - xp[std::size_t(H - 2) * W + ix];
                else
                    v = 0.5 * (xp[std::size_t(iy + 1) * W + ix] - xp[std::size_t(iy - 1) * W + ix]);
                y[(std::size_t(p) * H + iy) * W + ix] = v * inv_d;
            }
}

void ddx_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d) {
    std::memset(dx, 0, std::size_t(N) * C * H * W * sizeof(double));
    for (int p = 0; p < N * C; ++p)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double gv = g[(std::size_t(p) * H + iy) * W + ix] * inv_d;
                double* dr = dx + (std::size_t(p) * H + iy) * W;
                if (ix == 0) {
                    dr[1] += gv;
                    dr[0] -= gv;
                } else if (ix == W - 1) {
                    dr[W - 1] += gv;
                    dr[W - 2] -= gv;
                } else {
                    dr[ix + 1] += 0.5 * gv;
                    dr[ix - 1] -= 0.5 * gv;
                }
            }
}

void ddy_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d) {
    std::memset(dx, 0, std::size_t(N) * C * H * W * sizeof(double));
    for (int p = 0; p < N * C; ++p)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double gv = g[(std::size_t(p) * H + iy) * W + ix] * inv_d;
                double* dp = dx + std::size_t(p) * H * W;
                if (iy == 0) {
                    dp[std::size_t(1) * W + ix] += gv;
                    dp[ix] -= gv;
                } else if (iy == H - 1) {
                    dp[std::size_t(H - 1) * W + ix] += gv;
                    dp[std::size_t(H - 2) * W + ix] -= gv;
                } else {
                    dp[std::size_t(iy + 1) * W + ix] += 0.5 * gv;
                    dp[std::size_t(iy - 1) * W + ix] -= 0.5 * gv;
                }
            }
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double masked_sq_norm(const double* r, const double* mask, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += mask[i] * r[i] * r[i];
    return s;
}

} // namespace varmap::kern_ref
