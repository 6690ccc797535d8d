#pragma once

#include <cstddef>

// Dense inner loops shared by the differentiation engine. varmap::kern holds
// the OpenMP-parallel versions used everywhere; varmap::kern_ref holds plain
// serial implementations with independent loop structure, kept as the oracle
// for equivalence tests and for the kernel benchmark.
//
// Parallel loops are arranged so each output element is written by exactly
// one thread, and reductions sum fixed-size blocks in index order, so results
// are bit-identical for any thread count.

namespace varmap::kern {

// conv family: x[N,Ci,H,W], k[Co,Ci,kh,kw], same zero padding, stride 1,
// odd kernel extents.
void conv2d_fwd(const double* x, const double* k, double* y,
                int N, int Ci, int H, int W, int Co, int kh, int kw);
void conv2d_dinput(const double* g, const double* k, double* dx,
                   int N, int Ci, int H, int W, int Co, int kh, int kw);
void conv2d_dweight(const double* x, const double* g, double* dk,
                    int N, int Ci, int H, int W, int Co, int kh, int kw);

// elementwise
void add(const double* a, const double* b, double* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
void hadamard(const double* a, const double* b, double* y, std::size_t n);
void affine(const double* a, double m, double c, double* y, std::size_t n);
void relu(const double* a, double* y, std::size_t n);
void relu_step(const double* a, double* y, std::size_t n);
void tanh_(const double* a, double* y, std::size_t n);
void sigmoid(const double* a, double* y, std::size_t n);
void sqrt_(const double* a, double* y, std::size_t n);
void recip(const double* a, double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);    // y += a*x
void mul_acc(const double* a, const double* b, double* y, std::size_t n); // y += a.*b

// pooling / upsampling on [N,C,H,W]
void avgpool2(const double* x, double* y, int N, int C, int H, int W);
void avgpool2_adj(const double* g, double* dx, int N, int C, int H, int W);
void up_bilinear2(const double* x, double* y, int N, int C, int h, int w);
void up_bilinear2_adj(const double* g, double* dx, int N, int C, int h, int w);

// per-channel bias
void bias_add(const double* x, const double* b, double* y, int N, int C, std::size_t hw);
void channel_sum(const double* g, double* out, int N, int C, std::size_t hw);

// spatial derivatives per plane, central interior / one-sided edges, times inv_d
void ddx(const double* x, double* y, int N, int C, int H, int W, double inv_d);
void ddy(const double* x, double* y, int N, int C, int H, int W, double inv_d);
void ddx_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d);
void ddy_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d);

// reductions (blocked, deterministic)
double dot(const double* a, const double* b, std::size_t n);
double masked_sq_norm(const double* r, const double* mask, std::size_t n);

} // namespace varmap::kern

namespace varmap::kern_ref {

void conv2d_fwd(const double* x, const double* k, double* y,
                int N, int Ci, int H, int W, int Co, int kh, int kw);
void conv2d_dinput(const double* g, const double* k, double* dx,
                   int N, int Ci, int H, int W, int Co, int kh, int kw);
void conv2d_dweight(const double* x, const double* g, double* dk,
                    int N, int Ci, int H, int W, int Co, int kh, int kw);
void avgpool2(const double* x, double* y, int N, int C, int H, int W);
void avgpool2_adj(const double* g, double* dx, int N, int C, int H, int W);
void up_bilinear2(const double* x, double* y, int N, int C, int h, int w);
void up_bilinear2_adj(const double* g, double* dx, int N, int C, int h, int w);
void ddx(const double* x, double* y, int N, int C, int H, int W, double inv_d);
void ddy(const double* x, double* y, int N, int C, int H, int W, double inv_d);
void ddx_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d);
void ddy_adj(const double* g, double* dx, int N, int C, int H, int W, double inv_d);
double dot(const double* a, const double* b, std::size_t n);
double masked_sq_norm(const double* r, const double* mask, std::size_t n);

} // namespace varmap::kern_ref

namespace varmap {
/// Cap OpenMP worker count for all kernels (0 keeps the runtime default).
void set_threads(int n);
} // namespace varmap
