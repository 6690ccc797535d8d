// Throughput comparison of the OpenMP kernels against the serial reference
// lane, at the shapes the solver actually runs (7-frame windows, 64x64).
//
//   varmap_bench [--threads N] [--reps R]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "varmap/kernels.hpp"
#include "varmap/rng.hpp"

using namespace varmap;

namespace {

using clock_type = std::chrono::steady_clock;

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = clock_type::now();
        fn();
        const auto t1 = clock_type::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

void report(const char* name, double flops, double t_par, double t_ref) {
    std::printf("%-22s parallel %8.3f ms (%7.2f GFLOP/s)   serial %8.3f ms   speedup %5.2fx\n",
                name, 1e3 * t_par, flops / t_par * 1e-9, 1e3 * t_ref, t_ref / t_par);
}

} // namespace

int main(int argc, char** argv) {
    int threads = 0, reps = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
        else if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: varmap_bench [--threads N] [--reps R]\n");
            return 2;
        }
    }
    if (threads > 0) set_threads(threads);

    Rng rng(42);
    // Solver-shaped conv: concat(g, h) -> gates, [7, 2+16, 64, 64] * [64, 18, 3, 3]
    const int N = 7, Ci = 18, H = 64, W = 64, Co = 64, kh = 3, kw = 3;
    const std::size_t xs = std::size_t(N) * Ci * H * W;
    const std::size_t ys = std::size_t(N) * Co * H * W;
    const std::size_t ks = std::size_t(Co) * Ci * kh * kw;
    std::vector<double> x = random_vec(xs, rng), k = random_vec(ks, rng);
    std::vector<double> y(ys), y2(ys), dx(xs), dk(ks);
    const double conv_flops = 2.0 * double(N) * Co * Ci * H * W * kh * kw;

    report("conv2d_fwd", conv_flops,
           time_best_of(reps, [&] { kern::conv2d_fwd(x.data(), k.data(), y.data(), N, Ci, H, W, Co, kh, kw); }),
           time_best_of(reps, [&] { kern_ref::conv2d_fwd(x.data(), k.data(), y2.data(), N, Ci, H, W, Co, kh, kw); }));
    report("conv2d_dinput", conv_flops,
           time_best_of(reps, [&] { kern::conv2d_dinput(y.data(), k.data(), dx.data(), N, Ci, H, W, Co, kh, kw); }),
           time_best_of(reps, [&] { kern_ref::conv2d_dinput(y.data(), k.data(), dx.data(), N, Ci, H, W, Co, kh, kw); }));
    report("conv2d_dweight", conv_flops,
           time_best_of(reps, [&] { kern::conv2d_dweight(x.data(), y.data(), dk.data(), N, Ci, H, W, Co, kh, kw); }),
           time_best_of(reps, [&] { kern_ref::conv2d_dweight(x.data(), y.data(), dk.data(), N, Ci, H, W, Co, kh, kw); }));

    const int pc = 16;
    const std::size_t ps = std::size_t(N) * pc * H * W;
    std::vector<double> px = random_vec(ps, rng), py(ps / 4), pu(ps);
    report("avgpool2", double(ps),
           time_best_of(reps, [&] { kern::avgpool2(px.data(), py.data(), N, pc, H, W); }),
           time_best_of(reps, [&] { kern_ref::avgpool2(px.data(), py.data(), N, pc, H, W); }));
    report("up_bilinear2", 4.0 * double(ps),
           time_best_of(reps, [&] { kern::up_bilinear2(py.data(), pu.data(), N, pc, H / 2, W / 2); }),
           time_best_of(reps, [&] { kern_ref::up_bilinear2(py.data(), pu.data(), N, pc, H / 2, W / 2); }));
    report("ddx", 2.0 * double(ps),
           time_best_of(reps, [&] { kern::ddx(px.data(), pu.data(), N, pc, H, W, 20.0); }),
           time_best_of(reps, [&] { kern_ref::ddx(px.data(), pu.data(), N, pc, H, W, 20.0); }));

    const std::size_t n = 1 << 22;
    std::vector<double> a = random_vec(n, rng), b = random_vec(n, rng);
    volatile double sink = 0.0;
    report("dot (4M)", 2.0 * double(n),
           time_best_of(reps, [&] { sink = kern::dot(a.data(), b.data(), n); }),
           time_best_of(reps, [&] { sink = kern_ref::dot(a.data(), b.data(), n); }));
    report("masked_sq_norm (4M)", 3.0 * double(n),
           time_best_of(reps, [&] { sink = kern::masked_sq_norm(a.data(), b.data(), n); }),
           time_best_of(reps, [&] { sink = kern_ref::masked_sq_norm(a.data(), b.data(), n); }));
    (void)sink;
    return 0;
}
