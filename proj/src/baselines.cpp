#include "varmap/baselines.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace varmap {

void OIConfig::validate() const {
    if (length_x <= 0.0 || length_t <= 0.0) throw ConfigError("oi: length scales must be > 0");
    if (noise_var < 0.0) throw ConfigError("oi: noise variance must be >= 0");
    if (signal_var <= 0.0) throw ConfigError("oi: signal variance must be > 0");
    if (max_obs < 1) throw ConfigError("oi: max_obs must be >= 1");
    if (thinning < 1) throw ConfigError("oi: thinning must be >= 1");
    if (time_halfwindow < 0) throw ConfigError("oi: time_halfwindow must be >= 0");
}

namespace {

struct ObsPoint {
    int t, y, x;
    double value;
};

} // namespace

OIResult optimal_interp(const ObsModality& obs, const OIConfig& cfg, const GridSpec& grid) {
    cfg.validate();
    obs.validate();
    if (!(obs.values.grid == grid)) throw ShapeError("optimal_interp: observation grid differs");

    const int T = grid.n_t, H = grid.n_y, W = grid.n_x;
    const std::size_t plane = grid.frame_size();

    std::vector<std::vector<ObsPoint>> per_frame;
    per_frame.resize(std::size_t(T));
    std::size_t total = 0;
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::size_t i = std::size_t(t) * plane + std::size_t(y) * W + x;
                if (obs.mask.data[i] > 0.0f) {
                    per_frame[std::size_t(t)].push_back(ObsPoint{t, y, x, double(obs.values.data[i])});
                    ++total;
                }
            }

    OIResult res;
    res.field = FieldStack(grid);
    if (total == 0) {
        res.empty_obs = true;
        return res;
    }

    const double inv2lx2 = 1.0 / (2.0 * cfg.length_x * cfg.length_x);
    const double inv2lt2 = 1.0 / (2.0 * cfg.length_t * cfg.length_t);
    auto cov = [&](double dt_days, double ds2_deg2) {
        return cfg.signal_var * std::exp(-ds2_deg2 * inv2lx2 - dt_days * dt_days * inv2lt2);
    };

    for (int t = 0; t < T; ++t) {
        std::vector<ObsPoint> pts;
        const int lo = std::max(0, t - cfg.time_halfwindow);
        const int hi = std::min(T - 1, t + cfg.time_halfwindow);
        for (int s = lo; s <= hi; ++s)
            pts.insert(pts.end(), per_frame[std::size_t(s)].begin(), per_frame[std::size_t(s)].end());

        float* out = res.field.data.data() + std::size_t(t) * plane;
        if (pts.empty()) continue; // prior mean (zero) where no context exists

        int stride = cfg.thinning;
        while (int((pts.size() + std::size_t(stride) - 1) / std::size_t(stride)) > cfg.max_obs) ++stride;
        std::vector<ObsPoint> sel;
        sel.reserve(pts.size() / std::size_t(stride) + 1);
        for (std::size_t i = 0; i < pts.size(); i += std::size_t(stride)) sel.push_back(pts[i]);
        const int n = int(sel.size());

        double mean = 0.0;
        for (const ObsPoint& p : sel) mean += p.value;
        mean /= double(n);

        Eigen::MatrixXd K(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                const double dxs = double(sel[std::size_t(i)].x - sel[std::size_t(j)].x) * grid.dx;
                const double dys = double(sel[std::size_t(i)].y - sel[std::size_t(j)].y) * grid.dx;
                const double dts = double(sel[std::size_t(i)].t - sel[std::size_t(j)].t) * grid.dt;
                const double v = cov(dts, dxs * dxs + dys * dys);
                K(i, j) = v;
                K(j, i) = v;
            }
            K(i, i) += cfg.noise_var + 1e-8 * cfg.signal_var;
        }
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = sel[std::size_t(i)].value - mean;

        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success)
            throw Error("optimal_interp: covariance matrix not positive definite after jitter");
        Eigen::VectorXd alpha = llt.solve(y);

        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                double acc = mean;
                for (int i = 0; i < n; ++i) {
                    const double dxs = double(xx - sel[std::size_t(i)].x) * grid.dx;
                    const double dys = double(yy - sel[std::size_t(i)].y) * grid.dx;
                    const double dts = double(t - sel[std::size_t(i)].t) * grid.dt;
                    acc += alpha(i) * cov(dts, dxs * dxs + dys * dys);
                }
                out[std::size_t(yy) * W + xx] = float(acc);
            }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Direct inversion

UnetSpec direct_unet_spec(int n_t, int base_channels) {
    return UnetSpec{"direct", 4 * n_t, n_t, base_channels, true};
}

ParamStore direct_init(int n_t, int base_channels, std::uint64_t seed) {
    return unet_init(direct_unet_spec(n_t, base_channels), seed);
}

namespace {

/// RMS over the supported cells (all cells when mask is null). Reads values
/// from the container, so the result is a constant of the window, never a
/// differentiable quantity.
double support_rms(Graph& g, Var values, const Var* mask) {
    const Tensor& v = g.tensor(values);
    double num = 0.0, den = 0.0;
    if (mask) {
        const Tensor& m = g.tensor(*mask);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            num += v.data[i] * v.data[i] * m.data[i];
            den += m.data[i];
        }
    } else {
        for (double x : v.data) num += x * x;
        den = double(v.data.size());
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

Var unit_rms(Graph& g, Var values, const Var* mask) {
    const double r = support_rms(g, values, mask);
    return g.scale(values, 1.0 / std::max(r, 1e-6));
}

} // namespace

Var direct_input_node(Graph& g, const BoundObs& obs, int n_t) {
    auto need = [&](int id) -> const ObsVars& {
        auto it = obs.find(id);
        if (it == obs.end())
            throw ConfigError("direct_inversion: modality " + std::to_string(id) + " missing");
        return it->second;
    };
    const ObsVars &y1 = need(1), &y2 = need(2), &y3 = need(3);
    const Shape s = g.shape(y1.values);
    const Shape folded = Shape::nchw(1, n_t, s.h(), s.w());
    if (s.n() != n_t) throw ShapeError("direct_inversion: window length mismatch");
    Var in = g.concat_channels(g.reshape(unit_rms(g, y1.values, &y1.mask), folded),
                               g.reshape(y1.mask, folded));
    in = g.concat_channels(in, g.reshape(unit_rms(g, y2.values, nullptr), folded));
    return g.concat_channels(in, g.reshape(unit_rms(g, y3.values, nullptr), folded));
}

FieldStack direct_inversion(const ParamStore& P, const ObsSet& obs, int base_channels) {
    obs.validate();
    const GridSpec grid = obs.modalities.at(0).values.grid;
    Graph g;
    ParamBind params = bind_params(g, P, false);
    const UnetSpec spec = direct_unet_spec(grid.n_t, base_channels);
    Var out = unet_apply(g, params, spec, direct_input_node(g, bind_obs_set(g, obs), grid.n_t));
    return stack_from_tchw(g.tensor(g.reshape(out, Shape::nchw(grid.n_t, 1, grid.n_y, grid.n_x))), grid);
}

} // namespace varmap
