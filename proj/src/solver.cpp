#include "varmap/solver.hpp"

#include <cmath>

#include "varmap/rng.hpp"

namespace varmap {

void SolverConfig::validate() const {
    if (n_iters < 0) throw ConfigError("solver: n_iters must be >= 0");
    if (mode == SolverMode::GD && alpha <= 0.0) throw ConfigError("solver: GD step alpha must be > 0");
    if (hidden_channels < 1) throw ConfigError("solver: hidden_channels must be >= 1");
}

ParamStore solver_init(const SolverConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int C = cfg.hidden_channels;
    ParamStore P;

    Rng rng(Rng::substream(seed, 0x501'0000u));
    Tensor w(Shape::nchw(4 * C, 2 + C, 3, 3));
    const double scale = 1.0 / std::sqrt(double(2 + C) * 9.0);
    for (double& v : w.data) v = scale * rng.normal();
    w.requires_grad = true;
    P.set("solver.lstm.w", std::move(w));

    Tensor b(Shape::vec(4 * C));
    for (int i = C; i < 2 * C; ++i) b.data[std::size_t(i)] = 1.0; // open the forget gate at start
    b.requires_grad = true;
    P.set("solver.lstm.b", std::move(b));

    Tensor lw(Shape::nchw(2, C, 1, 1));
    lw.requires_grad = true;
    P.set("solver.l.w", std::move(lw)); // zero: the update map starts as the zero map

    Tensor lb(Shape::vec(2));
    lb.requires_grad = true;
    P.set("solver.l.b", std::move(lb));
    return P;
}

LstmStepNodes lstm_step_node(Graph& g, Var g_in, const LstmVars& hc, const ParamBind& params,
                             int hidden_channels) {
    const int C = hidden_channels;
    const Shape sg = g.shape(g_in);
    const Shape sh = g.shape(hc.h);
    if (sh.c() != C || sg.n() != sh.n() || sg.h() != sh.h() || sg.w() != sh.w())
        throw ShapeError("lstm_step: gradient input and hidden state shapes are inconsistent");
    Var z = g.bias_add(g.conv2d(g.concat_channels(g_in, hc.h), params.at("solver.lstm.w")),
                       params.at("solver.lstm.b"));
    Var gi = g.sigmoid(g.slice_channels(z, 0, C));
    Var gf = g.sigmoid(g.slice_channels(z, C, C));
    Var go = g.sigmoid(g.slice_channels(z, 2 * C, C));
    Var gu = g.tanh(g.slice_channels(z, 3 * C, C));
    Var c2 = g.add(g.hadamard(gf, hc.c), g.hadamard(gi, gu));
    Var h2 = g.hadamard(go, g.tanh(c2));
    return LstmStepNodes{h2, LstmVars{h2, c2}};
}

Var normalize_rms_node(Graph& g, Var v) {
    const double n = double(g.shape(v).numel());
    Var mean_sq = g.affine(g.dot(v, v), 1.0 / n, 1e-12);
    return g.scale_by_node(v, g.recip(g.sqrt(mean_sq)));
}

UnrolledSolve solve_unrolled(Graph& g, const StateVars& x0, const BoundObs& obs, const ParamBind& params,
                             const CostConfig& cost_cfg, const SolverConfig& solver_cfg,
                             const GridSpec& grid, bool want_final_cost) {
    solver_cfg.validate();
    const Shape ss = g.shape(x0.xbar);
    UnrolledSolve out;
    out.x = x0;
    LstmVars hc;
    if (solver_cfg.mode == SolverMode::LSTM) {
        const Shape hshape = Shape::nchw(ss.n(), solver_cfg.hidden_channels, ss.h(), ss.w());
        hc = LstmVars{g.constant(hshape, 0.0), g.constant(hshape, 0.0)};
    }

    auto eval_cost = [&](int iteration) -> Var {
        CostNodes cn = build_cost(g, out.x, obs, params, cost_cfg, grid);
        if (!std::isfinite(g.scalar_value(cn.total)))
            throw DivergenceError("solve: non-finite cost at iteration " + std::to_string(iteration),
                                  iteration);
        return cn.total;
    };

    for (int k = 0; k < solver_cfg.n_iters; ++k) {
        Var u = eval_cost(k);
        out.u_trace.push_back(u);
        std::vector<Var> grads = g.backward_graph(u, {out.x.xbar, out.x.dx});
        Var gx = grads[0], gd = grads[1];
        if (solver_cfg.mode == SolverMode::GD) {
            out.x = StateVars{g.sub(out.x.xbar, g.affine(gx, solver_cfg.alpha, 0.0)),
                              g.sub(out.x.dx, g.affine(gd, solver_cfg.alpha, 0.0))};
        } else {
            if (solver_cfg.grad_normalization == GradNorm::PerFieldRms) {
                gx = normalize_rms_node(g, gx);
                gd = normalize_rms_node(g, gd);
            }
            LstmStepNodes step =
                lstm_step_node(g, g.concat_channels(gx, gd), hc, params, solver_cfg.hidden_channels);
            hc = step.state;
            Var upd = g.bias_add(g.conv2d(step.g_out, params.at("solver.l.w")), params.at("solver.l.b"));
            out.x = StateVars{g.sub(out.x.xbar, g.slice_channels(upd, 0, 1)),
                              g.sub(out.x.dx, g.slice_channels(upd, 1, 1))};
        }
    }
    if (want_final_cost) out.u_trace.push_back(eval_cost(solver_cfg.n_iters));
    return out;
}

SolveResult solve(const StateSeq& x0, const ObsSet& obs, const ParamStore& P, const CostConfig& cost_cfg,
                  const SolverConfig& solver_cfg) {
    cost_cfg.validate();
    obs.validate();
    Graph g;
    StateVars s0 = bind_state(g, x0, false);
    ParamBind params = bind_params(g, P, false);
    UnrolledSolve us = solve_unrolled(g, s0, bind_obs_set(g, obs), params, cost_cfg, solver_cfg,
                                      x0.xbar.grid, true);
    SolveResult res;
    res.xhat = StateSeq{stack_from_tchw(g.tensor(us.x.xbar), x0.xbar.grid),
                        stack_from_tchw(g.tensor(us.x.dx), x0.xbar.grid)};
    res.u_trace.reserve(us.u_trace.size());
    for (Var v : us.u_trace) res.u_trace.push_back(g.scalar_value(v));
    return res;
}

StateSeq gd_step(const StateSeq& x, const StateSeq& g, double alpha) {
    x.validate();
    g.validate();
    if (!(x.xbar.grid == g.xbar.grid)) throw ShapeError("gd_step: state and gradient grids differ");
    StateSeq out = x;
    for (std::size_t i = 0; i < out.xbar.data.size(); ++i) {
        out.xbar.data[i] = float(double(x.xbar.data[i]) - alpha * double(g.xbar.data[i]));
        out.dx.data[i] = float(double(x.dx.data[i]) - alpha * double(g.dx.data[i]));
    }
    return out;
}

LstmStepResult lstm_step(const Tensor& g_in, const Tensor& h, const Tensor& c, const ParamStore& P) {
    Graph g;
    ParamBind params = bind_params(g, P, false);
    LstmStepNodes step = lstm_step_node(g, g.leaf(g_in), LstmVars{g.leaf(h), g.leaf(c)}, params, h.shape.c());
    return LstmStepResult{g.tensor(step.g_out), g.tensor(step.state.h), g.tensor(step.state.c)};
}

} // namespace varmap
