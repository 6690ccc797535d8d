#include "varmap/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <iostream>

#include "varmap/obsops.hpp"
#include "varmap/priornet.hpp"
#include "varmap/rng.hpp"
#include "varmap/solver.hpp"
#include "varmap/train.hpp"
#include "varmap/varcost.hpp"

namespace varmap {

namespace {

constexpr double kEps = 1e-5;

Tensor rand_t(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Magnitudes in [0.2, 1.2] with random sign: keeps relu kinks, sqrt domains
// and recip poles a safe distance from the finite-difference step.
Tensor rand_signed(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (double& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.2);
    return t;
}

Tensor rand_pos(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (double& v : t.data) v = rng.uniform(0.3, 1.3);
    return t;
}

Tensor binary_mask(const Shape& s, Rng& rng, double keep = 0.5) {
    Tensor t(s);
    for (double& v : t.data) v = rng.uniform() < keep ? 1.0 : 0.0;
    return t;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Leaves matching a ParamStore's sorted slice order, values re-randomized so
// no gradient path is parked at a zero initialization.
struct NamedLeaves {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
};

NamedLeaves randomized(const ParamStore& P, Rng& rng, double scale) {
    NamedLeaves out;
    for (const auto& [name, t] : P.slices()) {
        out.names.push_back(name);
        out.tensors.push_back(rand_t(t.shape, rng, -scale, scale));
    }
    return out;
}

ParamBind rebind(const NamedLeaves& nl, const std::vector<Var>& leaves,
                 std::size_t offset) {
    ParamBind pb;
    for (std::size_t i = 0; i < nl.names.size(); ++i) pb.vars[nl.names[i]] = leaves[offset + i];
    return pb;
}

struct Checker {
    std::uint64_t seed;
    std::vector<GradCheckEntry> entries;

    void run(const std::string& name, const std::vector<Tensor>& inputs, const Builder& fn,
             double tol = 1e-5) {
        GradCheckDetail d;
        entries.push_back(GradCheckEntry{name, grad_check(fn, inputs, kEps, &d), tol});
        if (!entries.back().ok()) {
            std::cerr << "gradcheck[" << name << "]: worst coordinate input=" << d.input
                      << " flat=" << d.coord << " analytic=" << d.analytic
                      << " central=" << d.central << "\n";
        }
    }
};

void check_primitives(Checker& ck) {
    Rng rng(Rng::substream(ck.seed, 1));
    const Shape s4 = Shape::nchw(2, 2, 4, 4);
    const Tensor a = rand_t(s4, rng), b = rand_t(s4, rng), w = rand_t(s4, rng);

    auto scalarized = [](const std::function<Var(Graph&, Var, Var)>& op) {
        return [op](Graph& g, const std::vector<Var>& v) {
            return g.dot(op(g, v[0], v[1]), v[2]);
        };
    };
    auto unary = [](const std::function<Var(Graph&, Var)>& op) {
        return [op](Graph& g, const std::vector<Var>& v) { return g.dot(op(g, v[0]), v[1]); };
    };

    ck.run("add", {a, b, w}, scalarized([](Graph& g, Var x, Var y) { return g.add(x, y); }));
    ck.run("sub", {a, b, w}, scalarized([](Graph& g, Var x, Var y) { return g.sub(x, y); }));
    ck.run("hadamard", {a, b, w},
           scalarized([](Graph& g, Var x, Var y) { return g.hadamard(x, y); }));
    ck.run("affine", {a, w}, unary([](Graph& g, Var x) { return g.affine(x, 1.7, 0.3); }));
    ck.run("relu", {rand_signed(s4, rng), w}, unary([](Graph& g, Var x) { return g.relu(x); }));
    ck.run("step", {rand_signed(s4, rng), w}, unary([](Graph& g, Var x) { return g.step(x); }));
    ck.run("tanh", {a, w}, unary([](Graph& g, Var x) { return g.tanh(x); }));
    ck.run("sigmoid", {b, w}, unary([](Graph& g, Var x) { return g.sigmoid(x); }));
    ck.run("sqrt", {rand_pos(s4, rng), w}, unary([](Graph& g, Var x) { return g.sqrt(x); }));
    ck.run("recip", {rand_signed(s4, rng), w}, unary([](Graph& g, Var x) { return g.recip(x); }));

    const Tensor cx = rand_t(Shape::nchw(2, 2, 5, 5), rng);
    const Tensor ckn = rand_t(Shape::nchw(3, 2, 3, 3), rng);
    const Tensor cw = rand_t(Shape::nchw(2, 3, 5, 5), rng);
    ck.run("conv2d", {cx, ckn, cw}, scalarized([](Graph& g, Var x, Var k) { return g.conv2d(x, k); }));
    ck.run("conv_dinput", {cw, ckn, cx},
           scalarized([](Graph& g, Var go, Var k) { return g.conv2d_dinput(go, k); }));
    ck.run("conv_dweight", {cx, cw, ckn}, [](Graph& g, const std::vector<Var>& v) {
        return g.dot(g.conv2d_dweight(v[0], v[1], 3, 3), v[2]);
    });

    const Tensor bx = rand_t(Shape::nchw(2, 3, 4, 4), rng);
    const Tensor bb = rand_t(Shape::vec(3), rng);
    ck.run("bias_add", {bx, bb, rand_t(Shape::nchw(2, 3, 4, 4), rng)},
           scalarized([](Graph& g, Var x, Var y) { return g.bias_add(x, y); }));
    ck.run("channel_sum", {bx, bb}, unary([](Graph& g, Var x) { return g.channel_sum(x); }));

    const Tensor small = rand_t(Shape::nchw(2, 2, 2, 2), rng);
    ck.run("avgpool2", {a, small}, unary([](Graph& g, Var x) { return g.avgpool2(x); }));
    ck.run("avgpool2_adj", {small, a},
           unary([](Graph& g, Var x) { return g.avgpool2_adj(x); }));
    const Tensor up_in = rand_t(Shape::nchw(1, 2, 3, 3), rng);
    const Tensor up_out = rand_t(Shape::nchw(1, 2, 6, 6), rng);
    ck.run("up_bilinear2", {up_in, up_out},
           unary([](Graph& g, Var x) { return g.up_bilinear2(x); }));
    ck.run("up_bilinear2_adj", {up_out, up_in},
           unary([](Graph& g, Var x) { return g.up_bilinear2_adj(x); }));

    const Tensor ca = rand_t(Shape::nchw(1, 2, 4, 4), rng);
    const Tensor cb = rand_t(Shape::nchw(1, 3, 4, 4), rng);
    const Tensor cc = rand_t(Shape::nchw(1, 5, 4, 4), rng);
    ck.run("concat_channels", {ca, cb, cc},
           scalarized([](Graph& g, Var x, Var y) { return g.concat_channels(x, y); }));
    ck.run("slice_channels", {cc, rand_t(Shape::nchw(1, 3, 4, 4), rng)},
           unary([](Graph& g, Var x) { return g.slice_channels(x, 1, 3); }));

    ck.run("ddx", {a, w}, unary([](Graph& g, Var x) { return g.ddx(x, 2.5); }));
    ck.run("ddy", {a, w}, unary([](Graph& g, Var x) { return g.ddy(x, 2.5); }));
    ck.run("ddx_adj", {a, w}, unary([](Graph& g, Var x) { return g.ddx_adj(x, 2.5); }));
    ck.run("ddy_adj", {a, w}, unary([](Graph& g, Var x) { return g.ddy_adj(x, 2.5); }));

    // Bounded-magnitude residuals: a coordinate of r near zero would make the
    // true gradient 2·m·r vanish and the relative comparison ill-posed.
    ck.run("masked_sq_norm", {rand_signed(s4, rng), rand_pos(s4, rng)},
           [](Graph& g, const std::vector<Var>& v) { return g.masked_sq_norm(v[0], v[1]); });
    ck.run("dot", {a, b}, [](Graph& g, const std::vector<Var>& v) { return g.dot(v[0], v[1]); });
    ck.run("scale_by_node", {a, rand_t(Shape::scalar(), rng), w},
           [](Graph& g, const std::vector<Var>& v) {
               return g.dot(g.scale_by_node(v[0], v[1]), v[2]);
           });
    ck.run("reshape", {a, rand_t(Shape::nchw(1, 4, 4, 4), rng)},
           [](Graph& g, const std::vector<Var>& v) {
               return g.dot(g.reshape(v[0], Shape::nchw(1, 4, 4, 4)), v[1]);
           });
}

void check_obs_terms(Checker& ck) {
    Rng rng(Rng::substream(ck.seed, 2));
    const int T = 3, H = 8, W = 8;
    const Shape st = Shape::nchw(T, 1, H, W);
    const Tensor xbar = rand_t(st, rng), dx = rand_t(st, rng), yv = rand_t(st, rng);
    const Tensor mask = binary_mask(st, rng);
    const double inv_dx = 1.0 / 0.05, inv_dt = 1.0;

    auto term = [&](const std::function<Var(Graph&, const ObsVars&, const StateVars&)>& res) {
        return [=](Graph& g, const std::vector<Var>& v) {
            ObsVars y{v[2], g.leaf(mask)};
            StateVars s{v[0], v[1]};
            Var r = res(g, y, s);
            return g.masked_sq_norm(r, g.constant(g.shape(r), 1.0));
        };
    };
    ck.run("obs_masked_identity", {xbar, dx, yv},
           term([](Graph& g, const ObsVars& y, const StateVars& s) {
               return masked_identity_residual_node(g, y, s);
           }));
    ck.run("obs_largescale", {xbar, dx, yv},
           term([](Graph& g, const ObsVars& y, const StateVars& s) {
               return largescale_residual_node(g, y, s);
           }));
    ck.run("obs_advection", {xbar, dx, yv},
           term([=](Graph& g, const ObsVars& y, const StateVars& s) {
               return advection_residual_node(g, y, s, inv_dx, inv_dt, 1.0);
           }));

    const Shape ks = Shape::nchw(2, 1, 3, 3);
    ck.run("obs_feature_pair", {xbar, dx, yv, rand_t(ks, rng), rand_t(ks, rng)},
           [=](Graph& g, const std::vector<Var>& v) {
               ObsVars y{v[2], g.leaf(mask)};
               StateVars s{v[0], v[1]};
               Var r = feature_pair_residual_node(g, y, s, v[3], v[4]);
               return g.masked_sq_norm(r, g.constant(g.shape(r), 1.0));
           });
    ck.run("obs_geostrophic_velocity", {xbar, dx, yv},
           [=](Graph& g, const std::vector<Var>& v) {
               StateVars s{v[0], v[1]};
               auto [u, vv] = geostrophic_velocity_node(g, s, inv_dx, 1.0);
               return g.add(g.dot(u, v[2]), g.dot(vv, v[2]));
           });
}

// Shared fixture for prior / cost / solve audits.
// Unit grid spacing keeps every cost term at a comparable magnitude; with a
// fine physical dx the advection term (quadratic in 1/dx) dominates the sum
// by ~5 orders and the smaller terms' finite-difference signal drowns in the
// ulp of the total.
struct CostFixture {
    int T = 2, H = 6, W = 6;
    GridSpec grid{2, 6, 6, 1.0, 1.0};
    CostConfig cc;
    Tensor y1v, y1m, y2v, y3v, ones;
    NamedLeaves params;
    Tensor xbar, dx;

    CostFixture(std::uint64_t seed, bool with_solver, int hidden) {
        Rng rng(Rng::substream(seed, 3));
        cc.gamma = 0.5;
        cc.prior = PhiConfig{T, 2, true};
        cc.terms = {ObsTermSpec{1, 0, ObsTermKind::MaskedIdentity, 2.0, "g1_0", 2, 3, 1.0},
                    ObsTermSpec{2, 0, ObsTermKind::LargeScale, 1.0, "g2_0", 2, 3, 1.0},
                    ObsTermSpec{3, 0, ObsTermKind::FeaturePair, 1.5, "g3_0", 2, 3, 1.0},
                    ObsTermSpec{3, 1, ObsTermKind::Advection, 0.5, "g3_1", 2, 3, 0.8}};
        const Shape st = Shape::nchw(T, 1, H, W);
        y1v = rand_t(st, rng);
        y1m = binary_mask(st, rng);
        y2v = rand_t(st, rng);
        y3v = rand_t(st, rng);
        ones = Tensor(st, 1.0);
        xbar = rand_t(st, rng);
        dx = rand_t(st, rng);

        ParamStore P = phi_init(cc.prior, Rng::substream(seed, 4));
        P.merge(feature_pair_init(cc.terms[2], Rng::substream(seed, 5)));
        if (with_solver) {
            SolverConfig sc;
            sc.hidden_channels = hidden;
            P.merge(solver_init(sc, Rng::substream(seed, 6)));
        }
        params = randomized(P, rng, 0.4);
    }

    BoundObs bind(Graph& g) const {
        BoundObs ob;
        ob[1] = ObsVars{g.leaf(y1v), g.leaf(y1m)};
        ob[2] = ObsVars{g.leaf(y2v), g.leaf(ones)};
        ob[3] = ObsVars{g.leaf(y3v), g.leaf(ones)};
        return ob;
    }

    std::vector<Tensor> inputs() const {
        std::vector<Tensor> v{xbar, dx};
        v.insert(v.end(), params.tensors.begin(), params.tensors.end());
        return v;
    }
};

void check_composites(Checker& ck) {
    // Prior residual |s - Phi(s)|^2 through the U-Net.
    {
        CostFixture fx(ck.seed + 11, false, 0);
        ck.run("prior_phi_residual", fx.inputs(), [fx](Graph& g, const std::vector<Var>& v) {
            ParamBind pb = rebind(fx.params, v, 2);
            return phi_residual_node(g, pb, fx.cc.prior, StateVars{v[0], v[1]});
        });
    }
    // Full cost with all term kinds plus the prior.
    {
        CostFixture fx(ck.seed + 12, false, 0);
        ck.run("cost_total", fx.inputs(), [fx](Graph& g, const std::vector<Var>& v) {
            ParamBind pb = rebind(fx.params, v, 2);
            return build_cost(g, StateVars{v[0], v[1]}, fx.bind(g), pb, fx.cc, fx.grid).total;
        });
    }
    // LSTM cell: scalarize h' and c' together.
    {
        Rng rng(Rng::substream(ck.seed, 7));
        const int T = 1, C = 2, H = 4, W = 4;
        const Shape gs = Shape::nchw(T, 2, H, W), hs = Shape::nchw(T, C, H, W);
        const std::vector<Tensor> in{rand_t(gs, rng),
                                     rand_t(hs, rng),
                                     rand_t(hs, rng),
                                     rand_t(Shape::nchw(4 * C, 2 + C, 3, 3), rng),
                                     rand_t(Shape::vec(4 * C), rng),
                                     rand_t(hs, rng),
                                     rand_t(hs, rng)};
        ck.run("lstm_cell", in, [C](Graph& g, const std::vector<Var>& v) {
            ParamBind pb;
            pb.vars["solver.lstm.w"] = v[3];
            pb.vars["solver.lstm.b"] = v[4];
            LstmStepNodes out = lstm_step_node(g, v[0], LstmVars{v[1], v[2]}, pb, C);
            return g.add(g.dot(out.state.h, v[5]), g.dot(out.state.c, v[6]));
        });
    }
    // K=3 unrolled solve feeding the training loss; differentiated through
    // the emitted inner gradients, so checked at the looser tolerance.
    {
        CostFixture fx(ck.seed + 13, true, 2);
        Rng rng(Rng::substream(ck.seed, 8));
        const Tensor truth = rand_t(Shape::nchw(fx.T, 1, fx.H, fx.W), rng);
        SolverConfig sc;
        sc.mode = SolverMode::LSTM;
        sc.n_iters = 3;
        sc.hidden_channels = 2;
        sc.grad_normalization = GradNorm::PerFieldRms;
        const LossWeights w{1.0, 10.0, 0.1};
        ck.run(
            "unrolled_solve_k3", fx.inputs(),
            [fx, sc, w, truth](Graph& g, const std::vector<Var>& v) {
                ParamBind pb = rebind(fx.params, v, 2);
                UnrolledSolve us = solve_unrolled(g, StateVars{v[0], v[1]}, fx.bind(g), pb, fx.cc,
                                                  sc, fx.grid, false);
                return loss_node(g, pb, fx.cc.prior, us.x, g.leaf(truth), w, 1.0 / fx.grid.dx);
            },
            1e-4);
    }
}

} // namespace

std::vector<GradCheckEntry> gradcheck_all(std::uint64_t seed) {
    Checker ck;
    ck.seed = seed;
    check_primitives(ck);
    check_obs_terms(ck);
    check_composites(ck);
    return ck.entries;
}

} // namespace varmap
