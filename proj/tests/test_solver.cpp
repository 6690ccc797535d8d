#include <doctest.h>

#include <cmath>

#include "varmap/rng.hpp"
#include "varmap/solver.hpp"

using namespace varmap;

namespace {

FieldStack random_stack(const GridSpec& g, std::uint64_t seed) {
    FieldStack f(g);
    Rng rng(seed);
    for (float& v : f.data) v = float(rng.uniform(-1.0, 1.0));
    return f;
}

StateSeq random_state(const GridSpec& g, std::uint64_t seed) {
    StateSeq s;
    s.xbar = random_stack(g, seed);
    s.dx = random_stack(g, seed + 1);
    return s;
}

ObsSet full_obs(const GridSpec& g, std::uint64_t seed) {
    ObsModality m;
    m.id = 1;
    m.values = random_stack(g, seed);
    m.mask = FieldStack(g, 1.0f);
    ObsSet o;
    o.modalities.push_back(m);
    return o;
}

// gamma = 0, single full-mask identity term: an exactly quadratic cost
CostConfig quadratic_cost(const GridSpec& g, double lambda) {
    CostConfig c;
    ObsTermSpec t;
    t.modality = 1;
    t.index = 0;
    t.kind = ObsTermKind::MaskedIdentity;
    t.weight = lambda;
    c.terms = {t};
    c.gamma = 0.0;
    c.prior.n_t = g.n_t;
    return c;
}

} // namespace

TEST_CASE("gd_step applies x - alpha * g elementwise") {
    const GridSpec g{1, 4, 4, 1.0, 1.0};
    StateSeq x;
    x.xbar = FieldStack(g, 1.0f);
    x.dx = FieldStack(g, 1.0f);
    StateSeq gr;
    gr.xbar = FieldStack(g, 2.0f);
    gr.dx = FieldStack(g, 2.0f);

    const StateSeq stepped = gd_step(x, gr, 0.1);
    for (float v : stepped.xbar.data) CHECK(v == doctest::Approx(0.8).epsilon(1e-7));

    StateSeq zero_g;
    zero_g.xbar = FieldStack(g, 0.0f);
    zero_g.dx = FieldStack(g, 0.0f);
    const StateSeq unchanged = gd_step(x, zero_g, 0.1);
    for (std::size_t i = 0; i < x.xbar.data.size(); ++i) {
        CHECK(unchanged.xbar.data[i] == x.xbar.data[i]);
        CHECK(unchanged.dx.data[i] == x.dx.data[i]);
    }
}

TEST_CASE("gradient descent on the full-observation quadratic contracts at the closed-form rate") {
    // U(x) = lambda ||y - (xbar + dx)||^2. Both components receive the same
    // update, so the composite residual contracts by (1 - 4 alpha lambda)
    // per step and U by its square; the joint Hessian has L = 4 lambda.
    const GridSpec g{2, 6, 6, 1.0, 1.0};
    const double lambda = 1.0, alpha = 0.1;
    const double rho2 = std::pow(1.0 - 4.0 * alpha * lambda, 2.0);

    SolverConfig sc;
    sc.mode = SolverMode::GD;
    sc.alpha = alpha;
    sc.n_iters = 6;

    const ObsSet obs = full_obs(g, 31);
    const SolveResult r =
        solve(random_state(g, 32), obs, ParamStore{}, quadratic_cost(g, lambda), sc);
    REQUIRE(r.u_trace.size() == std::size_t(sc.n_iters) + 1);

    for (std::size_t k = 0; k + 1 < r.u_trace.size(); ++k) {
        CHECK(r.u_trace[k + 1] <= r.u_trace[k]); // monotone under alpha < 2/L
        const double measured = r.u_trace[k + 1] / r.u_trace[k];
        CHECK(measured == doctest::Approx(rho2).epsilon(0.05));
    }

    // the limit is the observed field: after k steps the residual scale is
    // rho^k of the start, so the final composite sits on y
    const double shrink = std::pow(1.0 - 4.0 * alpha * lambda, sc.n_iters);
    for (int y = 0; y < g.n_y; ++y)
        for (int x = 0; x < g.n_x; ++x) {
            const double want = obs.modalities[0].values.at(0, y, x);
            const double got = double(r.xhat.xbar.at(0, y, x)) + double(r.xhat.dx.at(0, y, x));
            CHECK(std::abs(want - got) < std::abs(shrink) * 4.0 + 1e-5);
        }
}

TEST_CASE("zero iterations return the initial state exactly") {
    const GridSpec g{2, 6, 6, 1.0, 1.0};
    SolverConfig sc;
    sc.mode = SolverMode::GD;
    sc.n_iters = 0;
    const StateSeq x0 = random_state(g, 33);
    const SolveResult r = solve(x0, full_obs(g, 34), ParamStore{}, quadratic_cost(g, 2.0), sc);
    REQUIRE(r.u_trace.size() == 1);
    for (std::size_t i = 0; i < x0.xbar.data.size(); ++i) {
        CHECK(r.xhat.xbar.data[i] == x0.xbar.data[i]);
        CHECK(r.xhat.dx.data[i] == x0.dx.data[i]);
    }
}

TEST_CASE("the zero-weight LSTM cell matches its analytic closed form") {
    const int T = 2, C = 3, H = 4, W = 4;
    ParamStore P;
    Tensor w(Shape::nchw(4 * C, 2 + C, 3, 3));
    Tensor b(Shape::vec(4 * C));
    P.set("solver.lstm.w", w);
    P.set("solver.lstm.b", b);

    Rng rng(35);
    Tensor g_in(Shape::nchw(T, 2, H, W));
    for (double& v : g_in.data) v = rng.uniform(-1.0, 1.0);
    Tensor h0(Shape::nchw(T, C, H, W));
    Tensor c0(Shape::nchw(T, C, H, W));
    for (double& v : c0.data) v = rng.uniform(-1.0, 1.0);

    const LstmStepResult r = lstm_step(g_in, h0, c0, P);
    for (std::size_t i = 0; i < c0.data.size(); ++i) {
        const double cp = 0.5 * c0.data[i]; // f = sigma(0) = 1/2, i*chat = 0
        CHECK(r.c.data[i] == doctest::Approx(cp).epsilon(1e-12));
        CHECK(r.h.data[i] == doctest::Approx(0.5 * std::tanh(cp)).epsilon(1e-12));
        CHECK(r.g_out.data[i] == r.h.data[i]);
    }

    const LstmStepResult z = lstm_step(Tensor(g_in.shape), Tensor(h0.shape), Tensor(c0.shape), P);
    for (double v : z.h.data) CHECK(v == 0.0);
    for (double v : z.c.data) CHECK(v == 0.0);

    Tensor bad_h(Shape::nchw(T, C + 1, H, W));
    CHECK_THROWS_AS(lstm_step(g_in, bad_h, c0, P), ShapeError);
}

TEST_CASE("the freshly initialized LSTM solver is the identity map on the state") {
    // solver_init zeroes the 1x1 update map L, so K iterations change nothing.
    const GridSpec g{2, 6, 6, 1.0, 1.0};
    SolverConfig sc;
    sc.mode = SolverMode::LSTM;
    sc.n_iters = 4;
    sc.hidden_channels = 3;
    const ParamStore P = solver_init(sc, 36);

    const StateSeq x0 = random_state(g, 37);
    const SolveResult r = solve(x0, full_obs(g, 38), P, quadratic_cost(g, 1.0), sc);
    REQUIRE(r.u_trace.size() == 5);
    for (std::size_t i = 0; i < x0.xbar.data.size(); ++i) {
        CHECK(r.xhat.xbar.data[i] == x0.xbar.data[i]);
        CHECK(r.xhat.dx.data[i] == x0.dx.data[i]);
    }
    for (std::size_t k = 1; k < r.u_trace.size(); ++k) CHECK(r.u_trace[k] == r.u_trace[0]);

    // the forget-gate bias of the real init is 1
    const Tensor& bias = P.at("solver.lstm.b");
    REQUIRE(bias.shape.numel() == std::size_t(4 * sc.hidden_channels));
    bool any_one = false;
    for (double v : bias.data) any_one = any_one || v == 1.0;
    CHECK(any_one);
}

TEST_CASE("a perturbed LSTM solver moves the state and keeps the trace finite") {
    const GridSpec g{2, 6, 6, 1.0, 1.0};
    SolverConfig sc;
    sc.mode = SolverMode::LSTM;
    sc.n_iters = 3;
    sc.hidden_channels = 3;
    ParamStore P = solver_init(sc, 39);
    Rng rng(40);
    for (double& v : P.at("solver.l.w").data) v = 0.05 * rng.normal();

    const StateSeq x0 = random_state(g, 41);
    const SolveResult r = solve(x0, full_obs(g, 42), P, quadratic_cost(g, 1.0), sc);
    double moved = 0.0;
    for (std::size_t i = 0; i < x0.xbar.data.size(); ++i)
        moved += std::abs(double(r.xhat.xbar.data[i]) - double(x0.xbar.data[i]));
    CHECK(moved > 0.0);
    for (double u : r.u_trace) CHECK(std::isfinite(u));
}

TEST_CASE("normalize_rms scales to unit rms and passes zero through") {
    Graph g;
    Rng rng(43);
    Tensor v(Shape::nchw(1, 2, 4, 4));
    for (double& x : v.data) x = rng.uniform(-3.0, 3.0);
    Var n = normalize_rms_node(g, g.leaf(v));
    double ms = 0.0;
    for (double x : g.value(n)) ms += x * x;
    ms /= double(v.shape.numel());
    CHECK(std::sqrt(ms) == doctest::Approx(1.0).epsilon(1e-6));

    Var z = normalize_rms_node(g, g.constant(v.shape, 0.0));
    for (double x : g.value(z)) CHECK(x == 0.0);
}

TEST_CASE("an exploding descent raises a divergence error with the iteration index") {
    const GridSpec g{1, 4, 4, 1.0, 1.0};
    SolverConfig sc;
    sc.mode = SolverMode::GD;
    sc.alpha = 1e200; // residual inflates ~4e200x per step; U overflows
    sc.n_iters = 8;
    CHECK_THROWS_AS(solve(random_state(g, 44), full_obs(g, 45), ParamStore{},
                          quadratic_cost(g, 1.0), sc),
                    DivergenceError);
}
