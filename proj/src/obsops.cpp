#include "varmap/obsops.hpp"

#include <cmath>

#include "varmap/rng.hpp"

namespace varmap {

const char* obs_term_kind_name(ObsTermKind k) {
    switch (k) {
        case ObsTermKind::MaskedIdentity: return "masked_identity";
        case ObsTermKind::LargeScale: return "largescale";
        case ObsTermKind::FeaturePair: return "feature_pair";
        case ObsTermKind::Advection: return "advection";
    }
    return "?";
}

ObsTermKind obs_term_kind_from_name(const std::string& name) {
    if (name == "masked_identity") return ObsTermKind::MaskedIdentity;
    if (name == "largescale") return ObsTermKind::LargeScale;
    if (name == "feature_pair") return ObsTermKind::FeaturePair;
    if (name == "advection") return ObsTermKind::Advection;
    throw ConfigError("unknown observation term kind '" + name + "'");
}

std::string ObsTermSpec::term_id() const {
    return "g" + std::to_string(modality) + std::to_string(index) + "_" + obs_term_kind_name(kind);
}

void ObsTermSpec::validate() const {
    if (weight < 0.0) throw ConfigError("observation term " + term_id() + ": weight must be >= 0");
    if (kind == ObsTermKind::FeaturePair) {
        if (params.empty()) throw ConfigError("feature_pair term needs a 'params' slice prefix");
        if (channels < 1) throw ConfigError("feature_pair term needs channels >= 1");
        if (ksize < 1 || ksize % 2 == 0) throw ConfigError("feature_pair kernel extent must be odd and >= 1");
    }
}

StateVars bind_state(Graph& g, const StateSeq& s, bool requires_grad) {
    s.validate();
    return StateVars{leaf_stack(g, s.xbar, requires_grad), leaf_stack(g, s.dx, requires_grad)};
}

ObsVars bind_obs(Graph& g, const ObsModality& m) {
    return ObsVars{leaf_stack(g, m.values, false), leaf_stack(g, m.mask, false)};
}

Var state_composite(Graph& g, const StateVars& s) { return g.add(s.xbar, s.dx); }

Var masked_identity_residual_node(Graph& g, const ObsVars& y, const StateVars& s) {
    return g.hadamard(y.mask, g.sub(y.values, state_composite(g, s)));
}

Var largescale_residual_node(Graph& g, const ObsVars& y, const StateVars& s) {
    return g.hadamard(y.mask, g.sub(y.values, s.xbar));
}

Var feature_pair_residual_node(Graph& g, const ObsVars& y, const StateVars& s, Var k1, Var k2) {
    return g.sub(g.conv2d(y.values, k1), g.conv2d(state_composite(g, s), k2));
}

std::pair<Var, Var> geostrophic_velocity_node(Graph& g, const StateVars& s, double inv_dx, double c_g) {
    Var eta = state_composite(g, s);
    Var u = g.affine(g.ddy(eta, inv_dx), -c_g, 0.0);
    Var v = g.affine(g.ddx(eta, inv_dx), c_g, 0.0);
    return {u, v};
}

Var temporal_difference_node(Graph& g, Var f, double inv_dt) {
    const Shape s = g.shape(f);
    const int T = s.n();
    if (T < 2) throw ShapeError("temporal_difference_node: at least two frames required");
    // Fold frames into channels so the forward difference becomes channel algebra.
    Var chan = g.reshape(f, Shape::nchw(1, T, s.h(), s.w()));
    Var head = g.slice_channels(chan, 0, T - 1);
    Var tail = g.slice_channels(chan, 1, T - 1);
    Var diff = g.affine(g.sub(tail, head), inv_dt, 0.0);     // [1, T-1, H, W]
    Var last = g.slice_channels(diff, T - 2, 1);             // replicate final difference
    Var full = g.concat_channels(diff, last);                // [1, T, H, W]
    return g.reshape(full, s);
}

Var advection_residual_node(Graph& g, const ObsVars& y, const StateVars& s,
                            double inv_dx, double inv_dt, double c_g) {
    auto [u, v] = geostrophic_velocity_node(g, s, inv_dx, c_g);
    Var dt_y = temporal_difference_node(g, y.values, inv_dt);
    Var transport = g.add(g.hadamard(g.ddx(y.values, inv_dx), u), g.hadamard(g.ddy(y.values, inv_dx), v));
    return g.hadamard(y.mask, g.sub(dt_y, transport));
}

// ---------------------------------------------------------------------------
// Container-level wrappers

FieldStack masked_identity_residual(const ObsModality& y1, const StateSeq& s) {
    if (!(y1.values.grid == s.xbar.grid)) throw ShapeError("masked_identity_residual: grid mismatch");
    Graph g;
    Var r = masked_identity_residual_node(g, bind_obs(g, y1), bind_state(g, s, false));
    return stack_from_tchw(g.tensor(r), y1.values.grid);
}

FieldStack largescale_residual(const ObsModality& y2, const StateSeq& s) {
    if (!(y2.values.grid == s.xbar.grid)) throw ShapeError("largescale_residual: grid mismatch");
    Graph g;
    Var r = largescale_residual_node(g, bind_obs(g, y2), bind_state(g, s, false));
    return stack_from_tchw(g.tensor(r), y2.values.grid);
}

namespace {
std::vector<FieldStack> split_channels(const Graph& g, Var node, const GridSpec& grid) {
    const Shape s = g.shape(node);
    std::vector<FieldStack> out;
    out.reserve(std::size_t(s.c()));
    const std::vector<double>& v = g.value(node);
    const std::size_t plane = std::size_t(s.h()) * s.w();
    for (int c = 0; c < s.c(); ++c) {
        FieldStack f(grid);
        for (int t = 0; t < s.n(); ++t) {
            const double* src = v.data() + (std::size_t(t) * s.c() + c) * plane;
            float* dst = f.data.data() + std::size_t(t) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = float(src[i]);
        }
        out.push_back(std::move(f));
    }
    return out;
}
} // namespace

std::vector<FieldStack> feature_pair_residual(const ObsModality& y3, const StateSeq& s,
                                              const ParamStore& P, const ObsTermSpec& spec) {
    if (!(y3.values.grid == s.xbar.grid)) throw ShapeError("feature_pair_residual: grid mismatch");
    Graph g;
    ParamBind bind = bind_params(g, P, false);
    Var r = feature_pair_residual_node(g, bind_obs(g, y3), bind_state(g, s, false),
                                       bind.at(spec.params + ".k1"), bind.at(spec.params + ".k2"));
    return split_channels(g, r, y3.values.grid);
}

std::pair<FieldStack, FieldStack> geostrophic_velocity(const StateSeq& s, double c_g) {
    s.validate();
    Graph g;
    auto [u, v] = geostrophic_velocity_node(g, bind_state(g, s, false), 1.0 / s.xbar.grid.dx, c_g);
    return {stack_from_tchw(g.tensor(u), s.xbar.grid), stack_from_tchw(g.tensor(v), s.xbar.grid)};
}

FieldStack advection_residual(const ObsModality& y, const StateSeq& s, double c_g) {
    if (!(y.values.grid == s.xbar.grid)) throw ShapeError("advection_residual: grid mismatch");
    if (y.values.grid.n_t < 2) throw ShapeError("advection_residual: at least two frames required");
    Graph g;
    const GridSpec& grid = y.values.grid;
    Var r = advection_residual_node(g, bind_obs(g, y), bind_state(g, s, false),
                                    1.0 / grid.dx, 1.0 / grid.dt, c_g);
    return stack_from_tchw(g.tensor(r), grid);
}

std::vector<FieldStack> feature_maps(const ObsModality& y, const ParamStore& P, const ObsTermSpec& spec) {
    Graph g;
    ParamBind bind = bind_params(g, P, false);
    Var f = g.conv2d(leaf_stack(g, y.values), bind.at(spec.params + ".k1"));
    return split_channels(g, f, y.values.grid);
}

ParamStore feature_pair_init(const ObsTermSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.kind != ObsTermKind::FeaturePair)
        throw ConfigError("feature_pair_init: term " + spec.term_id() + " is not a feature_pair");
    ParamStore P;
    const Shape shape = Shape::nchw(spec.channels, 1, spec.ksize, spec.ksize);
    const double scale = 1.0 / std::sqrt(double(spec.ksize) * spec.ksize);
    int which = 0;
    for (const char* name : {".k1", ".k2"}) {
        Rng rng(Rng::substream(seed, 0x0b5'0000u + std::uint64_t(16 * spec.modality + 4 * spec.index + which)));
        Tensor t(shape);
        for (double& v : t.data) v = scale * rng.normal();
        t.requires_grad = true;
        P.set(spec.params + name, std::move(t));
        ++which;
    }
    return P;
}

} // namespace varmap
