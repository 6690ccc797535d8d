#include "varmap/priornet.hpp"

#include <cmath>

#include "varmap/rng.hpp"

namespace varmap {

void PhiConfig::validate() const {
    if (n_t < 1) throw ConfigError("phi: n_t must be >= 1");
    if (base_channels < 1) throw ConfigError("phi: base_channels must be >= 1");
}

namespace {

// One conv block: linear 3x3 branch (with bias) plus an optional bilinear
// branch conv(u) .* conv(u) (no biases).
struct BlockSpec {
    std::string name;
    int c_in = 0;
    int c_out = 0;
};

std::vector<BlockSpec> unet_blocks(const UnetSpec& s) {
    return {
        {s.prefix + ".enc", s.c_in, s.base},
        {s.prefix + ".coarse", s.base, 2 * s.base},
        {s.prefix + ".dec", 3 * s.base, s.base},
    };
}

void init_conv(ParamStore& P, const std::string& name, int co, int ci, int k, Rng& rng, bool zero) {
    Tensor w(Shape::nchw(co, ci, k, k));
    if (!zero) {
        const double scale = 1.0 / std::sqrt(double(ci) * k * k);
        for (double& v : w.data) v = scale * rng.normal();
    }
    w.requires_grad = true;
    P.set(name, std::move(w));
}

void init_bias(ParamStore& P, const std::string& name, int co) {
    Tensor b(Shape::vec(co));
    b.requires_grad = true;
    P.set(name, std::move(b));
}

Var apply_block(Graph& g, const ParamBind& p, const BlockSpec& b, bool use_bilinear, Var x) {
    Var lin = g.bias_add(g.conv2d(x, p.at(b.name + ".a.w")), p.at(b.name + ".a.b"));
    if (!use_bilinear) return lin;
    Var bl = g.hadamard(g.conv2d(x, p.at(b.name + ".b1.w")), g.conv2d(x, p.at(b.name + ".b2.w")));
    return g.add(lin, bl);
}

} // namespace

ParamStore unet_init(const UnetSpec& spec, std::uint64_t seed) {
    if (spec.c_in < 1 || spec.c_out < 1 || spec.base < 1)
        throw ConfigError("unet_init: channel counts must be >= 1");
    ParamStore P;
    std::uint64_t stream = 0;
    for (const BlockSpec& b : unet_blocks(spec)) {
        Rng rng(Rng::substream(seed, 0xf10'0000u + stream++));
        init_conv(P, b.name + ".a.w", b.c_out, b.c_in, 3, rng, false);
        init_bias(P, b.name + ".a.b", b.c_out);
        if (spec.use_bilinear) {
            init_conv(P, b.name + ".b1.w", b.c_out, b.c_in, 3, rng, false);
            init_conv(P, b.name + ".b2.w", b.c_out, b.c_in, 3, rng, false);
        }
    }
    Rng rng(Rng::substream(seed, 0xf10'0000u + stream));
    init_conv(P, spec.prefix + ".proj.w", spec.c_out, spec.base, 1, rng, true);
    init_bias(P, spec.prefix + ".proj.b", spec.c_out);
    return P;
}

std::size_t unet_param_count(const UnetSpec& spec) {
    std::size_t n = 0;
    for (const BlockSpec& b : unet_blocks(spec)) {
        n += std::size_t(b.c_out) * b.c_in * 9 + std::size_t(b.c_out);
        if (spec.use_bilinear) n += 2 * std::size_t(b.c_out) * b.c_in * 9;
    }
    n += std::size_t(spec.c_out) * spec.base + std::size_t(spec.c_out);
    return n;
}

Var unet_apply(Graph& g, const ParamBind& params, const UnetSpec& spec, Var x) {
    const Shape s = g.shape(x);
    if (s.rank != 4 || s.c() != spec.c_in)
        throw ShapeError("unet_apply: expected [1," + std::to_string(spec.c_in) + ",H,W] input");
    if (s.h() % 2 != 0 || s.w() % 2 != 0)
        throw ShapeError("unet_apply: raster extents must be even for the pooling level");
    const auto blocks = unet_blocks(spec);
    Var e = apply_block(g, params, blocks[0], spec.use_bilinear, x);
    Var c = apply_block(g, params, blocks[1], spec.use_bilinear, g.avgpool2(e));
    Var u = g.up_bilinear2(c);
    Var d = apply_block(g, params, blocks[2], spec.use_bilinear, g.concat_channels(e, u));
    return g.bias_add(g.conv2d(d, params.at(spec.prefix + ".proj.w")), params.at(spec.prefix + ".proj.b"));
}

UnetSpec phi_unet_spec(const PhiConfig& cfg) {
    return UnetSpec{"phi", cfg.io_channels(), cfg.io_channels(), cfg.base_channels, cfg.use_bilinear};
}

ParamStore phi_init(const PhiConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return unet_init(phi_unet_spec(cfg), seed);
}

namespace {
Var state_as_channels(Graph& g, const StateVars& s) {
    const Shape sh = g.shape(s.xbar);
    const Shape folded = Shape::nchw(1, sh.n(), sh.h(), sh.w());
    return g.concat_channels(g.reshape(s.xbar, folded), g.reshape(s.dx, folded));
}
} // namespace

StateVars phi_apply_node(Graph& g, const ParamBind& params, const PhiConfig& cfg, const StateVars& s) {
    const Shape sh = g.shape(s.xbar);
    if (sh.n() != cfg.n_t)
        throw ShapeError("phi_apply: state has " + std::to_string(sh.n()) + " frames, config says " +
                         std::to_string(cfg.n_t));
    Var in = state_as_channels(g, s);
    Var out = g.add(in, unet_apply(g, params, phi_unet_spec(cfg), in));
    const Shape comp = Shape::nchw(cfg.n_t, 1, sh.h(), sh.w());
    return StateVars{g.reshape(g.slice_channels(out, 0, cfg.n_t), comp),
                     g.reshape(g.slice_channels(out, cfg.n_t, cfg.n_t), comp)};
}

Var phi_residual_node(Graph& g, const ParamBind& params, const PhiConfig& cfg, const StateVars& s) {
    StateVars p = phi_apply_node(g, params, cfg, s);
    Var rx = g.sub(s.xbar, p.xbar);
    Var rd = g.sub(s.dx, p.dx);
    Var ones_x = g.constant(g.shape(rx), 1.0);
    Var ones_d = g.constant(g.shape(rd), 1.0);
    return g.add(g.masked_sq_norm(rx, ones_x), g.masked_sq_norm(rd, ones_d));
}

StateSeq phi_apply(const ParamStore& P, const PhiConfig& cfg, const StateSeq& s) {
    Graph g;
    ParamBind bind = bind_params(g, P, false);
    StateVars out = phi_apply_node(g, bind, cfg, bind_state(g, s, false));
    return StateSeq{stack_from_tchw(g.tensor(out.xbar), s.xbar.grid),
                    stack_from_tchw(g.tensor(out.dx), s.xbar.grid)};
}

double phi_residual(const ParamStore& P, const PhiConfig& cfg, const StateSeq& s) {
    Graph g;
    ParamBind bind = bind_params(g, P, false);
    return g.scalar_value(phi_residual_node(g, bind, cfg, bind_state(g, s, false)));
}

ParamCounts count_params(const ParamStore& P) {
    ParamCounts c;
    c.per_slice = P.per_slice_counts();
    c.total = P.total_params();
    return c;
}

} // namespace varmap
