#include "varmap/varcost.hpp"

#include <cmath>

namespace varmap {

void CostConfig::validate() const {
    bool any = gamma > 0.0;
    for (const ObsTermSpec& t : terms) {
        t.validate();
        any = any || t.weight > 0.0;
    }
    if (gamma < 0.0) throw ConfigError("cost: gamma must be >= 0");
    if (!any) throw ConfigError("cost: need at least one positive term weight or gamma > 0");
    prior.validate();
}

BoundObs bind_obs_set(Graph& g, const ObsSet& obs) {
    BoundObs bound;
    for (const ObsModality& m : obs.modalities) bound.emplace(m.id, bind_obs(g, m));
    return bound;
}

CostNodes build_cost(Graph& g, const StateVars& s, const BoundObs& obs, const ParamBind& params,
                     const CostConfig& cfg, const GridSpec& grid) {
    CostNodes out;
    auto modality = [&](const ObsTermSpec& t) -> const ObsVars& {
        auto it = obs.find(t.modality);
        if (it == obs.end())
            throw ConfigError("cost term " + t.term_id() + ": modality " + std::to_string(t.modality) +
                              " not present in the observation set");
        return it->second;
    };

    for (const ObsTermSpec& t : cfg.terms) {
        if (t.weight == 0.0) continue;
        const ObsVars& y = modality(t);
        Var residual;
        switch (t.kind) {
            case ObsTermKind::MaskedIdentity: residual = masked_identity_residual_node(g, y, s); break;
            case ObsTermKind::LargeScale: residual = largescale_residual_node(g, y, s); break;
            case ObsTermKind::FeaturePair:
                residual = feature_pair_residual_node(g, y, s, params.at(t.params + ".k1"),
                                                      params.at(t.params + ".k2"));
                break;
            case ObsTermKind::Advection:
                residual = advection_residual_node(g, y, s, 1.0 / grid.dx, 1.0 / grid.dt, t.c_g);
                break;
        }
        Var norm = g.masked_sq_norm(residual, g.constant(g.shape(residual), 1.0));
        out.parts.emplace_back(t.term_id(), g.affine(norm, t.weight, 0.0));
    }
    if (cfg.gamma > 0.0)
        out.parts.emplace_back("prior", g.affine(phi_residual_node(g, params, cfg.prior, s), cfg.gamma, 0.0));

    if (out.parts.empty()) throw ConfigError("cost: no active terms");
    Var total = out.parts.front().second;
    for (std::size_t i = 1; i < out.parts.size(); ++i) total = g.add(total, out.parts[i].second);
    out.total = total;
    return out;
}

namespace {
struct BuiltCost {
    Graph g;
    StateVars s;
    CostNodes nodes;
};

void build_container(BuiltCost& b, const StateSeq& s, const ObsSet& obs, const ParamStore& P,
                     const CostConfig& cfg, bool state_grad) {
    cfg.validate();
    obs.validate();
    b.s = bind_state(b.g, s, state_grad);
    ParamBind params = bind_params(b.g, P, false);
    b.nodes = build_cost(b.g, b.s, bind_obs_set(b.g, obs), params, cfg, s.xbar.grid);
}
} // namespace

double cost_eval(const StateSeq& s, const ObsSet& obs, const ParamStore& P, const CostConfig& cfg) {
    BuiltCost b;
    build_container(b, s, obs, P, cfg, false);
    const double u = b.g.scalar_value(b.nodes.total);
    if (!std::isfinite(u)) throw DataError("cost_eval: non-finite cost");
    return u;
}

StateSeq cost_grad(const StateSeq& s, const ObsSet& obs, const ParamStore& P, const CostConfig& cfg) {
    BuiltCost b;
    build_container(b, s, obs, P, cfg, true);
    b.g.backward(b.nodes.total);
    return StateSeq{stack_from_tchw(b.g.grad_tensor(b.s.xbar), s.xbar.grid),
                    stack_from_tchw(b.g.grad_tensor(b.s.dx), s.xbar.grid)};
}

std::vector<std::pair<std::string, double>> term_breakdown(const StateSeq& s, const ObsSet& obs,
                                                           const ParamStore& P, const CostConfig& cfg) {
    BuiltCost b;
    build_container(b, s, obs, P, cfg, false);
    std::vector<std::pair<std::string, double>> out;
    out.reserve(b.nodes.parts.size());
    for (const auto& [id, v] : b.nodes.parts) out.emplace_back(id, b.g.scalar_value(v));
    return out;
}

} // namespace varmap
