#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "varmap/fields.hpp"
#include "varmap/gradcore.hpp"
#include "varmap/obsops.hpp"
#include "varmap/priornet.hpp"

namespace varmap {

/// Full variational-cost description: weighted observation terms plus the
/// prior consistency term gamma*||s - Phi(s)||^2.
struct CostConfig {
    std::vector<ObsTermSpec> terms;
    double gamma = 1.0;
    PhiConfig prior;

    void validate() const;
};

/// Observation modalities bound on a graph, keyed by modality id.
using BoundObs = std::map<int, ObsVars>;

BoundObs bind_obs_set(Graph& g, const ObsSet& obs);

/// The assembled cost: scalar total plus the per-term scalars that sum to it
/// (term ids from ObsTermSpec::term_id, prior under "prior").
struct CostNodes {
    Var total;
    std::vector<std::pair<std::string, Var>> parts;
};

/// Build the cost on an existing graph. Terms with zero weight are skipped;
/// gamma = 0 skips the prior (and never touches phi parameters).
CostNodes build_cost(Graph& g, const StateVars& s, const BoundObs& obs, const ParamBind& params,
                     const CostConfig& cfg, const GridSpec& grid);

double cost_eval(const StateSeq& s, const ObsSet& obs, const ParamStore& P, const CostConfig& cfg);
StateSeq cost_grad(const StateSeq& s, const ObsSet& obs, const ParamStore& P, const CostConfig& cfg);
std::vector<std::pair<std::string, double>> term_breakdown(const StateSeq& s, const ObsSet& obs,
                                                           const ParamStore& P, const CostConfig& cfg);

} // namespace varmap
