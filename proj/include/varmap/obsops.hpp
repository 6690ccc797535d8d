#pragma once

#include <string>
#include <utility>
#include <vector>

#include "varmap/bridge.hpp"
#include "varmap/fields.hpp"
#include "varmap/gradcore.hpp"

namespace varmap {

enum class ObsTermKind { MaskedIdentity, LargeScale, FeaturePair, Advection };

const char* obs_term_kind_name(ObsTermKind k);
ObsTermKind obs_term_kind_from_name(const std::string& name);

/// One weighted observation term of the variational cost.
struct ObsTermSpec {
    int modality = 1;                              // which ObsModality id it reads
    int index = 1;                                 // enumerates terms per modality
    ObsTermKind kind = ObsTermKind::MaskedIdentity;
    double weight = 1.0;                           // term weight, >= 0
    std::string params;                            // ParamStore key prefix (FeaturePair)
    int channels = 8;                              // feature count (FeaturePair)
    int ksize = 3;                                 // conv kernel extent (FeaturePair)
    double c_g = 1.0;                              // velocity scaling (Advection)

    std::string term_id() const;
    void validate() const;
};

/// State components on a graph, frames-as-batch [T,1,H,W].
struct StateVars {
    Var xbar;
    Var dx;
};

/// One modality's values and mask bound on a graph, [T,1,H,W].
struct ObsVars {
    Var values;
    Var mask;
};

StateVars bind_state(Graph& g, const StateSeq& s, bool requires_grad);
ObsVars bind_obs(Graph& g, const ObsModality& m);

Var state_composite(Graph& g, const StateVars& s);

// Residual builders. The returned node is the *masked* residual for the
// masked kinds, matching the container-level contracts below.
Var masked_identity_residual_node(Graph& g, const ObsVars& y, const StateVars& s);
Var largescale_residual_node(Graph& g, const ObsVars& y, const StateVars& s);
Var feature_pair_residual_node(Graph& g, const ObsVars& y, const StateVars& s, Var k1, Var k2);
std::pair<Var, Var> geostrophic_velocity_node(Graph& g, const StateVars& s, double inv_dx, double c_g);
Var advection_residual_node(Graph& g, const ObsVars& y, const StateVars& s,
                            double inv_dx, double inv_dt, double c_g);

/// Forward temporal difference along the batch axis of a [T,1,H,W] node;
/// the last frame replicates the previous difference.
Var temporal_difference_node(Graph& g, Var f, double inv_dt);

// Container-level evaluation (used by tests and diagnostics dumps); each
// wraps the graph builder above on a throwaway graph.
FieldStack masked_identity_residual(const ObsModality& y1, const StateSeq& s);
FieldStack largescale_residual(const ObsModality& y2, const StateSeq& s);
std::vector<FieldStack> feature_pair_residual(const ObsModality& y3, const StateSeq& s,
                                              const ParamStore& P, const ObsTermSpec& spec);
std::pair<FieldStack, FieldStack> geostrophic_velocity(const StateSeq& s, double c_g = 1.0);
FieldStack advection_residual(const ObsModality& y, const StateSeq& s, double c_g = 1.0);

/// Multi-channel feature maps G1(y) of a FeaturePair term, one stack per channel.
std::vector<FieldStack> feature_maps(const ObsModality& y, const ParamStore& P, const ObsTermSpec& spec);

/// Seeded kernels for a FeaturePair term: slices "<params>.k1" and "<params>.k2",
/// each [channels, 1, ksize, ksize].
ParamStore feature_pair_init(const ObsTermSpec& spec, std::uint64_t seed);

} // namespace varmap
