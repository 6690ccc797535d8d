#pragma once

#include <cstdint>
#include <string>

#include "varmap/bridge.hpp"
#include "varmap/fields.hpp"
#include "varmap/gradcore.hpp"
#include "varmap/obsops.hpp"

namespace varmap {

/// Two-scale U-Net configuration for the prior. Time is folded into
/// channels: in/out channels are 2*n_t (the two state components).
struct PhiConfig {
    int n_t = 7;
    int base_channels = 16;
    bool use_bilinear = true;

    int io_channels() const { return 2 * n_t; }
    void validate() const;
};

/// Layer plan of the shared encoder/pool/coarse/upsample/decoder/projection
/// U-Net; priornet and the direct-inversion baseline differ only in channel
/// counts and the identity skip.
struct UnetSpec {
    std::string prefix;  // slice-name prefix, e.g. "phi"
    int c_in = 14;
    int c_out = 14;
    int base = 16;
    bool use_bilinear = true;
};

/// Seeded parameter slices for a U-Net; the final 1x1 projection (weights
/// and bias) starts at zero.
ParamStore unet_init(const UnetSpec& spec, std::uint64_t seed);

/// Closed-form scalar count of unet_init's slices.
std::size_t unet_param_count(const UnetSpec& spec);

/// Forward pass on the graph; x is [1, c_in, H, W] with even H, W.
Var unet_apply(Graph& g, const ParamBind& params, const UnetSpec& spec, Var x);

UnetSpec phi_unet_spec(const PhiConfig& cfg);

/// Prior parameters under the "phi." prefix.
ParamStore phi_init(const PhiConfig& cfg, std::uint64_t seed);

/// Phi(x) with the global identity skip, on state vars [T,1,H,W] each.
StateVars phi_apply_node(Graph& g, const ParamBind& params, const PhiConfig& cfg, const StateVars& s);

/// ||s - Phi(s)||^2 over both components and all frames.
Var phi_residual_node(Graph& g, const ParamBind& params, const PhiConfig& cfg, const StateVars& s);

// Container-level wrappers.
StateSeq phi_apply(const ParamStore& P, const PhiConfig& cfg, const StateSeq& s);
double phi_residual(const ParamStore& P, const PhiConfig& cfg, const StateSeq& s);

/// Per-slice and total scalar counts of a store.
struct ParamCounts {
    std::vector<std::pair<std::string, std::size_t>> per_slice;
    std::size_t total = 0;
};
ParamCounts count_params(const ParamStore& P);

} // namespace varmap
