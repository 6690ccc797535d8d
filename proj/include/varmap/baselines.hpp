#pragma once

#include <cstdint>

#include "varmap/fields.hpp"
#include "varmap/priornet.hpp"
#include "varmap/varcost.hpp"

namespace varmap {

/// Gauss-Markov mapping settings with a separable Gaussian covariance.
struct OIConfig {
    // Scales matched to the default generator: the truth field measures
    // L_x ~ 0.15 deg and ~7-day memory; noise_var also absorbs the variance
    // of scales the covariance model cannot represent, which keeps the
    // kernel weights tame near dense track crossings.
    double length_x = 0.15;     // spatial scale, degrees
    double length_t = 6.0;      // temporal scale, days
    double noise_var = 0.1;     // observation noise variance (incl. representativeness)
    double signal_var = 1.0;    // prior signal variance
    int max_obs = 2000;         // cap on the dense solve
    int thinning = 1;           // base observation subsampling stride
    int time_halfwindow = 4;    // days of observations used around each output frame

    void validate() const;
};

struct OIResult {
    FieldStack field;
    bool empty_obs = false; // no observations anywhere: prior mean returned
};

/// Per-frame Gauss-Markov estimate from the masked observations within the
/// surrounding time window; per-solve spatial mean removed and restored.
OIResult optimal_interp(const ObsModality& obs, const OIConfig& cfg, const GridSpec& grid);

/// Direct inversion: one U-Net forward pass over stacked inputs
/// (masked y1 values, y1 mask, y2, y3 -> 4*n_t channels), no iterations,
/// no identity skip.
UnetSpec direct_unet_spec(int n_t, int base_channels);
ParamStore direct_init(int n_t, int base_channels, std::uint64_t seed);

/// Stacked [1,4*n_t,H,W] input node from bound modalities 1..3. Each values
/// block is scaled to unit RMS (y1 over observed cells only) so no modality
/// dominates the multiplicative branch of the blocks; the scale is a
/// per-window constant, not a trained parameter.
Var direct_input_node(Graph& g, const BoundObs& obs, int n_t);

FieldStack direct_inversion(const ParamStore& P, const ObsSet& obs, int base_channels);

} // namespace varmap
