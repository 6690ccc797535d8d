#pragma once

#include <cstdint>
#include <vector>

#include "varmap/fields.hpp"

namespace varmap {

/// Synthetic-truth generator settings: an isotropic Gaussian random field
/// with power ~ (k^2 + k0^2)^(-slope/2), advected uniformly in time with a
/// small phase-diffusion decorrelation.
struct SynthConfig {
    GridSpec grid{60, 64, 64, 0.05, 1.0};
    double slope = 4.5;            // spectral slope s
    double lambda0 = 1.0;          // energy-containing wavelength, degrees
    double u0 = 0.5;               // advection, cells per frame (x)
    double v0 = 0.25;              // advection, cells per frame (y)
    double phase_diffusion = 0.33; // phase walk, radians/frame^(1/2) at k = k0 (scaled by k/k0)
    double sigma_obs = 0.05;       // altimeter noise (truth has unit RMS)
    double sigma_sst = 0.1;        // tracer noise
    std::uint64_t seed = 1234;

    void validate() const;
};

/// Sampling-mask generator settings (nadir tracks plus one gapped swath).
struct MaskConfig {
    int n_nadir_tracks = 1;     // straight tracks per day
    int track_width = 1;        // cells
    int swath_width = 4;        // full band width, cells
    int swath_gap = 2;          // central unobserved gap, cells
    double angle_min = 15.0;    // degrees from the x axis
    double angle_max = 75.0;
    double target_coverage = 0.05;

    void validate() const;
};

/// Day ranges of the train/val/test blocks: [0,train_end), [train_end,
/// val_end), [val_end, n_t).
struct SplitSpec {
    int train_end = 35; // window starts on the 5-day stride grid land a val window at day 35
    int val_end = 45;
};

/// One 7-frame training window: truth, observations, and the solver start.
struct TrainSample {
    int start_day = 0;
    FieldStack x_true; // composite truth over the window
    ObsSet obs;        // 1: masked noisy SSH, 2: OI product, 3: SST
    StateSeq x0;
};

struct Dataset {
    std::vector<TrainSample> train;
    std::vector<TrainSample> val;
    std::vector<TrainSample> test;
};

/// Seeded spectral synthesis; the returned stack has unit RMS and zero
/// spatial mean per frame.
FieldStack synth_truth(const SynthConfig& cfg);

/// SST = (-Laplacian)^(1/2) SSH computed spectrally, plus seeded noise;
/// per-frame spatial mean removed.
FieldStack derive_sst(const FieldStack& ssh, double sigma_sst, std::uint64_t seed);

/// Single-day masks on a 1-frame stack.
FieldStack nadir_mask(const MaskConfig& cfg, const GridSpec& grid, int day, std::uint64_t seed);
FieldStack swath_mask(const MaskConfig& cfg, const GridSpec& grid, int day, std::uint64_t seed);

/// Union of nadir and swath masks for every day of the grid.
FieldStack make_masks(const MaskConfig& cfg, const GridSpec& grid, std::uint64_t seed);

/// Cut sliding windows into train/val/test triplets. Windows that straddle a
/// split boundary are dropped; the test block is additionally tiled with
/// windows that cover every test day (for full-block reconstruction).
Dataset make_dataset(const FieldStack& truth, const FieldStack& sst, const FieldStack& masks,
                     int window, int stride, double sigma_obs, const FieldStack& oi_baseline,
                     const SplitSpec& split, std::uint64_t seed);

/// The masked noisy altimeter modality over the full period (id 1).
ObsModality make_obs_ssh(const FieldStack& truth, const FieldStack& masks, double sigma_obs,
                         std::uint64_t seed);

/// Extract frames [start, start+count) of a stack.
FieldStack window_stack(const FieldStack& f, int start, int count);

} // namespace varmap
