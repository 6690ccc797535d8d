#pragma once

#include <vector>

#include "varmap/fields.hpp"

namespace varmap {

enum class SpectralAxis { X, T };

/// One-sided Hann periodogram along one axis, averaged over the others.
/// k is in cycles per degree (axis X) or cycles per day (axis T); power is
/// normalized so the bin sum equals the windowed variance of the signal.
struct PsdResult {
    std::vector<double> k;
    std::vector<double> power;
};

PsdResult psd_1d(const FieldStack& stack, SpectralAxis axis);

/// Per-frame normalized RMSE score. Frames whose truth RMS is zero are
/// excluded (recorded as NaN in the series) with a warning on stderr.
struct MuSigma {
    double mu = 0.0;    // 1 - mean nrmse over included frames
    double sigma = 0.0; // population std of nrmse over included frames
    std::vector<double> series;
    int excluded = 0;
};

MuSigma mu_sigma(const FieldStack& xhat, const FieldStack& truth);

/// Smallest resolved scale from the noise-to-signal spectrum:
/// lambda = 1/k* where k* is the largest wavenumber below which
/// NSR = PSD(error)/PSD(truth) stays <= 0.5. The crossing is located by
/// linear interpolation of NSR against log k. If the lowest nonzero bin
/// already exceeds 0.5 the field is flagged unresolved; truth bins with
/// zero power are skipped and flagged degenerate.
struct ResolvedScale {
    double lambda = 0.0; // degrees (axis X) or days (axis T)
    bool unresolved = false;
    bool degenerate = false;
    std::vector<double> k;   // nonzero bins, for diagnostics
    std::vector<double> nsr; // NSR per nonzero bin
};

ResolvedScale resolved_scale(const FieldStack& xhat, const FieldStack& truth, SpectralAxis axis);

/// The full evaluation bundle.
struct ScoreReport {
    double mu = 0.0;
    double sigma = 0.0;
    double lambda_x = 0.0; // degrees
    double lambda_t = 0.0; // days
    bool unresolved_x = false;
    bool unresolved_t = false;
    std::vector<double> nrmse_series;
};

ScoreReport score_report(const FieldStack& xhat, const FieldStack& truth);

} // namespace varmap
