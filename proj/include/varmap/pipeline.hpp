#pragma once

#include "varmap/config.hpp"

namespace varmap {

/// Pipeline commands. Each validates its inputs against the producing
/// command's manifest (when present), writes its outputs into cfg.out_dir,
/// and records a manifest of config hash, seed, and input/output hashes.
/// Errors surface as the module exception types; the CLI maps them to exit
/// codes.

/// truth.fstk: synthetic truth, the derived tracer, and the sampling masks.
void run_generate(const ExperimentConfig& cfg);

/// oi.fstk: the Gauss-Markov baseline over the full period.
void run_baseline_oi(const ExperimentConfig& cfg);

/// model_<tag>.ck + history_<tag>.csv. Raises DivergenceError after saving
/// the last good checkpoint if training blew up.
void run_train(const ExperimentConfig& cfg);

/// recon_<tag>.fstk over the test block, overlapping windows averaged.
void run_reconstruct(const ExperimentConfig& cfg);

/// scores.json + NSR curves + a per-method stdout table on the test block.
void run_evaluate(const ExperimentConfig& cfg);

/// Finite-difference audit of all registered operators; true if all pass.
bool run_gradcheck(const ExperimentConfig& cfg);

/// features.fstk: learned feature maps of the tracer modality.
void run_features(const ExperimentConfig& cfg);

} // namespace varmap
