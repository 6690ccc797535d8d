#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "varmap/baselines.hpp"
#include "varmap/osse.hpp"
#include "varmap/solver.hpp"
#include "varmap/varcost.hpp"

namespace varmap {

struct LossWeights {
    double w_x = 1.0;
    double w_grad = 10.0;
    double w_phi = 0.1;

    void validate() const; // all >= 0, at least one positive
};

/// From `epoch` onward the solver unrolls `iters` steps; stages must be
/// sorted with non-decreasing depth and start at epoch 0.
struct UnrollStage {
    int epoch = 0;
    int iters = 5;
};

enum class ModelKind { VarNet, Direct };

struct TrainConfig {
    LossWeights weights;
    double lr = 1e-3;
    double lr_decay = 0.5;
    int lr_period = 25;
    std::vector<UnrollStage> unroll{{0, 5}, {4, 10}, {8, 15}};
    int batch = 2;
    int epochs = 12;
    std::uint64_t seed = 1;

    void validate() const;
    double lr_at(int epoch) const;
    int unroll_at(int epoch) const;
};

/// Training objective on the graph:
///   w_x.|truth - comp(x)|^2 + w_grad.(|d/dx diff|^2 + |d/dy diff|^2)
///   + w_phi.(|t - Phi(t)|^2 + |x - Phi(x)|^2), t = (truth, 0).
/// Phi terms are skipped when w_phi == 0 (the direct model carries no prior).
Var loss_node(Graph& g, const ParamBind& params, const PhiConfig& phi, const StateVars& xhat,
              Var truth, const LossWeights& w, double inv_dx);

double loss_total(const StateSeq& xhat, const FieldStack& x_true, const ParamStore& P,
                  const PhiConfig& phi, const LossWeights& w);

/// Bias-corrected Adam. Moment buffers are keyed by slice name and created
/// on first use; slices without a gradient entry are left untouched.
struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    std::int64_t step = 0;
};

void adam_step(ParamStore& P, const std::map<std::string, Tensor>& grads, AdamState& st, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// x_bar from the gap-free OI modality (id 2) when present, otherwise zeros
/// with a warning; the anomaly starts at zero.
StateSeq init_state(const ObsSet& obs, const GridSpec& grid);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    int unroll = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mu = 0.0;
};

struct TrainResult {
    ParamStore params; // best-validation checkpoint
    AdamState opt;
    std::vector<EpochStats> history;
    int best_epoch = -1;
    bool diverged = false;
};

/// One inference pass of either model on a sample (no gradients).
StateSeq model_predict(const TrainSample& s, ModelKind kind, const CostConfig& cc,
                       const SolverConfig& sc, int direct_base, const ParamStore& P);

/// Deterministic end-to-end loop: seeded shuffling, batch tapes evaluated
/// independently and reduced in sample order, one Adam step per batch.
/// Non-finite losses abort the run and the last good checkpoint is kept.
/// With an empty validation split the train loss selects the checkpoint.
TrainResult train_loop(const Dataset& ds, ModelKind kind, const TrainConfig& tc,
                       const CostConfig& cc, const SolverConfig& sc, int direct_base,
                       const ParamStore& init);

/// Checkpoints: one JSON header line, then float64 slice payloads in name
/// order, then the Adam moments in the same order when present.
void save_checkpoint(const std::string& path, const ParamStore& P, const AdamState& opt);
struct Checkpoint {
    ParamStore params;
    AdamState opt;
};
Checkpoint load_checkpoint(const std::string& path);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

} // namespace varmap
