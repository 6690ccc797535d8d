#pragma once

#include <cstdint>
#include <vector>

#include "varmap/fields.hpp"
#include "varmap/gradcore.hpp"
#include "varmap/varcost.hpp"

namespace varmap {

enum class SolverMode { GD, LSTM };
enum class GradNorm { None, PerFieldRms };

struct SolverConfig {
    SolverMode mode = SolverMode::LSTM;
    int n_iters = 10;                                  // unroll depth K
    double alpha = 0.1;                                // GD step size
    int hidden_channels = 16;                          // C_h
    GradNorm grad_normalization = GradNorm::PerFieldRms;

    void validate() const;
};

/// Seeded LSTM + linear-map parameters: "solver.lstm.w" [4C,2+C,3,3],
/// "solver.lstm.b" [4C] (forget gate biased to 1), and the zero-initialized
/// update map "solver.l.w" [2,C,1,1], "solver.l.b" [2].
ParamStore solver_init(const SolverConfig& cfg, std::uint64_t seed);

struct LstmVars {
    Var h;
    Var c;
};

/// One convolutional LSTM cell on the graph; g_in is [T,2,H,W], h and c are
/// [T,C,H,W]. The emitted update g_out is h'.
struct LstmStepNodes {
    Var g_out;
    LstmVars state;
};
LstmStepNodes lstm_step_node(Graph& g, Var g_in, const LstmVars& hc, const ParamBind& params,
                             int hidden_channels);

/// v / sqrt(mean(v^2) + 1e-12), differentiable.
Var normalize_rms_node(Graph& g, Var v);

/// K unrolled iterations of {cost gradient -> update} on an existing graph;
/// differentiable end to end. The trace holds the cost before every update
/// plus (when want_final_cost) the final cost: K+1 entries.
struct UnrolledSolve {
    StateVars x;
    std::vector<Var> u_trace;
};
UnrolledSolve solve_unrolled(Graph& g, const StateVars& x0, const BoundObs& obs, const ParamBind& params,
                             const CostConfig& cost_cfg, const SolverConfig& solver_cfg,
                             const GridSpec& grid, bool want_final_cost = true);

struct SolveResult {
    StateSeq xhat;
    std::vector<double> u_trace;
};
SolveResult solve(const StateSeq& x0, const ObsSet& obs, const ParamStore& P, const CostConfig& cost_cfg,
                  const SolverConfig& solver_cfg);

// Container-level single steps (tests, diagnostics).
StateSeq gd_step(const StateSeq& x, const StateSeq& g, double alpha);

struct LstmStepResult {
    Tensor g_out;
    Tensor h;
    Tensor c;
};
LstmStepResult lstm_step(const Tensor& g_in, const Tensor& h, const Tensor& c, const ParamStore& P);

} // namespace varmap
