#pragma once

#include <random>
#include <string>
#include <vector>

#include "csai/layers.hpp"
#include "csai/tsdata.hpp"

namespace csai {

enum class Direction { Forward, Backward };

struct BritsCellVars {
    Var w_gamma_h, b_gamma_h;  // delta -> hidden decay, [D,H],[H]
    Var w_x, b_x;              // hidden -> history estimate, [H,D],[D]
    Var w_z, b_z;              // feature regression, [D,D] zero diagonal
    Var w_gamma_f, b_gamma_f;  // delta -> feature decay, [D,D],[D]
    Var w_beta, b_beta;        // combination gate, [D,D],[D]
    GruVars gru;
};

struct BritsStepVars {
    Var hidden;        // h_t [N,H]
    Var history_est;   // x_hat [N,D]
    Var feature_est;   // x_fc [N,D]
    Var combined_est;  // x_c [N,D]
    Var completed;     // C_t [N,D]
};

struct UnrollResult {
    std::vector<BritsStepVars> steps;  // in iteration order of the direction
    Var final_hidden;                  // [N,H]
    Direction direction = Direction::Forward;
};

struct MergeResult {
    Tensor imputations;  // [N,T,D], mean of the two directions, forward order
    Tensor completed;    // observed cells pass through
    Var consistency;     // scalar: mean |x_c fwd - x_c bwd| over all cells
};

void add_brits_cell_params(ParamStore& s, const std::string& prefix, int64_t n_features,
                           int64_t d_hidden, bool concat_recurrent_input, std::mt19937_64& rng);
BritsCellVars bind_brits_cell(const ParamBinding& b, const std::string& prefix);

/// Zeroes the diagonal of every `*.w_z` value and gradient; call after each
/// optimizer step (and once after init).
void project_feature_regression(ParamStore& s);

/// gamma = exp(-max(0, delta * w + b)); output dim follows w's columns.
Var temporal_decay(Tape& t, Var delta_t, Var w, Var b);

/// One cell update; x_t/m_t/delta_t are [N,D], h_prev is [N,H]. The mask
/// must be exactly 0/1. With concat_recurrent_input the recurrent input is
/// [C_t, m_t] instead of C_t (.) m_t.
BritsStepVars brits_cell_step(Tape& t, Var h_prev, Var x_t, Var m_t, Var delta_t,
                              const BritsCellVars& p, bool concat_recurrent_input = false);

/// Unrolls over the batch; Backward runs on the time-reversed batch with
/// deltas recomputed from reversed timestamps. An invalid h_init means
/// zeros.
UnrollResult unroll_direction(Tape& t, const TimeSeriesBatch& batch, const BritsCellVars& p,
                              Var h_init, Direction direction,
                              bool concat_recurrent_input = false);

MergeResult merge_bidirectional(Tape& t, const UnrollResult& fwd, const UnrollResult& bwd,
                                const TimeSeriesBatch& batch);

}  // namespace csai
