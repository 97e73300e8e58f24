#pragma once

#include <random>
#include <string>

#include "csai/autodiff.hpp"
#include "csai/params.hpp"
#include "csai/tensor.hpp"

namespace csai {

/// Sinusoidal table: PE[t,2i] = sin(t / 10000^{2i/d_model}), PE[t,2i+1] = cos(same).
/// d_model must be even.
Tensor positional_encoding(int64_t steps, int64_t d_model);

struct AttentionVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct TransformerVars {
    AttentionVars attn;
    Var ln1_gamma, ln1_beta;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Var ln2_gamma, ln2_beta;
};

struct GruVars {
    Var w_update, u_update, b_update;
    Var w_reset, u_reset, b_reset;
    Var w_cand, u_cand, b_cand;
};

/// Scaled dot-product self-attention over x [N,L,d_model]; d_model must be
/// divisible by n_heads.
Var multihead_self_attention(Tape& t, Var x, const AttentionVars& p, int n_heads);

/// LN(FFN(LN(MSA(x)))) with no residual connections; FFN = W2·relu(W1·x).
Var transformer_block(Tape& t, Var x, const TransformerVars& p, int n_heads);

/// One GRU update for a batch: h_prev [N,H], x [N,in] -> [N,H].
Var gru_cell_step(Tape& t, Var h_prev, Var x, const GruVars& p);

// parameter registration (uniform +-1/sqrt(fan_in)) and tape binding

void add_linear_params(ParamStore& s, const std::string& prefix, int64_t in, int64_t out,
                       std::mt19937_64& rng);
void add_attention_params(ParamStore& s, const std::string& prefix, int64_t d_model,
                          std::mt19937_64& rng);
void add_transformer_params(ParamStore& s, const std::string& prefix, int64_t d_model,
                            std::mt19937_64& rng);
void add_gru_params(ParamStore& s, const std::string& prefix, int64_t in, int64_t hidden,
                    std::mt19937_64& rng);
void add_conv1d_params(ParamStore& s, const std::string& prefix, int64_t k, int64_t c_in,
                       int64_t c_out, std::mt19937_64& rng);

AttentionVars bind_attention(const ParamBinding& b, const std::string& prefix);
TransformerVars bind_transformer(const ParamBinding& b, const std::string& prefix);
GruVars bind_gru(const ParamBinding& b, const std::string& prefix);

}  // namespace csai
