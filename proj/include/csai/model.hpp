#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csai/brits.hpp"
#include "csai/tsdata.hpp"

namespace csai {

struct ModelConfig {
    int64_t d_model = 16;
    int n_heads = 2;
    int64_t d_hidden = 108;
    bool hidden_init = true;         // false reduces the model to plain bidirectional BRITS
    bool literal_attention = false;  // exp(-a*(delta-tau)) instead of the smooth-magnitude form
    bool concat_recurrent_input = false;
    double attention_eps = 1e-8;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct ModelOutput {
    Tensor imputations;  // [N,T,D], merged x_c
    Tensor completed;    // [N,T,D], observed cells pass through
    Tensor final_hidden_fwd, final_hidden_bwd;  // [N,H]
    std::vector<double> classification;         // sigmoid probabilities, [N]
    double loss_reconstruction = 0.0;
    double loss_consistency = 0.0;
    double loss_classification = 0.0;
    // per-direction estimate streams in forward time order, for the loss
    // and its test oracles
    Tensor fwd_history, fwd_feature, fwd_combined;  // [N,T,D]
    Tensor bwd_history, bwd_feature, bwd_combined;  // [N,T,D]
};

/// Registers all learnable weights. T is needed because the collapsing
/// convolution spans the concatenated sequence (kernel = 2T).
void add_csai_params(ParamStore& s, const ModelConfig& config, int64_t n_features, int64_t n_steps,
                     std::mt19937_64& rng);

/// A = exp(-softplus(raw_rate)_d * s(delta - tau_d)) with the smooth
/// magnitude s(u) = sqrt(u^2 + eps); peaked at tau, even, in (0,1]. The
/// literal switch drops the magnitude and uses the signed difference.
Var adjusted_decay_attention(Tape& t, const Tensor& delta, const std::vector<double>& tau,
                             Var raw_rate, double eps, bool literal = false);

struct HiddenInitVars {
    Var input_proj_w, input_proj_b;
    TransformerVars encoder;
    Var conv1_w, conv1_b;
    Var conv2_w, conv2_b;
};
HiddenInitVars bind_hidden_init(const ParamBinding& b);

/// Eqs-style pipeline: project + positionally encode last_obs and A,
/// concatenate along the sequence, encode, then scale with a pointwise and
/// a sequence-collapsing convolution down to [N, d_hidden].
Var conditional_hidden_init(Tape& t, const Tensor& last_obs, Var attention,
                            const HiddenInitVars& p, const ModelConfig& config);

/// Sigmoid of an affine map of the concatenated final hidden states.
Var classify(Tape& t, Var final_fwd, Var final_bwd, Var w, Var b);

struct ForwardResult {
    ModelOutput output;
    Var recon;        // scalar, summed over directions
    Var consistency;  // scalar
    Var bce;          // scalar; invalid when the batch has no labels
    Var logits;       // [N]
};

ForwardResult csai_forward(Tape& t, const ParamBinding& binding, const TimeSeriesBatch& batch,
                           const ModelConfig& config, const MedianGaps& tau);

/// Inference-only convenience: runs the forward pass on a grad-disabled tape.
ModelOutput csai_predict(const TimeSeriesBatch& batch, ParamStore& store,
                         const ModelConfig& config, const MedianGaps& tau);

}  // namespace csai
