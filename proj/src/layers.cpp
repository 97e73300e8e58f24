#include "csai/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace csai {

Tensor positional_encoding(int64_t steps, int64_t d_model) {
    if (d_model % 2 != 0) throw std::invalid_argument("positional_encoding: d_model must be even");
    Tensor pe = Tensor::zeros({steps, d_model});
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t i = 0; i < d_model / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            pe(t, 2 * i) = std::sin(static_cast<double>(t) * freq);
            pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) * freq);
        }
    return pe;
}

Var multihead_self_attention(Tape& t, Var x, const AttentionVars& p, int n_heads) {
    const Tensor& X = t.value(x);
    if (X.rank() != 3) throw std::invalid_argument("multihead_self_attention: expected [N,L,d_model]");
    const int64_t d_model = X.shape[2];
    if (d_model % n_heads != 0)
        throw std::invalid_argument("multihead_self_attention: d_model not divisible by n_heads");
    const int64_t d_head = d_model / n_heads;

    Var q = t.split_heads(t.linear(x, p.wq, p.bq), n_heads);
    Var k = t.split_heads(t.linear(x, p.wk, p.bk), n_heads);
    Var v = t.split_heads(t.linear(x, p.wv, p.bv), n_heads);

    Var scores = t.scale(t.bmm(q, t.transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(d_head)));
    Var attn = t.softmax_lastdim(scores);
    Var ctx = t.merge_heads(t.bmm(attn, v), n_heads);
    return t.linear(ctx, p.wo, p.bo);
}

Var transformer_block(Tape& t, Var x, const TransformerVars& p, int n_heads) {
    Var h = multihead_self_attention(t, x, p.attn, n_heads);
    h = t.layer_norm(h, p.ln1_gamma, p.ln1_beta);
    Var f = t.linear(t.relu(t.linear(h, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
    return t.layer_norm(f, p.ln2_gamma, p.ln2_beta);
}

Var gru_cell_step(Tape& t, Var h_prev, Var x, const GruVars& p) {
    Var z = t.sigmoid(t.add(t.linear(x, p.w_update, p.b_update), t.linear(h_prev, p.u_update, Var{})));
    Var r = t.sigmoid(t.add(t.linear(x, p.w_reset, p.b_reset), t.linear(h_prev, p.u_reset, Var{})));
    Var n = t.tanh(t.add(t.linear(x, p.w_cand, p.b_cand), t.mul(r, t.linear(h_prev, p.u_cand, Var{}))));
    // (1-z)*n + z*h = n + z*(h - n)
    return t.add(n, t.mul(z, t.sub(h_prev, n)));
}

void add_linear_params(ParamStore& s, const std::string& prefix, int64_t in, int64_t out,
                       std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    s.add(prefix + ".w", Tensor::uniform({in, out}, bound, rng));
    s.add(prefix + ".b", Tensor::uniform({out}, bound, rng));
}

void add_attention_params(ParamStore& s, const std::string& prefix, int64_t d_model,
                          std::mt19937_64& rng) {
    add_linear_params(s, prefix + ".q", d_model, d_model, rng);
    add_linear_params(s, prefix + ".k", d_model, d_model, rng);
    add_linear_params(s, prefix + ".v", d_model, d_model, rng);
    add_linear_params(s, prefix + ".o", d_model, d_model, rng);
}

void add_transformer_params(ParamStore& s, const std::string& prefix, int64_t d_model,
                            std::mt19937_64& rng) {
    add_attention_params(s, prefix + ".attn", d_model, rng);
    s.add(prefix + ".ln1.gamma", Tensor::full({d_model}, 1.0));
    s.add(prefix + ".ln1.beta", Tensor::zeros({d_model}));
    add_linear_params(s, prefix + ".ffn1", d_model, 4 * d_model, rng);
    add_linear_params(s, prefix + ".ffn2", 4 * d_model, d_model, rng);
    s.add(prefix + ".ln2.gamma", Tensor::full({d_model}, 1.0));
    s.add(prefix + ".ln2.beta", Tensor::zeros({d_model}));
}

void add_gru_params(ParamStore& s, const std::string& prefix, int64_t in, int64_t hidden,
                    std::mt19937_64& rng) {
    const double bw = 1.0 / std::sqrt(static_cast<double>(in));
    const double bu = 1.0 / std::sqrt(static_cast<double>(hidden));
    s.add(prefix + ".w_update", Tensor::uniform({in, hidden}, bw, rng));
    s.add(prefix + ".u_update", Tensor::uniform({hidden, hidden}, bu, rng));
    s.add(prefix + ".b_update", Tensor::uniform({hidden}, bw, rng));
    s.add(prefix + ".w_reset", Tensor::uniform({in, hidden}, bw, rng));
    s.add(prefix + ".u_reset", Tensor::uniform({hidden, hidden}, bu, rng));
    s.add(prefix + ".b_reset", Tensor::uniform({hidden}, bw, rng));
    s.add(prefix + ".w_cand", Tensor::uniform({in, hidden}, bw, rng));
    s.add(prefix + ".u_cand", Tensor::uniform({hidden, hidden}, bu, rng));
    s.add(prefix + ".b_cand", Tensor::uniform({hidden}, bw, rng));
}

void add_conv1d_params(ParamStore& s, const std::string& prefix, int64_t k, int64_t c_in,
                       int64_t c_out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(k * c_in));
    s.add(prefix + ".w", Tensor::uniform({k, c_in, c_out}, bound, rng));
    s.add(prefix + ".b", Tensor::uniform({c_out}, bound, rng));
}

AttentionVars bind_attention(const ParamBinding& b, const std::string& prefix) {
    AttentionVars v;
    v.wq = b[prefix + ".q.w"];
    v.bq = b[prefix + ".q.b"];
    v.wk = b[prefix + ".k.w"];
    v.bk = b[prefix + ".k.b"];
    v.wv = b[prefix + ".v.w"];
    v.bv = b[prefix + ".v.b"];
    v.wo = b[prefix + ".o.w"];
    v.bo = b[prefix + ".o.b"];
    return v;
}

TransformerVars bind_transformer(const ParamBinding& b, const std::string& prefix) {
    TransformerVars v;
    v.attn = bind_attention(b, prefix + ".attn");
    v.ln1_gamma = b[prefix + ".ln1.gamma"];
    v.ln1_beta = b[prefix + ".ln1.beta"];
    v.ffn_w1 = b[prefix + ".ffn1.w"];
    v.ffn_b1 = b[prefix + ".ffn1.b"];
    v.ffn_w2 = b[prefix + ".ffn2.w"];
    v.ffn_b2 = b[prefix + ".ffn2.b"];
    v.ln2_gamma = b[prefix + ".ln2.gamma"];
    v.ln2_beta = b[prefix + ".ln2.beta"];
    return v;
}

GruVars bind_gru(const ParamBinding& b, const std::string& prefix) {
    GruVars v;
    v.w_update = b[prefix + ".w_update"];
    v.u_update = b[prefix + ".u_update"];
    v.b_update = b[prefix + ".b_update"];
    v.w_reset = b[prefix + ".w_reset"];
    v.u_reset = b[prefix + ".u_reset"];
    v.b_reset = b[prefix + ".b_reset"];
    v.w_cand = b[prefix + ".w_cand"];
    v.u_cand = b[prefix + ".u_cand"];
    v.b_cand = b[prefix + ".b_cand"];
    return v;
}

}  // namespace csai
