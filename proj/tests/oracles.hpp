// Independent scalar-loop reference implementations used as test oracles.
// Everything here is deliberately written with plain loops over
// std::vector<double>, without touching the library's tensor or tape code
// paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;  // row major

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = x * W + b, x row vector [in], W [in][out]
inline Vec affine(const Vec& x, const Mat& w, const Vec& b) {
    const size_t out = w[0].size();
    Vec y(out, 0.0);
    for (size_t j = 0; j < out; ++j) {
        double acc = b.empty() ? 0.0 : b[j];
        for (size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i][j];
        y[j] = acc;
    }
    return y;
}

// PyTorch-convention GRU: h' = (1-z) (.) n + z (.) h
struct GruOracleParams {
    Mat w_update, u_update;
    Vec b_update;
    Mat w_reset, u_reset;
    Vec b_reset;
    Mat w_cand, u_cand;
    Vec b_cand;
};

inline Vec gru_step(const Vec& h, const Vec& x, const GruOracleParams& p) {
    const size_t H = h.size();
    Vec z = affine(x, p.w_update, p.b_update);
    Vec zr = affine(h, p.u_update, {});
    Vec r = affine(x, p.w_reset, p.b_reset);
    Vec rr = affine(h, p.u_reset, {});
    for (size_t i = 0; i < H; ++i) {
        z[i] = sigmoid(z[i] + zr[i]);
        r[i] = sigmoid(r[i] + rr[i]);
    }
    Vec n = affine(x, p.w_cand, p.b_cand);
    Vec nh = affine(h, p.u_cand, {});
    Vec out(H);
    for (size_t i = 0; i < H; ++i) {
        n[i] = std::tanh(n[i] + r[i] * nh[i]);
        out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
    }
    return out;
}

struct BritsOracleParams {
    Mat w_gamma_h;  // [D][H]
    Vec b_gamma_h;
    Mat w_x;  // [H][D]
    Vec b_x;
    Mat w_z;  // [D][D], zero diagonal
    Vec b_z;
    Mat w_gamma_f;  // [D][D]
    Vec b_gamma_f;
    Mat w_beta;  // [D][D]
    Vec b_beta;
    GruOracleParams gru;
    bool concat_recurrent_input = false;
};

struct BritsOracleStep {
    Vec hidden, history_est, feature_est, combined_est, completed;
};

// Straight-line evaluation of the cell update, one equation at a time.
inline BritsOracleStep brits_step(const Vec& h_prev, const Vec& x, const Vec& m, const Vec& delta,
                                  const BritsOracleParams& p) {
    const size_t D = x.size(), H = h_prev.size();

    Vec gamma_h = affine(delta, p.w_gamma_h, p.b_gamma_h);
    for (size_t i = 0; i < H; ++i) gamma_h[i] = std::exp(-std::max(0.0, gamma_h[i]));
    Vec h_dec(H);
    for (size_t i = 0; i < H; ++i) h_dec[i] = h_prev[i] * gamma_h[i];

    Vec x_hat = affine(h_dec, p.w_x, p.b_x);
    Vec x_hist(D);
    for (size_t d = 0; d < D; ++d) x_hist[d] = m[d] * x[d] + (1.0 - m[d]) * x_hat[d];

    Vec x_fc = affine(x_hist, p.w_z, p.b_z);

    Vec gamma_f = affine(delta, p.w_gamma_f, p.b_gamma_f);
    for (size_t d = 0; d < D; ++d) gamma_f[d] = std::exp(-std::max(0.0, gamma_f[d]));
    Vec gm(D);
    for (size_t d = 0; d < D; ++d) gm[d] = gamma_f[d] * m[d];
    Vec beta = affine(gm, p.w_beta, p.b_beta);
    for (size_t d = 0; d < D; ++d) beta[d] = sigmoid(beta[d]);

    Vec x_comb(D), completed(D);
    for (size_t d = 0; d < D; ++d) {
        x_comb[d] = beta[d] * x_fc[d] + (1.0 - beta[d]) * x_hist[d];
        completed[d] = m[d] * x[d] + (1.0 - m[d]) * x_comb[d];
    }

    Vec rnn_in;
    if (p.concat_recurrent_input) {
        rnn_in = completed;
        rnn_in.insert(rnn_in.end(), m.begin(), m.end());
    } else {
        rnn_in.resize(D);
        for (size_t d = 0; d < D; ++d) rnn_in[d] = completed[d] * m[d];
    }

    BritsOracleStep out;
    out.hidden = gru_step(h_dec, rnn_in, p.gru);
    out.history_est = x_hat;
    out.feature_est = x_fc;
    out.combined_est = x_comb;
    out.completed = completed;
    return out;
}

// softmax over the trailing dimension of a flat row
inline Vec softmax(const Vec& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    Vec out(row.size());
    double sum = 0.0;
    for (size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp(row[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

struct AttentionOracleParams {
    Mat wq, wk, wv, wo;      // [C][C]
    Vec bq, bk, bv, bo;      // [C]
};

// x is [L][C] for one sample; returns [L][C]
inline Mat mhsa(const Mat& x, const AttentionOracleParams& p, int n_heads) {
    const size_t L = x.size(), C = x[0].size();
    const size_t Dh = C / static_cast<size_t>(n_heads);
    Mat q(L), k(L), v(L);
    for (size_t l = 0; l < L; ++l) {
        q[l] = affine(x[l], p.wq, p.bq);
        k[l] = affine(x[l], p.wk, p.bk);
        v[l] = affine(x[l], p.wv, p.bv);
    }
    Mat ctx(L, Vec(C, 0.0));
    for (int h = 0; h < n_heads; ++h) {
        const size_t off = static_cast<size_t>(h) * Dh;
        for (size_t i = 0; i < L; ++i) {
            Vec scores(L, 0.0);
            for (size_t j = 0; j < L; ++j) {
                double s = 0.0;
                for (size_t d = 0; d < Dh; ++d) s += q[i][off + d] * k[j][off + d];
                scores[j] = s / std::sqrt(static_cast<double>(Dh));
            }
            const Vec attn = softmax(scores);
            for (size_t j = 0; j < L; ++j)
                for (size_t d = 0; d < Dh; ++d) ctx[i][off + d] += attn[j] * v[j][off + d];
        }
    }
    Mat out(L);
    for (size_t l = 0; l < L; ++l) out[l] = affine(ctx[l], p.wo, p.bo);
    return out;
}

inline Vec layer_norm_row(const Vec& x, const Vec& gamma, const Vec& beta, double eps = 1e-5) {
    const size_t C = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(C);
    Vec out(C);
    for (size_t c = 0; c < C; ++c) out[c] = gamma[c] * (x[c] - mu) / std::sqrt(var + eps) + beta[c];
    return out;
}

struct TransformerOracleParams {
    AttentionOracleParams attn;
    Vec ln1_gamma, ln1_beta;
    Mat ffn_w1;
    Vec ffn_b1;
    Mat ffn_w2;
    Vec ffn_b2;
    Vec ln2_gamma, ln2_beta;
};

// LN(FFN(LN(MSA(x)))), no residuals
inline Mat transformer_block(const Mat& x, const TransformerOracleParams& p, int n_heads) {
    Mat h = mhsa(x, p.attn, n_heads);
    for (auto& row : h) row = layer_norm_row(row, p.ln1_gamma, p.ln1_beta);
    Mat f(h.size());
    for (size_t l = 0; l < h.size(); ++l) {
        Vec mid = affine(h[l], p.ffn_w1, p.ffn_b1);
        for (double& v : mid) v = std::max(v, 0.0);
        f[l] = affine(mid, p.ffn_w2, p.ffn_b2);
    }
    for (auto& row : f) row = layer_norm_row(row, p.ln2_gamma, p.ln2_beta);
    return f;
}

// x [L][Cin], w indexed [k][cin][cout]; cross-correlation with zero padding
inline Mat conv1d(const Mat& x, const std::vector<Mat>& w, const Vec& b, int stride, int padding) {
    const int64_t L = static_cast<int64_t>(x.size());
    const int64_t K = static_cast<int64_t>(w.size());
    const size_t Ci = x[0].size(), Co = w[0][0].size();
    const int64_t Lo = (L + 2 * padding - K) / stride + 1;
    Mat out(static_cast<size_t>(Lo), Vec(Co, 0.0));
    for (int64_t lo = 0; lo < Lo; ++lo)
        for (size_t co = 0; co < Co; ++co) {
            double acc = b.empty() ? 0.0 : b[co];
            for (int64_t k = 0; k < K; ++k) {
                const int64_t li = lo * stride + k - padding;
                if (li < 0 || li >= L) continue;
                for (size_t ci = 0; ci < Ci; ++ci)
                    acc += x[static_cast<size_t>(li)][ci] * w[static_cast<size_t>(k)][ci][co];
            }
            out[static_cast<size_t>(lo)][co] = acc;
        }
    return out;
}

// sinusoidal positional table entry
inline double pos_enc(int64_t t, int64_t i, int64_t d_model) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d_model));
    return (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq)
                        : std::cos(static_cast<double>(t) * freq);
}

// three Adam steps on one scalar, textbook recurrence
struct AdamTrace {
    double m = 0.0, v = 0.0;
    double apply(double theta, double g, double lr, double b1, double b2, double eps, int t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        return theta - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace oracle
