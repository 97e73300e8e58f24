#include "csai/brits.hpp"

#include <cmath>
#include <stdexcept>

namespace csai {

namespace {

Tensor slice_step(const Tensor& t, int64_t step) {
    const int64_t N = t.shape[0], T = t.shape[1], D = t.shape[2];
    (void)T;
    Tensor out = Tensor::zeros({N, D});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d) out(n, d) = t(n, step, d);
    return out;
}

}  // namespace

void add_brits_cell_params(ParamStore& s, const std::string& prefix, int64_t n_features,
                           int64_t d_hidden, bool concat_recurrent_input, std::mt19937_64& rng) {
    const double bd = 1.0 / std::sqrt(static_cast<double>(n_features));
    const double bh = 1.0 / std::sqrt(static_cast<double>(d_hidden));
    s.add(prefix + ".w_gamma_h", Tensor::uniform({n_features, d_hidden}, bd, rng));
    s.add(prefix + ".b_gamma_h", Tensor::uniform({d_hidden}, bd, rng));
    s.add(prefix + ".w_x", Tensor::uniform({d_hidden, n_features}, bh, rng));
    s.add(prefix + ".b_x", Tensor::uniform({n_features}, bh, rng));
    s.add(prefix + ".w_z", Tensor::uniform({n_features, n_features}, bd, rng));
    s.add(prefix + ".b_z", Tensor::uniform({n_features}, bd, rng));
    s.add(prefix + ".w_gamma_f", Tensor::uniform({n_features, n_features}, bd, rng));
    s.add(prefix + ".b_gamma_f", Tensor::uniform({n_features}, bd, rng));
    s.add(prefix + ".w_beta", Tensor::uniform({n_features, n_features}, bd, rng));
    s.add(prefix + ".b_beta", Tensor::uniform({n_features}, bd, rng));
    add_gru_params(s, prefix + ".gru", concat_recurrent_input ? 2 * n_features : n_features,
                   d_hidden, rng);
    // w_z estimates each feature from the others only
    for (size_t i = 0; i < s.size(); ++i)
        if (s.entry(i).name == prefix + ".w_z")
            for (int64_t d = 0; d < n_features; ++d) s.entry(i).value(d, d) = 0.0;
}

BritsCellVars bind_brits_cell(const ParamBinding& b, const std::string& prefix) {
    BritsCellVars v;
    v.w_gamma_h = b[prefix + ".w_gamma_h"];
    v.b_gamma_h = b[prefix + ".b_gamma_h"];
    v.w_x = b[prefix + ".w_x"];
    v.b_x = b[prefix + ".b_x"];
    v.w_z = b[prefix + ".w_z"];
    v.b_z = b[prefix + ".b_z"];
    v.w_gamma_f = b[prefix + ".w_gamma_f"];
    v.b_gamma_f = b[prefix + ".b_gamma_f"];
    v.w_beta = b[prefix + ".w_beta"];
    v.b_beta = b[prefix + ".b_beta"];
    v.gru = bind_gru(b, prefix + ".gru");
    return v;
}

void project_feature_regression(ParamStore& s) {
    for (size_t i = 0; i < s.size(); ++i) {
        auto& e = s.entry(i);
        if (e.name.size() < 4 || e.name.substr(e.name.size() - 4) != ".w_z") continue;
        const int64_t D = e.value.shape[0];
        for (int64_t d = 0; d < D; ++d) {
            e.value(d, d) = 0.0;
            e.grad(d, d) = 0.0;
        }
    }
}

Var temporal_decay(Tape& t, Var delta_t, Var w, Var b) {
    return t.exp(t.neg(t.relu(t.linear(delta_t, w, b))));
}

BritsStepVars brits_cell_step(Tape& t, Var h_prev, Var x_t, Var m_t, Var delta_t,
                              const BritsCellVars& p, bool concat_recurrent_input) {
    const Tensor& M = t.value(m_t);
    for (double v : M.data)
        if (v != 0.0 && v != 1.0) throw ValidationError("brits_cell_step: mask must be 0/1");

    Var gamma_h = temporal_decay(t, delta_t, p.w_gamma_h, p.b_gamma_h);
    Var h_decayed = t.mul(h_prev, gamma_h);
    Var x_hat = t.linear(h_decayed, p.w_x, p.b_x);

    Var one_minus_m = t.add_scalar(t.neg(m_t), 1.0);
    Var x_hist = t.add(t.mul(m_t, x_t), t.mul(one_minus_m, x_hat));

    Var x_fc = t.linear(x_hist, p.w_z, p.b_z);
    Var gamma_f = temporal_decay(t, delta_t, p.w_gamma_f, p.b_gamma_f);
    Var beta = t.sigmoid(t.linear(t.mul(gamma_f, m_t), p.w_beta, p.b_beta));
    Var x_comb = t.add(t.mul(beta, x_fc), t.mul(t.sub(t.leaf(Tensor::full(t.value(beta).shape, 1.0)), beta), x_hist));
    Var completed = t.add(t.mul(m_t, x_t), t.mul(one_minus_m, x_comb));

    Var rnn_input = concat_recurrent_input ? t.concat_lastdim(completed, m_t)
                                           : t.mul(completed, m_t);
    Var h_next = gru_cell_step(t, h_decayed, rnn_input, p.gru);

    BritsStepVars out;
    out.hidden = h_next;
    out.history_est = x_hat;
    out.feature_est = x_fc;
    out.combined_est = x_comb;
    out.completed = completed;
    return out;
}

UnrollResult unroll_direction(Tape& t, const TimeSeriesBatch& batch, const BritsCellVars& p,
                              Var h_init, Direction direction, bool concat_recurrent_input) {
    const TimeSeriesBatch* src = &batch;
    TimeSeriesBatch reversed;
    if (direction == Direction::Backward) {
        reversed = reverse_time(batch);
        src = &reversed;
    }
    const int64_t N = src->n_samples(), T = src->n_steps();

    UnrollResult out;
    out.direction = direction;
    Var h = h_init.valid() ? h_init : t.leaf(Tensor::zeros({N, t.value(p.b_gamma_h).shape[0]}));
    for (int64_t step = 0; step < T; ++step) {
        Var x = t.constant(slice_step(src->values, step));
        Var m = t.constant(slice_step(src->mask, step));
        Var delta = t.constant(slice_step(src->delta, step));
        BritsStepVars s = brits_cell_step(t, h, x, m, delta, p, concat_recurrent_input);
        h = s.hidden;
        out.steps.push_back(s);
    }
    out.final_hidden = h;
    return out;
}

MergeResult merge_bidirectional(Tape& t, const UnrollResult& fwd, const UnrollResult& bwd,
                                const TimeSeriesBatch& batch) {
    if (fwd.steps.size() != bwd.steps.size())
        throw ValidationError("merge_bidirectional: direction length mismatch");
    const int64_t N = batch.n_samples(), T = batch.n_steps(), D = batch.n_features();

    MergeResult out;
    out.imputations = Tensor::zeros({N, T, D});
    out.completed = Tensor::zeros({N, T, D});
    Var acc;
    for (int64_t step = 0; step < T; ++step) {
        Var f = fwd.steps[static_cast<size_t>(step)].combined_est;
        Var b = bwd.steps[static_cast<size_t>(T - 1 - step)].combined_est;
        Var diff = t.sum_all(t.abs(t.sub(f, b)));
        acc = acc.valid() ? t.add(acc, diff) : diff;
        const Tensor &fv = t.value(f), &bv = t.value(b);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) {
                const double merged = 0.5 * (fv(n, d) + bv(n, d));
                out.imputations(n, step, d) = merged;
                out.completed(n, step, d) =
                    batch.mask(n, step, d) != 0.0 ? batch.values(n, step, d) : merged;
            }
    }
    out.consistency = t.scale(acc, 1.0 / static_cast<double>(N * T * D));
    return out;
}

}  // namespace csai
