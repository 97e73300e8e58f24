#include "csai/model.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace csai {

namespace {

// softplus(x) = alpha  =>  x = log(exp(alpha) - 1)
constexpr double kRawRateInit = -2.2521684610440907;  // alpha ~= 0.1

Tensor stack_steps(Tape& t, const std::vector<BritsStepVars>& steps, Var BritsStepVars::*field,
                   bool reverse_order) {
    const int64_t T = static_cast<int64_t>(steps.size());
    const Tensor& first = t.value(steps[0].*field);
    const int64_t N = first.shape[0], D = first.shape[1];
    Tensor out = Tensor::zeros({N, T, D});
    for (int64_t step = 0; step < T; ++step) {
        const auto& s = steps[static_cast<size_t>(reverse_order ? T - 1 - step : step)];
        const Tensor& v = t.value(s.*field);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) out(n, step, d) = v(n, d);
    }
    return out;
}

// mean over observed cells of |x_hat - x| + |x_fc - x| + |x_c - x|, the
// three estimate streams weighted equally
Var direction_reconstruction(Tape& t, const UnrollResult& unrolled, const TimeSeriesBatch& src,
                             int64_t n_observed) {
    const int64_t T = src.n_steps();
    Var acc;
    for (int64_t step = 0; step < T; ++step) {
        const auto& s = unrolled.steps[static_cast<size_t>(step)];
        Tensor x = Tensor::zeros({src.n_samples(), src.n_features()});
        Tensor m = Tensor::zeros({src.n_samples(), src.n_features()});
        for (int64_t n = 0; n < src.n_samples(); ++n)
            for (int64_t d = 0; d < src.n_features(); ++d) {
                x(n, d) = src.values(n, step, d);
                m(n, d) = src.mask(n, step, d);
            }
        Var xc = t.constant(std::move(x));
        Var mc = t.constant(std::move(m));
        for (Var est : {s.history_est, s.feature_est, s.combined_est}) {
            Var term = t.sum_all(t.mul(t.abs(t.sub(est, xc)), mc));
            acc = acc.valid() ? t.add(acc, term) : term;
        }
    }
    return t.scale(acc, 1.0 / (3.0 * static_cast<double>(n_observed)));
}

}  // namespace

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["d_hidden"] = d_hidden;
    j["hidden_init"] = hidden_init;
    j["literal_attention"] = literal_attention;
    j["concat_recurrent_input"] = concat_recurrent_input;
    j["attention_eps"] = attention_eps;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_hidden = j.value("d_hidden", c.d_hidden);
    c.hidden_init = j.value("hidden_init", c.hidden_init);
    c.literal_attention = j.value("literal_attention", c.literal_attention);
    c.concat_recurrent_input = j.value("concat_recurrent_input", c.concat_recurrent_input);
    c.attention_eps = j.value("attention_eps", c.attention_eps);
    return c;
}

void add_csai_params(ParamStore& s, const ModelConfig& config, int64_t n_features, int64_t n_steps,
                     std::mt19937_64& rng) {
    if (config.d_model % 2 != 0) throw ValidationError("add_csai_params: d_model must be even");
    if (config.d_model % config.n_heads != 0)
        throw ValidationError("add_csai_params: d_model must be divisible by n_heads");
    if (config.hidden_init) {
        add_linear_params(s, "input_proj", n_features, config.d_model, rng);
        add_transformer_params(s, "encoder", config.d_model, rng);
        add_conv1d_params(s, "conv1", 1, config.d_model, config.d_hidden, rng);
        add_conv1d_params(s, "conv2", 2 * n_steps, config.d_hidden, config.d_hidden, rng);
        s.add("fwd.attn.raw_rate", Tensor::full({n_features}, kRawRateInit));
        s.add("bwd.attn.raw_rate", Tensor::full({n_features}, kRawRateInit));
    }
    add_brits_cell_params(s, "fwd.brits", n_features, config.d_hidden,
                          config.concat_recurrent_input, rng);
    add_brits_cell_params(s, "bwd.brits", n_features, config.d_hidden,
                          config.concat_recurrent_input, rng);
    add_linear_params(s, "classifier", 2 * config.d_hidden, 1, rng);
}

Var adjusted_decay_attention(Tape& t, const Tensor& delta, const std::vector<double>& tau,
                             Var raw_rate, double eps, bool literal) {
    if (delta.rank() != 3) throw ValidationError("adjusted_decay_attention: expected delta [N,T,D]");
    const int64_t D = delta.shape[2];
    if (static_cast<int64_t>(tau.size()) != D)
        throw ValidationError("adjusted_decay_attention: missing or mismatched tau");
    if (!literal && eps <= 0.0)
        throw ValidationError("adjusted_decay_attention: eps must be positive");

    Tensor s = Tensor::zeros(delta.shape);
    const int64_t cells = delta.numel();
    for (int64_t i = 0; i < cells; ++i) {
        const int64_t d = i % D;
        const double u = delta.data[static_cast<size_t>(i)] - tau[static_cast<size_t>(d)];
        s.data[static_cast<size_t>(i)] = literal ? u : std::sqrt(u * u + eps);
    }
    Var alpha = t.softplus(raw_rate);
    return t.exp(t.neg(t.mul_rowvec(t.constant(std::move(s)), alpha)));
}

HiddenInitVars bind_hidden_init(const ParamBinding& b) {
    HiddenInitVars v;
    v.input_proj_w = b["input_proj.w"];
    v.input_proj_b = b["input_proj.b"];
    v.encoder = bind_transformer(b, "encoder");
    v.conv1_w = b["conv1.w"];
    v.conv1_b = b["conv1.b"];
    v.conv2_w = b["conv2.w"];
    v.conv2_b = b["conv2.b"];
    return v;
}

Var conditional_hidden_init(Tape& t, const Tensor& last_obs, Var attention,
                            const HiddenInitVars& p, const ModelConfig& config) {
    if (last_obs.rank() != 3) throw ValidationError("conditional_hidden_init: expected [N,T,D]");
    const int64_t N = last_obs.shape[0], T = last_obs.shape[1];
    if (!t.value(attention).same_shape(last_obs))
        throw ValidationError("conditional_hidden_init: attention shape mismatch");
    if (t.value(p.conv2_w).shape[0] != 2 * T)
        throw ValidationError("conditional_hidden_init: model was built for a different sequence length");

    Var pe = t.constant(positional_encoding(T, config.d_model));
    Var x = t.add_seq_table(t.linear(t.constant(last_obs), p.input_proj_w, p.input_proj_b), pe);
    Var a = t.add_seq_table(t.linear(attention, p.input_proj_w, p.input_proj_b), pe);
    Var enc_in = t.concat_seq(x, a);  // [N, 2T, d_model]
    Var enc_out = transformer_block(t, enc_in, p.encoder, config.n_heads);
    Var h1 = t.conv1d(enc_out, p.conv1_w, p.conv1_b);
    Var h = t.conv1d(h1, p.conv2_w, p.conv2_b);  // [N, 1, d_hidden]
    return t.reshape(h, {N, config.d_hidden});
}

Var classify(Tape& t, Var final_fwd, Var final_bwd, Var w, Var b) {
    Var joint = t.concat_lastdim(final_fwd, final_bwd);
    const int64_t N = t.value(joint).shape[0];
    return t.reshape(t.linear(joint, w, b), {N});
}

ForwardResult csai_forward(Tape& t, const ParamBinding& binding, const TimeSeriesBatch& batch,
                           const ModelConfig& config, const MedianGaps& tau) {
    const int64_t N = batch.n_samples(), D = batch.n_features();
    if (N == 0) throw ValidationError("csai_forward: empty batch");
    int64_t n_observed = 0;
    for (double m : batch.mask.data) n_observed += m != 0.0 ? 1 : 0;
    if (n_observed == 0) throw ValidationError("csai_forward: no observed cells");

    const TimeSeriesBatch reversed = reverse_time(batch);

    Var h0_fwd, h0_bwd;
    if (config.hidden_init) {
        if (static_cast<int64_t>(tau.tau.size()) != D)
            throw ValidationError("csai_forward: missing tau (median gaps)");
        HiddenInitVars hi = bind_hidden_init(binding);
        Var a_fwd = adjusted_decay_attention(t, batch.delta, tau.tau, binding["fwd.attn.raw_rate"],
                                             config.attention_eps, config.literal_attention);
        Var a_bwd = adjusted_decay_attention(t, reversed.delta, tau.tau, binding["bwd.attn.raw_rate"],
                                             config.attention_eps, config.literal_attention);
        h0_fwd = conditional_hidden_init(t, batch.last_obs, a_fwd, hi, config);
        h0_bwd = conditional_hidden_init(t, reversed.last_obs, a_bwd, hi, config);
    }

    BritsCellVars cell_fwd = bind_brits_cell(binding, "fwd.brits");
    BritsCellVars cell_bwd = bind_brits_cell(binding, "bwd.brits");
    UnrollResult fwd = unroll_direction(t, batch, cell_fwd, h0_fwd, Direction::Forward,
                                        config.concat_recurrent_input);
    // the batch is already reversed here, so unroll it forward
    UnrollResult bwd = unroll_direction(t, reversed, cell_bwd, h0_bwd, Direction::Forward,
                                        config.concat_recurrent_input);
    bwd.direction = Direction::Backward;

    MergeResult merged = merge_bidirectional(t, fwd, bwd, batch);

    ForwardResult r;
    Var recon_fwd = direction_reconstruction(t, fwd, batch, n_observed);
    Var recon_bwd = direction_reconstruction(t, bwd, reversed, n_observed);
    r.recon = t.add(recon_fwd, recon_bwd);
    r.consistency = merged.consistency;
    r.logits = classify(t, fwd.final_hidden, bwd.final_hidden, binding["classifier.w"],
                        binding["classifier.b"]);
    if (batch.has_labels()) {
        Tensor y = Tensor::zeros({N});
        for (int64_t n = 0; n < N; ++n) y(n) = batch.labels[static_cast<size_t>(n)];
        r.bce = t.bce_with_logits_mean(r.logits, t.constant(std::move(y)));
    }

    ModelOutput& out = r.output;
    out.imputations = merged.imputations;
    out.completed = merged.completed;
    out.final_hidden_fwd = t.value(fwd.final_hidden);
    out.final_hidden_bwd = t.value(bwd.final_hidden);
    const Tensor& logits = t.value(r.logits);
    out.classification.resize(static_cast<size_t>(N));
    for (int64_t n = 0; n < N; ++n)
        out.classification[static_cast<size_t>(n)] = 1.0 / (1.0 + std::exp(-logits(n)));
    out.loss_reconstruction = t.value(r.recon)(0);
    out.loss_consistency = t.value(r.consistency)(0);
    out.loss_classification = r.bce.valid() ? t.value(r.bce)(0) : 0.0;
    out.fwd_history = stack_steps(t, fwd.steps, &BritsStepVars::history_est, false);
    out.fwd_feature = stack_steps(t, fwd.steps, &BritsStepVars::feature_est, false);
    out.fwd_combined = stack_steps(t, fwd.steps, &BritsStepVars::combined_est, false);
    out.bwd_history = stack_steps(t, bwd.steps, &BritsStepVars::history_est, true);
    out.bwd_feature = stack_steps(t, bwd.steps, &BritsStepVars::feature_est, true);
    out.bwd_combined = stack_steps(t, bwd.steps, &BritsStepVars::combined_est, true);
    return r;
}

ModelOutput csai_predict(const TimeSeriesBatch& batch, ParamStore& store,
                         const ModelConfig& config, const MedianGaps& tau) {
    Tape t(/*grad_enabled=*/false);
    ParamBinding binding(t, store);
    return csai_forward(t, binding, batch, config, tau).output;
}

}  // namespace csai
