#include <random>

#include "csai/gradcheck.hpp"
#include "csai/model.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace csai;

namespace {

double softplus_inverse(double alpha) { return std::log(std::exp(alpha) - 1.0); }

ModelConfig small_config(bool hidden_init = true) {
    ModelConfig c;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_hidden = 3;
    c.hidden_init = hidden_init;
    return c;
}

ParamStore model_store(const ModelConfig& c, int64_t D, int64_t T, uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore s;
    add_csai_params(s, c, D, T, rng);
    project_feature_regression(s);
    return s;
}

// independent reversal: values/mask flipped, timestamps re-anchored, delta
// and last_obs rebuilt by scanning
struct PlainBatch {
    std::vector<std::vector<std::vector<double>>> values, mask, delta, last_obs;  // [n][t][d]
    std::vector<std::vector<double>> timestamps;                                  // [n][t]
};

PlainBatch to_plain(const TimeSeriesBatch& b) {
    const int64_t N = b.n_samples(), T = b.n_steps(), D = b.n_features();
    PlainBatch p;
    p.values.assign(N, std::vector<std::vector<double>>(T, std::vector<double>(D)));
    p.mask = p.values;
    p.delta = p.values;
    p.last_obs = p.values;
    p.timestamps.assign(N, std::vector<double>(T));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t) {
            p.timestamps[n][t] = b.timestamps(n, t);
            for (int64_t d = 0; d < D; ++d) {
                p.values[n][t][d] = b.values(n, t, d);
                p.mask[n][t][d] = b.mask(n, t, d);
            }
        }
    return p;
}

void rebuild_indicators(PlainBatch& p) {
    const size_t N = p.values.size(), T = p.values[0].size(), D = p.values[0][0].size();
    for (size_t n = 0; n < N; ++n)
        for (size_t d = 0; d < D; ++d) {
            double last = 0.0;
            for (size_t t = 0; t < T; ++t) {
                if (t == 0)
                    p.delta[n][t][d] = 0.0;
                else
                    p.delta[n][t][d] = p.mask[n][t - 1][d] == 0.0
                                           ? p.timestamps[n][t] - p.timestamps[n][t - 1] + p.delta[n][t - 1][d]
                                           : p.timestamps[n][t] - p.timestamps[n][t - 1];
                if (p.mask[n][t][d] != 0.0) last = p.values[n][t][d];
                p.last_obs[n][t][d] = last;
            }
        }
}

PlainBatch reversed_plain(const PlainBatch& p) {
    PlainBatch r = p;
    const size_t N = p.values.size(), T = p.values[0].size();
    for (size_t n = 0; n < N; ++n) {
        const double s_end = p.timestamps[n][T - 1];
        for (size_t t = 0; t < T; ++t) {
            r.timestamps[n][t] = s_end - p.timestamps[n][T - 1 - t];
            r.values[n][t] = p.values[n][T - 1 - t];
            r.mask[n][t] = p.mask[n][T - 1 - t];
        }
    }
    rebuild_indicators(r);
    return r;
}

struct OracleForward {
    std::vector<std::vector<std::vector<double>>> imputations, completed;  // [n][t][d]
    std::vector<double> probabilities;
};

// composition of the per-module oracles for the full model forward pass
OracleForward model_forward_oracle(const TimeSeriesBatch& batch, const ParamStore& s,
                                   const ModelConfig& cfg, const std::vector<double>& tau) {
    PlainBatch fwd = to_plain(batch);
    rebuild_indicators(fwd);
    PlainBatch bwd = reversed_plain(fwd);
    const size_t N = fwd.values.size(), T = fwd.values[0].size(), D = fwd.values[0][0].size();
    const size_t H = static_cast<size_t>(cfg.d_hidden);

    const auto win = testutil::to_mat(s.value("input_proj.w"));
    const auto bin = testutil::to_vec(s.value("input_proj.b"));
    const auto enc = testutil::transformer_oracle_params(s, "encoder");
    const auto conv1_w = testutil::to_kernel(s.value("conv1.w"));
    const auto conv1_b = testutil::to_vec(s.value("conv1.b"));
    const auto conv2_w = testutil::to_kernel(s.value("conv2.w"));
    const auto conv2_b = testutil::to_vec(s.value("conv2.b"));

    auto run_direction = [&](const PlainBatch& dir, const std::string& prefix) {
        const auto raw = testutil::to_vec(s.value(prefix + ".attn.raw_rate"));
        const auto cell = testutil::brits_oracle_params(s, prefix + ".brits",
                                                        cfg.concat_recurrent_input);
        std::vector<std::vector<oracle::Vec>> xc(N, std::vector<oracle::Vec>(T));
        std::vector<oracle::Vec> final_hidden(N);
        for (size_t n = 0; n < N; ++n) {
            // decay attention for this direction
            oracle::Mat attn(T, oracle::Vec(D));
            for (size_t t = 0; t < T; ++t)
                for (size_t d = 0; d < D; ++d) {
                    const double alpha = std::log1p(std::exp(raw[d]));
                    const double u = dir.delta[n][t][d] - tau[d];
                    const double sdist =
                        cfg.literal_attention ? u : std::sqrt(u * u + cfg.attention_eps);
                    attn[t][d] = std::exp(-alpha * sdist);
                }
            // hidden-state initializer
            oracle::Vec h(H, 0.0);
            if (cfg.hidden_init) {
                oracle::Mat c_in(2 * T);
                for (size_t t = 0; t < T; ++t) {
                    c_in[t] = oracle::affine(dir.last_obs[n][t], win, bin);
                    c_in[T + t] = oracle::affine(attn[t], win, bin);
                    for (int64_t i = 0; i < cfg.d_model; ++i) {
                        c_in[t][static_cast<size_t>(i)] +=
                            oracle::pos_enc(static_cast<int64_t>(t), i, cfg.d_model);
                        c_in[T + t][static_cast<size_t>(i)] +=
                            oracle::pos_enc(static_cast<int64_t>(t), i, cfg.d_model);
                    }
                }
                const oracle::Mat c_out = oracle::transformer_block(c_in, enc, cfg.n_heads);
                const oracle::Mat h1 = oracle::conv1d(c_out, conv1_w, conv1_b, 1, 0);
                const oracle::Mat hinit = oracle::conv1d(h1, conv2_w, conv2_b, 1, 0);
                h = hinit[0];
            }
            // unroll the cell
            for (size_t t = 0; t < T; ++t) {
                const oracle::BritsOracleStep step = oracle::brits_step(
                    h, dir.values[n][t], dir.mask[n][t], dir.delta[n][t], cell);
                xc[n][t] = step.combined_est;
                h = step.hidden;
            }
            final_hidden[n] = h;
        }
        return std::make_pair(xc, final_hidden);
    };

    auto [xc_f, hf] = run_direction(fwd, "fwd");
    auto [xc_b, hb] = run_direction(bwd, "bwd");

    OracleForward out;
    out.imputations.assign(N, std::vector<std::vector<double>>(T, std::vector<double>(D)));
    out.completed = out.imputations;
    for (size_t n = 0; n < N; ++n)
        for (size_t t = 0; t < T; ++t)
            for (size_t d = 0; d < D; ++d) {
                const double merged = 0.5 * (xc_f[n][t][d] + xc_b[n][T - 1 - t][d]);
                out.imputations[n][t][d] = merged;
                out.completed[n][t][d] = fwd.mask[n][t][d] != 0.0 ? fwd.values[n][t][d] : merged;
            }

    const auto cw = testutil::to_mat(s.value("classifier.w"));
    const auto cb = testutil::to_vec(s.value("classifier.b"));
    for (size_t n = 0; n < N; ++n) {
        oracle::Vec joint = hf[n];
        joint.insert(joint.end(), hb[n].begin(), hb[n].end());
        out.probabilities.push_back(oracle::sigmoid(oracle::affine(joint, cw, cb)[0]));
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("decay-attention");

TEST_CASE("peak at the median gap") {
    Tape t;
    Var raw = t.leaf(Tensor::full({1}, 100.0));  // softplus(100) ~ 100
    Tensor delta = Tensor::full({1, 1, 1}, 3.0);
    Var a = adjusted_decay_attention(t, delta, {3.0}, raw, 1e-12);
    CHECK(t.value(a)(0) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("unit rate two hours off the median decays to exp(-2)") {
    Tape t;
    Var raw = t.leaf(Tensor::full({1}, softplus_inverse(1.0)));
    Tensor delta = Tensor::full({1, 1, 1}, 7.0);
    Var a = adjusted_decay_attention(t, delta, {5.0}, raw, 1e-16);
    CHECK(t.value(a)(0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-7));
    CHECK(t.value(a)(0) == doctest::Approx(0.1353).epsilon(1e-3));
}

TEST_CASE("even around tau, maximal there, confined to (0,1]") {
    Tape t;
    Var raw = t.leaf(Tensor::full({1}, softplus_inverse(0.7)));
    const double tau = 4.0;
    std::vector<double> grid;
    for (int i = 0; i <= 1000; ++i) grid.push_back(static_cast<double>(i) * 0.01);
    Tensor delta = Tensor::zeros({1, static_cast<int64_t>(grid.size()), 1});
    for (size_t i = 0; i < grid.size(); ++i) delta.data[i] = grid[i];
    const Tensor a = t.value(adjusted_decay_attention(t, delta, {tau}, raw, 1e-8));

    size_t argmax = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        CHECK(a.data[i] > 0.0);
        CHECK(a.data[i] <= 1.0);
        if (a.data[i] > a.data[argmax]) argmax = i;
    }
    CHECK(grid[argmax] == doctest::Approx(tau).epsilon(1e-9));

    // exact evenness: A(tau+u) == A(tau-u) for dyadic u where tau+-u is
    // exactly representable
    Tensor pair = Tensor::zeros({1, 2, 1});
    for (double u : {0.375, 1.75, 3.0}) {
        pair.data[0] = tau + u;
        pair.data[1] = tau - u;
        const Tensor av = t.value(adjusted_decay_attention(t, pair, {tau}, raw, 1e-8));
        CHECK(av.data[0] == av.data[1]);
    }
}

TEST_CASE("literal switch reproduces the signed exponential") {
    Tape t;
    const double alpha = 0.8;
    Var raw = t.leaf(Tensor::full({2}, softplus_inverse(alpha)));
    std::mt19937_64 rng(7);
    Tensor delta = testutil::randn({2, 3, 2}, rng);
    for (double& v : delta.data) v = std::fabs(v) * 4.0;
    const std::vector<double> tau = {1.0, 2.5};
    const Tensor a = t.value(adjusted_decay_attention(t, delta, tau, raw, 1e-8, /*literal=*/true));
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t s = 0; s < 3; ++s)
            for (int64_t d = 0; d < 2; ++d)
                CHECK(a(n, s, d) ==
                      doctest::Approx(std::exp(-alpha * (delta(n, s, d) - tau[static_cast<size_t>(d)])))
                          .epsilon(1e-12));
}

TEST_CASE("tau mismatch is an error") {
    Tape t;
    Var raw = t.leaf(Tensor::full({2}, 0.0));
    CHECK_THROWS_AS(adjusted_decay_attention(t, Tensor::zeros({1, 2, 2}), {1.0}, raw, 1e-8),
                    ValidationError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("hidden-init");

TEST_CASE("output shape is [N, d_hidden] across configurations") {
    for (auto [N, T, D] : std::vector<std::array<int64_t, 3>>{{1, 2, 2}, {3, 5, 4}, {2, 7, 1}}) {
        ModelConfig cfg = small_config();
        ParamStore s = model_store(cfg, D, T, 11);
        const TimeSeriesBatch batch = testutil::random_batch(N, T, D, 13, 0.3);
        Tape t;
        ParamBinding b(t, s);
        Var a = adjusted_decay_attention(t, batch.delta, std::vector<double>(D, 1.0),
                                         b["fwd.attn.raw_rate"], cfg.attention_eps);
        Var h = conditional_hidden_init(t, batch.last_obs, a, bind_hidden_init(b), cfg);
        CHECK(t.value(h).shape == std::vector<int64_t>{N, cfg.d_hidden});
    }
}

TEST_CASE("zero collapsing conv makes the bias the initial state") {
    ModelConfig cfg = small_config();
    ParamStore s = model_store(cfg, 2, 3, 17);
    std::fill(s.value("conv2.w").data.begin(), s.value("conv2.w").data.end(), 0.0);
    s.value("conv2.b") = Tensor::from({3}, {0.3, -0.8, 1.1});
    const TimeSeriesBatch batch = testutil::random_batch(2, 3, 2, 19, 0.3);
    Tape t;
    ParamBinding b(t, s);
    Var a = adjusted_decay_attention(t, batch.delta, {1.0, 1.0}, b["fwd.attn.raw_rate"],
                                     cfg.attention_eps);
    const Tensor h = t.value(conditional_hidden_init(t, batch.last_obs, a, bind_hidden_init(b), cfg));
    for (int64_t n = 0; n < 2; ++n) {
        CHECK(h(n, 0) == 0.3);
        CHECK(h(n, 1) == -0.8);
        CHECK(h(n, 2) == 1.1);
    }
}

TEST_CASE("1x2x2 fixed-weight case matches the chained oracle") {
    ModelConfig cfg = small_config();
    ParamStore s = model_store(cfg, 2, 2, 23);
    const TimeSeriesBatch batch = testutil::random_batch(1, 2, 2, 29, 0.4);
    const std::vector<double> tau = {0.9, 1.7};

    Tape t;
    ParamBinding b(t, s);
    Var a = adjusted_decay_attention(t, batch.delta, tau, b["fwd.attn.raw_rate"], cfg.attention_eps);
    const Tensor h = t.value(conditional_hidden_init(t, batch.last_obs, a, bind_hidden_init(b), cfg));

    // oracle: project + positionally encode both streams, concat, encode,
    // pointwise conv, collapsing conv
    PlainBatch plain = to_plain(batch);
    rebuild_indicators(plain);
    const auto raw = testutil::to_vec(s.value("fwd.attn.raw_rate"));
    oracle::Mat c_in(4);
    const auto win = testutil::to_mat(s.value("input_proj.w"));
    const auto bin = testutil::to_vec(s.value("input_proj.b"));
    for (size_t t_i = 0; t_i < 2; ++t_i) {
        oracle::Vec attn_row(2);
        for (size_t d = 0; d < 2; ++d) {
            const double alpha = std::log1p(std::exp(raw[d]));
            const double u = plain.delta[0][t_i][d] - tau[d];
            attn_row[d] = std::exp(-alpha * std::sqrt(u * u + cfg.attention_eps));
        }
        c_in[t_i] = oracle::affine(plain.last_obs[0][t_i], win, bin);
        c_in[2 + t_i] = oracle::affine(attn_row, win, bin);
        for (int64_t i = 0; i < 4; ++i) {
            c_in[t_i][static_cast<size_t>(i)] += oracle::pos_enc(static_cast<int64_t>(t_i), i, 4);
            c_in[2 + t_i][static_cast<size_t>(i)] += oracle::pos_enc(static_cast<int64_t>(t_i), i, 4);
        }
    }
    const oracle::Mat c_out =
        oracle::transformer_block(c_in, testutil::transformer_oracle_params(s, "encoder"), 2);
    const oracle::Mat h1 = oracle::conv1d(c_out, testutil::to_kernel(s.value("conv1.w")),
                                          testutil::to_vec(s.value("conv1.b")), 1, 0);
    const oracle::Mat expect = oracle::conv1d(h1, testutil::to_kernel(s.value("conv2.w")),
                                              testutil::to_vec(s.value("conv2.b")), 1, 0);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(h(0, i) == doctest::Approx(expect[0][static_cast<size_t>(i)]).epsilon(1e-10));
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("csai-model");

TEST_CASE("hidden-init off is bit-identical to plain bidirectional BRITS") {
    const TimeSeriesBatch batch = testutil::random_batch(3, 5, 3, 31, 0.35, /*labels=*/true);
    MedianGaps tau;
    tau.tau = {1.0, 1.2, 0.8};

    ModelConfig off = small_config(/*hidden_init=*/false);
    ParamStore s_off = model_store(off, 3, 5, 37);
    const ModelOutput reduced = csai_predict(batch, s_off, off, tau);

    // plain bidirectional BRITS on the shared cell parameters
    Tape t;
    ParamBinding b(t, s_off);
    const UnrollResult fwd = unroll_direction(t, batch, bind_brits_cell(b, "fwd.brits"), Var{},
                                              Direction::Forward);
    const UnrollResult bwd = unroll_direction(t, batch, bind_brits_cell(b, "bwd.brits"), Var{},
                                              Direction::Backward);
    const MergeResult merged = merge_bidirectional(t, fwd, bwd, batch);
    CHECK(reduced.imputations.data == merged.imputations.data);
    CHECK(reduced.completed.data == merged.completed.data);
    CHECK(reduced.final_hidden_fwd.data == t.value(fwd.final_hidden).data);
    CHECK(reduced.final_hidden_bwd.data == t.value(bwd.final_hidden).data);
}

TEST_CASE("observed cells pass through for random parameters") {
    const TimeSeriesBatch batch = testutil::random_batch(2, 4, 3, 41, 0.3);
    MedianGaps tau;
    tau.tau = {1.0, 1.0, 1.0};
    ModelConfig cfg = small_config();
    ParamStore s = model_store(cfg, 3, 4, 43);
    const ModelOutput out = csai_predict(batch, s, cfg, tau);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t t = 0; t < 4; ++t)
            for (int64_t d = 0; d < 3; ++d)
                if (batch.mask(n, t, d) != 0.0)
                    CHECK(out.completed(n, t, d) == batch.values(n, t, d));
}

TEST_CASE("2x4x3 forward matches the composed module oracles") {
    const TimeSeriesBatch batch = testutil::random_batch(2, 4, 3, 47, 0.3, /*labels=*/true);
    MedianGaps tau;
    tau.tau = {0.8, 1.3, 1.9};
    ModelConfig cfg = small_config();
    ParamStore s = model_store(cfg, 3, 4, 53);
    const ModelOutput out = csai_predict(batch, s, cfg, tau);
    const OracleForward expect = model_forward_oracle(batch, s, cfg, tau.tau);
    for (int64_t n = 0; n < 2; ++n) {
        for (int64_t t = 0; t < 4; ++t)
            for (int64_t d = 0; d < 3; ++d) {
                CHECK(out.imputations(n, t, d) ==
                      doctest::Approx(expect.imputations[n][t][d]).epsilon(1e-9));
                CHECK(out.completed(n, t, d) ==
                      doctest::Approx(expect.completed[n][t][d]).epsilon(1e-9));
            }
        CHECK(out.classification[static_cast<size_t>(n)] ==
              doctest::Approx(expect.probabilities[static_cast<size_t>(n)]).epsilon(1e-9));
    }
}

TEST_CASE("literal attention switch changes the forward pass") {
    const TimeSeriesBatch batch = testutil::random_batch(2, 4, 3, 59, 0.3);
    MedianGaps tau;
    tau.tau = {1.0, 1.0, 1.0};
    ModelConfig smooth = small_config();
    ModelConfig literal = small_config();
    literal.literal_attention = true;
    ParamStore s = model_store(smooth, 3, 4, 61);
    const ModelOutput a = csai_predict(batch, s, smooth, tau);
    const ModelOutput b = csai_predict(batch, s, literal, tau);
    CHECK(a.imputations.data != b.imputations.data);
}

TEST_CASE("missing tau is an error when the initializer is on") {
    const TimeSeriesBatch batch = testutil::random_batch(1, 3, 2, 67, 0.3);
    ModelConfig cfg = small_config();
    cfg.d_model = 4;
    ParamStore s = model_store(cfg, 2, 3, 71);
    MedianGaps missing;
    CHECK_THROWS_AS(csai_predict(batch, s, cfg, missing), ValidationError);
}

TEST_CASE("classifier: zero weights give probability one half, monotone in logit") {
    Tape t;
    std::mt19937_64 rng(73);
    Var zero_w = t.leaf(Tensor::zeros({6, 1}));
    Var zero_b = t.leaf(Tensor::zeros({1}));
    Var hf = t.leaf(testutil::randn({4, 3}, rng));
    Var hb = t.leaf(testutil::randn({4, 3}, rng));
    const Tensor logits = t.value(classify(t, hf, hb, zero_w, zero_b));
    for (int64_t n = 0; n < 4; ++n)
        CHECK(1.0 / (1.0 + std::exp(-logits(n))) == doctest::Approx(0.5));

    Var big_b = t.leaf(Tensor::full({1}, 30.0));
    const Tensor big = t.value(classify(t, hf, hb, zero_w, big_b));
    for (int64_t n = 0; n < 4; ++n) CHECK(1.0 / (1.0 + std::exp(-big(n))) > 0.999999);
}

TEST_CASE("classifier: five-sample case matches the scalar sigmoid oracle") {
    std::mt19937_64 rng(79);
    Tape t;
    const Tensor hf = testutil::randn({5, 3}, rng);
    const Tensor hb = testutil::randn({5, 3}, rng);
    const Tensor w = testutil::randn({6, 1}, rng);
    const Tensor bias = testutil::randn({1}, rng);
    const Tensor logits =
        t.value(classify(t, t.constant(hf), t.constant(hb), t.constant(w), t.constant(bias)));
    for (int64_t n = 0; n < 5; ++n) {
        double z = bias(0);
        for (int64_t i = 0; i < 3; ++i) z += hf(n, i) * w(i, 0) + hb(n, i) * w(3 + i, 0);
        CHECK(1.0 / (1.0 + std::exp(-logits(n))) == doctest::Approx(oracle::sigmoid(z)).epsilon(1e-12));
    }
}

TEST_CASE("end-to-end gradient: full loss on a 2x4x3 batch") {
    const TimeSeriesBatch batch = testutil::random_batch(2, 4, 3, 83, 0.3, /*labels=*/true);
    MedianGaps tau;
    tau.tau = {1.0, 1.4, 0.9};
    ModelConfig cfg = small_config();
    ParamStore s = model_store(cfg, 3, 4, 89);

    auto graph = [&](Tape& t, const ParamBinding& b) {
        ForwardResult r = csai_forward(t, b, batch, cfg, tau);
        Var loss = t.add(r.recon, t.scale(r.consistency, 0.1));
        return t.add(loss, r.bce);
    };
    auto loss_fn = [&](ParamStore& st) {
        Tape t(false);
        ParamBinding b(t, st);
        return t.value(graph(t, b))(0);
    };
    auto grad_fn = [&](ParamStore& st) {
        Tape t;
        ParamBinding b(t, st);
        Var loss = graph(t, b);
        t.backward(loss);
        b.harvest();
    };
    auto report = finite_difference_check(loss_fn, grad_fn, s, 100, 1e-5, 1e-3, 97);
    CHECK(report.pass);
    CHECK(report.max_rel_error < 1e-3);

    // negative control: doubling one live gradient breaks the check
    auto bad_grad = [&](ParamStore& st) {
        grad_fn(st);
        double best = 0.0;
        size_t ei = 0;
        int64_t idx = 0;
        for (size_t i = 0; i < st.size(); ++i)
            for (int64_t j = 0; j < st.entry(i).grad.numel(); ++j)
                if (std::fabs(st.entry(i).grad.data[static_cast<size_t>(j)]) > best) {
                    best = std::fabs(st.entry(i).grad.data[static_cast<size_t>(j)]);
                    ei = i;
                    idx = j;
                }
        st.entry(ei).grad.data[static_cast<size_t>(idx)] *= 2.0;
    };
    // probe every scalar so the corrupted one is guaranteed to be hit
    const int probes = static_cast<int>(s.scalar_count());
    auto bad = finite_difference_check(loss_fn, bad_grad, s, probes, 1e-5, 1e-3, 97);
    CHECK_FALSE(bad.pass);
}

TEST_SUITE_END();
