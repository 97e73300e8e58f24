#include <random>

#include "csai/report.hpp"
#include "csai/trainer.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace csai;

namespace {

TrainConfig tiny_config(uint64_t seed = 4) {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 16;
    c.learning_rate = 2e-3;
    c.mask_rate = 0.1;
    c.seed = seed;
    c.model.d_model = 4;
    c.model.n_heads = 2;
    c.model.d_hidden = 6;
    c.threads = 1;
    return c;
}

TimeSeriesBatch labeled_dataset(int64_t n, uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_samples = n;
    cfg.n_steps = 8;
    cfg.n_features = 3;
    cfg.missing_rates = {0.2, 0.35, 0.5};
    return generate_synthetic(cfg, seed).batch;
}

}  // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("perfect reconstruction with identical directions is zero loss") {
    const TimeSeriesBatch batch = testutil::random_batch(2, 3, 2, 3, 0.3);
    ModelOutput out;
    out.fwd_history = batch.values;
    out.fwd_feature = batch.values;
    out.fwd_combined = batch.values;
    out.bwd_history = batch.values;
    out.bwd_feature = batch.values;
    out.bwd_combined = batch.values;
    const LossBreakdown l = compute_loss(out, batch, LossWeights{});
    CHECK(l.total == 0.0);
    CHECK(l.reconstruction == 0.0);
    CHECK(l.consistency == 0.0);
}

TEST_CASE("single deviating estimate contributes its absolute error") {
    TimeSeriesBatch batch;
    batch.values = Tensor::from({1, 1, 1}, {1.0});
    batch.mask = Tensor::full({1, 1, 1}, 1.0);
    batch.timestamps = Tensor::zeros({1, 1});
    populate_indicators(batch);
    ModelOutput out;
    const Tensor est = Tensor::from({1, 1, 1}, {1.5});
    out.fwd_history = est;
    out.fwd_feature = est;
    out.fwd_combined = est;
    out.bwd_history = batch.values;  // backward direction is perfect
    out.bwd_feature = batch.values;
    out.bwd_combined = batch.values;
    LossWeights w;
    w.consistency = 0.0;
    w.classification = 0.0;
    const LossBreakdown l = compute_loss(out, batch, w);
    CHECK(l.total == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("random instance matches scalar recomputation of all three terms") {
    const TimeSeriesBatch batch = testutil::random_batch(3, 4, 2, 5, 0.3, /*labels=*/true);
    MedianGaps tau;
    tau.tau = {1.0, 1.0};
    ModelConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.d_hidden = 3;
    std::mt19937_64 rng(7);
    ParamStore s;
    add_csai_params(s, cfg, 2, 4, rng);
    project_feature_regression(s);
    const ModelOutput out = csai_predict(batch, s, cfg, tau);

    LossWeights w;
    w.consistency = 0.37;
    w.classification = 1.21;
    const LossBreakdown l = compute_loss(out, batch, w);

    // the forward pass recorded its own components; they must agree
    CHECK(l.reconstruction == doctest::Approx(out.loss_reconstruction).epsilon(1e-12));
    CHECK(l.consistency == doctest::Approx(out.loss_consistency).epsilon(1e-12));
    CHECK(l.classification == doctest::Approx(out.loss_classification).epsilon(1e-9));
    CHECK(l.total == doctest::Approx(l.reconstruction + 0.37 * l.consistency +
                                     1.21 * l.classification)
                         .epsilon(1e-12));

    TimeSeriesBatch empty = batch;
    std::fill(empty.mask.data.begin(), empty.mask.data.end(), 0.0);
    CHECK_THROWS_AS(compute_loss(out, empty, w), ValidationError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("metrics");

TEST_CASE("locf-backed evaluation: two-cell arithmetic") {
    // two samples, one feature; eval cells at t=1 with truths (2, 4) and
    // carried-forward predictions (1, 2)
    TimeSeriesBatch view;
    view.values = Tensor::from({2, 2, 1}, {1, 0, 2, 0});
    view.mask = Tensor::from({2, 2, 1}, {1, 0, 1, 0});
    view.timestamps = Tensor::from({2, 2}, {0, 1, 0, 1});
    populate_indicators(view);
    std::vector<EvalTarget> targets = {{Cell{0, 1, 0}, 2.0}, {Cell{1, 1, 0}, 4.0}};
    NormStats identity;
    identity.mean = {0.0};
    identity.std = {1.0};
    const Metrics m = baseline_metrics(view, targets, identity, BaselineKind::Locf);
    CHECK(m.mae == doctest::Approx(1.5));
    REQUIRE(m.mre.has_value());
    CHECK(*m.mre == doctest::Approx(0.5));
    CHECK(m.evaluated_cells == 2);

    std::swap(targets[0], targets[1]);  // order invariance
    CHECK(baseline_metrics(view, targets, identity, BaselineKind::Locf).mae == doctest::Approx(1.5));
}

TEST_CASE("perfect predictions give zero mae and mre") {
    TimeSeriesBatch view;
    view.values = Tensor::from({1, 2, 1}, {3, 0});
    view.mask = Tensor::from({1, 2, 1}, {1, 0});
    view.timestamps = Tensor::from({1, 2}, {0, 1});
    populate_indicators(view);
    std::vector<EvalTarget> targets = {{Cell{0, 1, 0}, 3.0}};  // LOCF carries exactly 3
    NormStats identity;
    identity.mean = {0.0};
    identity.std = {1.0};
    const Metrics m = baseline_metrics(view, targets, identity, BaselineKind::Locf);
    CHECK(m.mae == 0.0);
    CHECK(*m.mre == 0.0);
}

TEST_CASE("metrics come out in denormalized units") {
    TimeSeriesBatch view;
    view.values = Tensor::from({1, 2, 1}, {1, 0});
    view.mask = Tensor::from({1, 2, 1}, {1, 0});
    view.timestamps = Tensor::from({1, 2}, {0, 1});
    populate_indicators(view);
    std::vector<EvalTarget> targets = {{Cell{0, 1, 0}, 2.0}};  // |1-2| = 1 normalized
    NormStats stats;
    stats.mean = {10.0};
    stats.std = {3.0};
    const Metrics m = baseline_metrics(view, targets, stats, BaselineKind::Locf);
    CHECK(m.mae == doctest::Approx(3.0));  // scaled by std
}

TEST_CASE("empty eval targets are an error") {
    TimeSeriesBatch view = testutil::random_batch(1, 2, 1, 9, 0.0);
    NormStats identity;
    identity.mean = {0.0};
    identity.std = {1.0};
    CHECK_THROWS_AS(baseline_metrics(view, {}, identity, BaselineKind::Mean), ValidationError);
}

TEST_CASE("auc: separation, ties, oracle, single-class error") {
    CHECK(auc_score({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(auc_score({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);

    const std::vector<double> scores = {0.3, 0.7, 0.7, 0.1, 0.9, 0.4};
    const std::vector<int> labels = {0, 1, 0, 0, 1, 1};
    // O(N^2) pair-counting oracle with half credit for ties
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i)
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    CHECK(auc_score(scores, labels) ==
          doctest::Approx(wins / static_cast<double>(pairs)).epsilon(1e-12));

    CHECK_THROWS_AS(auc_score({0.1, 0.2}, {1, 1}), ValidationError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("training");

TEST_CASE("zero epochs returns the seeded initial parameters") {
    TrainConfig cfg = tiny_config(11);
    cfg.epochs = 0;
    const TimeSeriesBatch data = labeled_dataset(40, 13);
    const SplitIndices s = split_dataset(data, {0.8, 0.1, 0.1}, 15);
    const TimeSeriesBatch train_raw = subset(data, s.train);
    const NormStats stats = fit_normalizer(train_raw);
    const MedianGaps tau = compute_median_gaps(train_raw);
    const TrainResult r = train(cfg, apply_normalizer(train_raw, stats),
                                apply_normalizer(subset(data, s.val), stats), stats, tau);
    CHECK(r.history.empty());

    ParamStore expected;
    std::mt19937_64 rng(mix_seed(cfg.seed, 1));
    add_csai_params(expected, cfg.model, 3, 8, rng);
    project_feature_regression(expected);
    REQUIRE(r.best_params.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i)
        CHECK(r.best_params.entry(i).value.data == expected.entry(i).value.data);
}

TEST_CASE("training lowers the loss, tracks the best epoch, and is deterministic") {
    TrainConfig cfg = tiny_config(17);
    cfg.epochs = 8;
    cfg.learning_rate = 3e-3;
    const TimeSeriesBatch data = labeled_dataset(60, 19);
    const SplitIndices s = split_dataset(data, {0.7, 0.15, 0.15}, 21);
    const TimeSeriesBatch train_raw = subset(data, s.train);
    const NormStats stats = fit_normalizer(train_raw);
    const MedianGaps tau = compute_median_gaps(train_raw);
    const TimeSeriesBatch train_norm = apply_normalizer(train_raw, stats);
    const TimeSeriesBatch val_norm = apply_normalizer(subset(data, s.val), stats);

    const TrainResult r1 = train(cfg, train_norm, val_norm, stats, tau);
    REQUIRE(r1.history.size() == 8);
    CHECK(r1.history.back().train_loss < r1.history.front().train_loss);

    // best-epoch bookkeeping: best_val_mae is the running minimum
    double min_val = r1.history.front().val_mae;
    int min_epoch = 0;
    for (const EpochRecord& rec : r1.history)
        if (rec.val_mae < min_val) {
            min_val = rec.val_mae;
            min_epoch = rec.epoch;
        }
    CHECK(r1.best_val_mae == min_val);
    CHECK(r1.best_epoch == min_epoch);

    const TrainResult r2 = train(cfg, train_norm, val_norm, stats, tau);
    REQUIRE(r2.history.size() == r1.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_mae == r2.history[i].val_mae);
    }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    TrainConfig cfg = tiny_config(23);
    cfg.epochs = 3;
    cfg.learning_rate = 1e200;  // guarantees overflow after the first update
    const TimeSeriesBatch data = labeled_dataset(40, 25);
    const SplitIndices s = split_dataset(data, {0.8, 0.1, 0.1}, 27);
    const TimeSeriesBatch train_raw = subset(data, s.train);
    const NormStats stats = fit_normalizer(train_raw);
    const MedianGaps tau = compute_median_gaps(train_raw);
    try {
        train(cfg, apply_normalizer(train_raw, stats),
              apply_normalizer(subset(data, s.val), stats), stats, tau);
        FAIL("expected a runtime error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("cross-validation");

TEST_CASE("folds are disjoint, exhaustive, and refit their normalizers") {
    TrainConfig cfg = tiny_config(29);
    cfg.epochs = 1;
    const TimeSeriesBatch data = labeled_dataset(35, 31);
    const CvReport report = cross_validate(cfg, data);
    REQUIRE(report.folds.size() == 5);

    double sum = 0.0;
    for (const FoldResult& f : report.folds) sum += f.test.mae;
    CHECK(report.mae_mean == doctest::Approx(sum / 5.0).epsilon(1e-12));

    // fold stats must differ when the training portions differ
    bool stats_differ = false;
    for (size_t i = 1; i < report.folds.size(); ++i)
        if (report.folds[i].stats.mean != report.folds[0].stats.mean) stats_differ = true;
    CHECK(stats_differ);
}

TEST_CASE("datasets too small for five folds are rejected") {
    TrainConfig cfg = tiny_config(37);
    const TimeSeriesBatch data = labeled_dataset(20, 39);  // 4 per fold
    CHECK_THROWS_AS(cross_validate(cfg, data), ValidationError);
}

TEST_CASE("fold parallelism does not change the results") {
    TrainConfig serial = tiny_config(41);
    serial.epochs = 1;
    TrainConfig parallel = serial;
    parallel.threads = 4;
    const TimeSeriesBatch data = labeled_dataset(35, 43);
    const CvReport a = cross_validate(serial, data);
    const CvReport b = cross_validate(parallel, data);
    REQUIRE(a.folds.size() == b.folds.size());
    for (size_t i = 0; i < a.folds.size(); ++i) {
        CHECK(a.folds[i].test.mae == b.folds[i].test.mae);
        CHECK(a.folds[i].best_val_mae == b.folds[i].best_val_mae);
    }
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("ablation");

TEST_CASE("factor sweep emits one row per value with the factor recorded") {
    TrainConfig cfg = tiny_config(47);
    cfg.epochs = 1;
    cfg.permutation = MaskPermutation::All;  // factor applies everywhere
    const TimeSeriesBatch data = labeled_dataset(35, 49);
    const auto rows = ablate(cfg, AblationAxis::Factors, {"0", "5", "10"}, data);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].config.adjust_factor == 0.0);
    CHECK(rows[1].config.adjust_factor == 5.0);
    CHECK(rows[2].config.adjust_factor == 10.0);
    for (const auto& row : rows) {
        CHECK(row.config.seed == cfg.seed);  // shared seeds across arms
        CHECK(row.report.folds.size() == 5);
    }
}

TEST_CASE("permutation arms share seeds and rerun byte-identically") {
    TrainConfig cfg = tiny_config(53);
    cfg.epochs = 1;
    const TimeSeriesBatch data = labeled_dataset(35, 55);
    const auto rows1 = ablate(cfg, AblationAxis::Permutations, {"All", "None"}, data);
    const auto rows2 = ablate(cfg, AblationAxis::Permutations, {"All", "None"}, data);
    CHECK(ablation_to_json(AblationAxis::Permutations, rows1).dump() ==
          ablation_to_json(AblationAxis::Permutations, rows2).dump());
}

TEST_CASE("legacy arm under-masks relative to the corrected arm") {
    const TimeSeriesBatch data = labeled_dataset(40, 57);
    // identical seeds, the two implementations of the same request
    const MaskPlan legacy = plan_uniform_mask(data.mask, 0.10, 61, MaskMode::Legacy);
    const MaskPlan corrected = plan_uniform_mask(data.mask, 0.10, 61, MaskMode::Corrected);
    const MaskAudit al = audit_mask_plan(legacy, data.mask);
    const MaskAudit ac = audit_mask_plan(corrected, data.mask);
    CHECK(al.realized_rate < ac.realized_rate);
}

TEST_CASE("unknown axis values are validation errors") {
    TrainConfig cfg = tiny_config(59);
    const TimeSeriesBatch data = labeled_dataset(35, 63);
    CHECK_THROWS_AS(ablate(cfg, AblationAxis::Factors, {"fast"}, data), ValidationError);
    CHECK_THROWS_AS(ablate(cfg, AblationAxis::MaskModes, {"sometimes"}, data), ValidationError);
    CHECK_THROWS_AS(parse_axis("colour"), ValidationError);
}

TEST_SUITE_END();
