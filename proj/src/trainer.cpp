#include "csai/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace csai {

namespace {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

MaskPlan plan_for_split(const TimeSeriesBatch& split, SplitRole role, const TrainConfig& cfg,
                        uint64_t seed) {
    const MaskStrategy strategy = select_split_policy(cfg.permutation, role);
    if (strategy == MaskStrategy::NonUniform) {
        const MissingDistribution dist = feature_missing_distribution(split);
        return plan_nonuniform_mask(split.mask, cfg.mask_rate, cfg.adjust_factor, dist, seed);
    }
    return plan_uniform_mask(split.mask, cfg.mask_rate, seed, cfg.mask_mode);
}

double l2_norm(const ParamStore& s) {
    double acc = 0.0;
    for (size_t i = 0; i < s.size(); ++i)
        for (double v : s.entry(i).value.data) acc += v * v;
    return std::sqrt(acc);
}

void accumulate_stat(std::vector<double>& values, double& mean, double& stddev) {
    mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    stddev = std::sqrt(var / static_cast<double>(values.size()));
}

/// Runs tasks 0..n-1 on up to `threads` workers; tasks must be independent.
void parallel_tasks(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
    auto worker = [&] {
        for (;;) {
            const int64_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<size_t>(i)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(static_cast<size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t state = seed ^ (0x632be59bd9b4e019ULL + a * 0x9e3779b97f4a7c15ULL) ^
                     (b * 0xd1b54a32d192ed03ULL);
    // two rounds keep low-entropy inputs apart
    splitmix64(state);
    return splitmix64(state);
}

std::string TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["lambda_consistency"] = weights.consistency;
    j["lambda_classification"] = weights.classification;
    j["mask_rate"] = mask_rate;
    j["adjust_factor"] = adjust_factor;
    j["permutation"] = csai::to_string(permutation);
    j["mask_mode"] = mask_mode == MaskMode::Corrected ? "corrected" : "legacy";
    j["seed"] = seed;
    j["patience"] = patience;
    j["threads"] = threads;
    j["model"] = nlohmann::ordered_json::parse(model.to_json());
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weights.consistency = j.value("lambda_consistency", c.weights.consistency);
    c.weights.classification = j.value("lambda_classification", c.weights.classification);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.adjust_factor = j.value("adjust_factor", c.adjust_factor);
    if (j.contains("permutation")) c.permutation = parse_permutation(j["permutation"].get<std::string>());
    if (j.contains("mask_mode")) {
        const std::string m = j["mask_mode"].get<std::string>();
        if (m == "corrected")
            c.mask_mode = MaskMode::Corrected;
        else if (m == "legacy")
            c.mask_mode = MaskMode::Legacy;
        else
            throw ValidationError("TrainConfig: unknown mask_mode '" + m + "'");
    }
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.threads = j.value("threads", c.threads);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
    if (c.weights.consistency < 0 || c.weights.classification < 0)
        throw ValidationError("TrainConfig: loss weights must be nonnegative");
    if (c.mask_rate < 0.0 || c.mask_rate >= 1.0)
        throw ValidationError("TrainConfig: mask_rate must lie in [0, 1)");
    return c;
}

LossBreakdown compute_loss(const ModelOutput& output, const TimeSeriesBatch& batch,
                           const LossWeights& weights) {
    const int64_t N = batch.n_samples(), T = batch.n_steps(), D = batch.n_features();
    int64_t n_obs = 0;
    for (double m : batch.mask.data) n_obs += m != 0.0 ? 1 : 0;
    if (n_obs == 0) throw ValidationError("compute_loss: no observed cells");

    LossBreakdown out;
    auto accumulate = [&](const Tensor& hist, const Tensor& feat, const Tensor& comb) {
        double acc = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t d = 0; d < D; ++d) {
                    if (batch.mask(n, t, d) == 0.0) continue;
                    const double x = batch.values(n, t, d);
                    acc += std::fabs(hist(n, t, d) - x) + std::fabs(feat(n, t, d) - x) +
                           std::fabs(comb(n, t, d) - x);
                }
        return acc / (3.0 * static_cast<double>(n_obs));
    };
    out.reconstruction = accumulate(output.fwd_history, output.fwd_feature, output.fwd_combined) +
                         accumulate(output.bwd_history, output.bwd_feature, output.bwd_combined);

    double cons = 0.0;
    for (int64_t i = 0; i < N * T * D; ++i)
        cons += std::fabs(output.fwd_combined.data[static_cast<size_t>(i)] -
                          output.bwd_combined.data[static_cast<size_t>(i)]);
    out.consistency = cons / static_cast<double>(N * T * D);

    if (batch.has_labels()) {
        double bce = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const double p = output.classification[static_cast<size_t>(n)];
            const double y = batch.labels[static_cast<size_t>(n)];
            // clamp keeps log finite for saturated probabilities
            const double pc = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
            bce += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        }
        out.classification = bce / static_cast<double>(N);
    }
    out.total = weights.reconstruction * out.reconstruction +
                weights.consistency * out.consistency +
                weights.classification * out.classification;
    return out;
}

double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ValidationError("auc_score: size mismatch");
    std::vector<double> pos, neg;
    for (size_t i = 0; i < scores.size(); ++i)
        (labels[i] ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty())
        throw ValidationError("auc_score: both classes must be present");
    // rank-based Mann-Whitney; O(n log n)
    std::vector<std::pair<double, int>> all;
    all.reserve(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) all.emplace_back(scores[i], labels[i]);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k)
            if (all[k].second) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double n_pos = static_cast<double>(pos.size()), n_neg = static_cast<double>(neg.size());
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

namespace {

Metrics metrics_from_predictions(const std::vector<EvalTarget>& targets,
                                 const std::function<double(const Cell&)>& predict,
                                 const NormStats& stats, int64_t n_features) {
    if (targets.empty()) throw ValidationError("evaluate: no evaluation targets");
    Metrics m;
    m.per_feature_mae.assign(static_cast<size_t>(n_features), 0.0);
    std::vector<int64_t> per_feature_count(static_cast<size_t>(n_features), 0);
    double abs_err = 0.0, abs_truth = 0.0;
    for (const EvalTarget& tgt : targets) {
        const double pred = denormalize_value(stats, tgt.cell.feature, predict(tgt.cell));
        const double truth = denormalize_value(stats, tgt.cell.feature, tgt.truth);
        const double err = std::fabs(pred - truth);
        abs_err += err;
        abs_truth += std::fabs(truth);
        m.per_feature_mae[static_cast<size_t>(tgt.cell.feature)] += err;
        ++per_feature_count[static_cast<size_t>(tgt.cell.feature)];
    }
    m.evaluated_cells = static_cast<int64_t>(targets.size());
    m.mae = abs_err / static_cast<double>(targets.size());
    if (abs_truth > 0.0) m.mre = abs_err / abs_truth;
    for (size_t d = 0; d < m.per_feature_mae.size(); ++d)
        if (per_feature_count[d] > 0) m.per_feature_mae[d] /= static_cast<double>(per_feature_count[d]);
    return m;
}

}  // namespace

Metrics evaluate(ParamStore& params, const ModelConfig& config, const MedianGaps& tau,
                 const TimeSeriesBatch& view, const std::vector<EvalTarget>& targets,
                 const NormStats& stats) {
    const ModelOutput out = csai_predict(view, params, config, tau);
    Metrics m = metrics_from_predictions(
        targets,
        [&](const Cell& c) { return out.imputations(c.sample, c.step, c.feature); }, stats,
        view.n_features());
    if (view.has_labels()) {
        try {
            m.auc = auc_score(out.classification, view.labels);
        } catch (const ValidationError&) {
            // single-class validation split: AUC undefined, reported absent
        }
    }
    return m;
}

Metrics baseline_metrics(const TimeSeriesBatch& view, const std::vector<EvalTarget>& targets,
                         const NormStats& stats, BaselineKind kind) {
    auto linear_at = [&](const Cell& c) {
        // nearest observed neighbours in time, interpolated by timestamp
        int64_t prev = -1, next = -1;
        for (int64_t t = c.step - 1; t >= 0; --t)
            if (view.mask(c.sample, t, c.feature) != 0.0) {
                prev = t;
                break;
            }
        for (int64_t t = c.step + 1; t < view.n_steps(); ++t)
            if (view.mask(c.sample, t, c.feature) != 0.0) {
                next = t;
                break;
            }
        if (prev >= 0 && next >= 0) {
            const double s0 = view.timestamps(c.sample, prev), s1 = view.timestamps(c.sample, next);
            const double w = (view.timestamps(c.sample, c.step) - s0) / (s1 - s0);
            return (1.0 - w) * view.values(c.sample, prev, c.feature) +
                   w * view.values(c.sample, next, c.feature);
        }
        if (prev >= 0) return view.values(c.sample, prev, c.feature);
        if (next >= 0) return view.values(c.sample, next, c.feature);
        return 0.0;  // normalized feature mean
    };
    auto predict = [&](const Cell& c) -> double {
        switch (kind) {
            case BaselineKind::Mean: return 0.0;  // normalized scale
            case BaselineKind::Locf: return view.last_obs(c.sample, c.step, c.feature);
            case BaselineKind::Linear: return linear_at(c);
        }
        return 0.0;
    };
    return metrics_from_predictions(targets, predict, stats, view.n_features());
}

TrainResult train(const TrainConfig& config, const TimeSeriesBatch& train_split,
                  const TimeSeriesBatch& val_split, const NormStats& stats,
                  const MedianGaps& tau) {
    const int64_t n_train = train_split.n_samples();
    if (n_train == 0) throw ValidationError("train: empty training split");

    ParamStore store;
    std::mt19937_64 init_rng(mix_seed(config.seed, 1));
    add_csai_params(store, config.model, train_split.n_features(), train_split.n_steps(), init_rng);
    project_feature_regression(store);

    // fixed validation plan for stable epoch-to-epoch comparison
    const MaskPlan val_plan =
        plan_for_split(val_split, SplitRole::Val, config, mix_seed(config.seed, 2));
    auto [val_view, val_targets] = apply_mask_plan(val_split, val_plan);

    TrainResult result;
    result.best_params = store;
    AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8};
    int64_t adam_t = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const MaskPlan train_plan = plan_for_split(train_split, SplitRole::Train, config,
                                                   mix_seed(config.seed, 3, static_cast<uint64_t>(epoch)));
        auto [train_view, train_targets] = apply_mask_plan(train_split, train_plan);

        std::vector<int64_t> order(static_cast<size_t>(n_train));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(mix_seed(config.seed, 4, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0, epoch_recon = 0.0, epoch_cons = 0.0, epoch_cls = 0.0;
        int64_t n_batches = 0;
        for (int64_t start = 0; start < n_train; start += config.batch_size) {
            const int64_t end = std::min<int64_t>(start + config.batch_size, n_train);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
            const TimeSeriesBatch minibatch = subset(train_view, idx);

            Tape tape;
            ParamBinding binding(tape, store);
            ForwardResult fw = csai_forward(tape, binding, minibatch, config.model, tau);
            Var loss = tape.scale(fw.recon, config.weights.reconstruction);
            loss = tape.add(loss, tape.scale(fw.consistency, config.weights.consistency));
            if (fw.bce.valid())
                loss = tape.add(loss, tape.scale(fw.bce, config.weights.classification));

            const double loss_value = tape.value(loss)(0);
            if (!std::isfinite(loss_value)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << ", batch " << n_batches
                   << " (|params| = " << l2_norm(store) << ")";
                throw std::runtime_error(os.str());
            }
            epoch_loss += loss_value;
            epoch_recon += tape.value(fw.recon)(0);
            epoch_cons += tape.value(fw.consistency)(0);
            epoch_cls += fw.bce.valid() ? tape.value(fw.bce)(0) : 0.0;
            ++n_batches;

            store.zero_grads();
            tape.backward(loss);
            binding.harvest();
            project_feature_regression(store);  // keep diagonal gradients out of the update
            store.adam_step(adam, ++adam_t);
            project_feature_regression(store);
        }

        const Metrics val = evaluate(store, config.model, tau, val_view, val_targets, stats);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(std::max<int64_t>(n_batches, 1));
        rec.reconstruction = epoch_recon / static_cast<double>(std::max<int64_t>(n_batches, 1));
        rec.consistency = epoch_cons / static_cast<double>(std::max<int64_t>(n_batches, 1));
        rec.classification = epoch_cls / static_cast<double>(std::max<int64_t>(n_batches, 1));
        rec.val_mae = val.mae;
        result.history.push_back(rec);

        if (val.mae < result.best_val_mae) {
            result.best_val_mae = val.mae;
            result.best_epoch = epoch;
            result.best_params = store;
        } else if (epoch - result.best_epoch > config.patience) {
            break;
        }
    }
    if (config.epochs == 0) {
        result.best_params = store;
        result.best_epoch = -1;
    }
    return result;
}

CvReport cross_validate(const TrainConfig& config, const TimeSeriesBatch& dataset) {
    constexpr int kFolds = 5;
    const int64_t N = dataset.n_samples();
    std::vector<int64_t> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(config.seed, 10));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<int64_t>> folds(kFolds);
    for (int64_t i = 0; i < N; ++i)
        folds[static_cast<size_t>(i % kFolds)].push_back(order[static_cast<size_t>(i)]);
    for (auto& f : folds) {
        if (static_cast<int>(f.size()) < kFolds)
            throw ValidationError("cross_validate: fewer than 5 usable samples per fold");
        std::sort(f.begin(), f.end());
    }

    CvReport report;
    report.folds.resize(kFolds);
    parallel_tasks(kFolds, config.threads, [&](int64_t k) {
        const auto& test_idx = folds[static_cast<size_t>(k)];
        const auto& val_idx = folds[static_cast<size_t>((k + 1) % kFolds)];
        std::vector<int64_t> train_idx;
        for (int f = 0; f < kFolds; ++f)
            if (f != k && f != (k + 1) % kFolds)
                train_idx.insert(train_idx.end(), folds[static_cast<size_t>(f)].begin(),
                                 folds[static_cast<size_t>(f)].end());

        const TimeSeriesBatch train_raw = subset(dataset, train_idx);
        const NormStats stats = fit_normalizer(train_raw);
        const MedianGaps tau = compute_median_gaps(train_raw);
        const TimeSeriesBatch train_norm = apply_normalizer(train_raw, stats);
        const TimeSeriesBatch val_norm = apply_normalizer(subset(dataset, val_idx), stats);
        const TimeSeriesBatch test_norm = apply_normalizer(subset(dataset, test_idx), stats);

        TrainConfig fold_cfg = config;
        fold_cfg.seed = mix_seed(config.seed, 11, static_cast<uint64_t>(k));
        fold_cfg.threads = 1;
        TrainResult trained = train(fold_cfg, train_norm, val_norm, stats, tau);

        const MaskPlan test_plan = plan_for_split(test_norm, SplitRole::Test, fold_cfg,
                                                  mix_seed(config.seed, 12, static_cast<uint64_t>(k)));
        auto [test_view, test_targets] = apply_mask_plan(test_norm, test_plan);

        FoldResult fr;
        fr.fold = static_cast<int>(k);
        fr.test = evaluate(trained.best_params, config.model, tau, test_view, test_targets, stats);
        fr.baseline_mean = baseline_metrics(test_view, test_targets, stats, BaselineKind::Mean);
        fr.baseline_locf = baseline_metrics(test_view, test_targets, stats, BaselineKind::Locf);
        fr.baseline_linear = baseline_metrics(test_view, test_targets, stats, BaselineKind::Linear);
        fr.best_epoch = trained.best_epoch;
        fr.best_val_mae = trained.best_val_mae;
        fr.stats = stats;
        fr.history = trained.history;
        report.folds[static_cast<size_t>(k)] = std::move(fr);
    });

    std::vector<double> maes, mres, aucs, epochs;
    for (const FoldResult& f : report.folds) {
        maes.push_back(f.test.mae);
        if (f.test.mre) mres.push_back(*f.test.mre);
        if (f.test.auc) aucs.push_back(*f.test.auc);
        epochs.push_back(static_cast<double>(f.best_epoch));
    }
    accumulate_stat(maes, report.mae_mean, report.mae_std);
    if (mres.size() == report.folds.size()) {
        double m, s;
        accumulate_stat(mres, m, s);
        report.mre_mean = m;
        report.mre_std = s;
    }
    if (aucs.size() == report.folds.size()) {
        double m, s;
        accumulate_stat(aucs, m, s);
        report.auc_mean = m;
        report.auc_std = s;
    }
    double es;
    accumulate_stat(epochs, report.epochs_mean, es);
    return report;
}

AblationAxis parse_axis(const std::string& s) {
    if (s == "permutation") return AblationAxis::Permutations;
    if (s == "factor") return AblationAxis::Factors;
    if (s == "mask-mode") return AblationAxis::MaskModes;
    throw ValidationError("unknown ablation axis '" + s + "'");
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::Permutations: return "permutation";
        case AblationAxis::Factors: return "factor";
        case AblationAxis::MaskModes: return "mask-mode";
    }
    return "?";
}

std::vector<AblationRow> ablate(const TrainConfig& config, AblationAxis axis,
                                const std::vector<std::string>& values,
                                const TimeSeriesBatch& dataset) {
    std::vector<AblationRow> rows(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        TrainConfig arm = config;  // shared seed across arms
        switch (axis) {
            case AblationAxis::Permutations:
                arm.permutation = parse_permutation(values[i]);
                break;
            case AblationAxis::Factors:
                try {
                    arm.adjust_factor = std::stod(values[i]);
                } catch (...) {
                    throw ValidationError("ablate: factor value '" + values[i] + "' is not a number");
                }
                if (arm.adjust_factor < 0) throw ValidationError("ablate: factor must be nonnegative");
                break;
            case AblationAxis::MaskModes:
                if (values[i] == "corrected")
                    arm.mask_mode = MaskMode::Corrected;
                else if (values[i] == "legacy")
                    arm.mask_mode = MaskMode::Legacy;
                else
                    throw ValidationError("ablate: unknown mask mode '" + values[i] + "'");
                break;
        }
        rows[i].axis_value = values[i];
        rows[i].config = arm;
    }
    // arms in parallel only when folds are not already saturating the pool
    for (auto& row : rows) row.report = cross_validate(row.config, dataset);
    return rows;
}

}  // namespace csai
