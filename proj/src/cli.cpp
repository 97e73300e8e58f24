#include "csai/cli.hpp"

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "csai/report.hpp"

namespace csai {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

MaskPlan plan_split(const TimeSeriesBatch& split, SplitRole role, const TrainConfig& cfg,
                    uint64_t seed) {
    if (select_split_policy(cfg.permutation, role) == MaskStrategy::NonUniform)
        return plan_nonuniform_mask(split.mask, cfg.mask_rate, cfg.adjust_factor,
                                    feature_missing_distribution(split), seed);
    return plan_uniform_mask(split.mask, cfg.mask_rate, seed, cfg.mask_mode);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

ojson audit_to_json(const MaskAudit& audit) {
    ojson j;
    j["realized_rate"] = audit.realized_rate;
    j["per_feature_rate"] = audit.per_feature_rate;
    j["deviation"] = audit.deviation;
    j["pearson_rate_vs_pdist"] = audit.pearson_rate_vs_pdist;
    j["spearman_rate_vs_pdist"] = audit.spearman_rate_vs_pdist;
    return j;
}

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    std::optional<uint64_t> seed_override;
    std::optional<int> epochs_override;
    std::optional<int> threads_override;
};

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg = ExperimentConfig::load(opts.config_path);
    if (opts.seed_override) {
        cfg.seed = *opts.seed_override;
        cfg.training.seed = *opts.seed_override;
    }
    if (opts.epochs_override) cfg.training.epochs = *opts.epochs_override;
    if (opts.threads_override) cfg.training.threads = *opts.threads_override;
    if (!opts.out_override.empty()) cfg.output_dir = opts.out_override;
    if (const char* env_out = std::getenv("CSAI_OUTPUT_DIR"); env_out && opts.out_override.empty())
        cfg.output_dir = env_out;
    if (const char* env_thr = std::getenv("CSAI_THREADS"); env_thr && !opts.threads_override)
        cfg.training.threads = std::stoi(env_thr);
    return cfg;
}

int cmd_generate(const ExperimentConfig& cfg) {
    if (!cfg.synthetic) throw ValidationError("generate: config has no synthetic dataset block");
    const SyntheticDataset data = generate_synthetic(*cfg.synthetic, mix_seed(cfg.seed, 100));
    ensure_dir(cfg.output_dir);
    write_table(cfg.output_dir + "/data.csv", data.batch.values, data.batch.mask,
                data.batch.timestamps, data.batch.labels);
    const Tensor ones = Tensor::full(data.ground_truth.shape, 1.0);
    write_table(cfg.output_dir + "/truth.csv", data.ground_truth, ones, data.batch.timestamps,
                data.batch.labels);

    const MissingDistribution dist = feature_missing_distribution(data.batch);
    ojson manifest;
    manifest["kind"] = "dataset";
    manifest["config"] = cfg.to_json();
    manifest["n_samples"] = data.batch.n_samples();
    manifest["n_steps"] = data.batch.n_steps();
    manifest["n_features"] = data.batch.n_features();
    manifest["missing_rates"] = dist.p_dist;
    manifest["files"] = {{"data", "data.csv"}, {"truth", "truth.csv"}};
    write_text_file(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << cfg.output_dir << "/data.csv (" << data.batch.n_samples()
              << " samples)\n";
    return 0;
}

int cmd_preprocess(const ExperimentConfig& cfg) {
    Pipeline p = prepare_pipeline(cfg);
    ensure_dir(cfg.output_dir);
    ojson splits;
    splits["train"] = p.splits.train;
    splits["val"] = p.splits.val;
    splits["test"] = p.splits.test;
    write_text_file(cfg.output_dir + "/splits.json", splits.dump(2) + "\n");
    ojson stats;
    stats["mean"] = p.stats.mean;
    stats["std"] = p.stats.std;
    stats["fitted_on"] = p.stats.fitted_on;
    stats["warnings"] = p.stats.warnings;
    write_text_file(cfg.output_dir + "/norm_stats.json", stats.dump(2) + "\n");
    ojson gaps;
    gaps["tau"] = p.tau.tau;
    write_text_file(cfg.output_dir + "/median_gaps.json", gaps.dump(2) + "\n");
    std::cout << "wrote splits, normalizer stats and median gaps to " << cfg.output_dir << "\n";
    return 0;
}

int cmd_mask(const ExperimentConfig& cfg) {
    Pipeline p = prepare_pipeline(cfg);
    ensure_dir(cfg.output_dir);
    const std::array<std::pair<const char*, SplitRole>, 3> roles = {
        {{"train", SplitRole::Train}, {"val", SplitRole::Val}, {"test", SplitRole::Test}}};
    const std::array<const TimeSeriesBatch*, 3> batches = {&p.train_norm, &p.val_norm, &p.test_norm};
    for (size_t i = 0; i < roles.size(); ++i) {
        const MaskPlan plan = plan_split(*batches[i], roles[i].second, cfg.training,
                                         mix_seed(cfg.seed, 200, i));
        write_text_file(cfg.output_dir + "/plan_" + roles[i].first + ".json",
                        plan.to_json() + "\n");
    }
    std::cout << "wrote mask plans to " << cfg.output_dir << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, bool cross_validation) {
    ensure_dir(cfg.output_dir);
    ojson results;
    if (cross_validation) {
        Pipeline p = prepare_pipeline(cfg);
        const CvReport report = cross_validate(cfg.training, p.dataset);
        results["kind"] = "cross_validation";
        results["config"] = cfg.to_json();
        results["report"] = cv_report_to_json(report);
    } else {
        Pipeline p = prepare_pipeline(cfg);
        const TrainResult trained =
            train(cfg.training, p.train_norm, p.val_norm, p.stats, p.tau);
        trained.best_params.save(cfg.output_dir + "/checkpoint.bin");

        const MaskPlan test_plan =
            plan_split(p.test_norm, SplitRole::Test, cfg.training, mix_seed(cfg.seed, 201));
        auto [test_view, test_targets] = apply_mask_plan(p.test_norm, test_plan);
        ParamStore best = trained.best_params;
        FoldResult fold;
        fold.fold = -1;
        fold.test = evaluate(best, cfg.training.model, p.tau, test_view, test_targets, p.stats);
        fold.baseline_mean = baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Mean);
        fold.baseline_locf = baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Locf);
        fold.baseline_linear =
            baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Linear);
        fold.best_epoch = trained.best_epoch;
        fold.best_val_mae = trained.best_val_mae;
        fold.history = trained.history;

        results["kind"] = "train";
        results["config"] = cfg.to_json();
        results["result"] = fold_to_json(fold);
    }
    emit_report(results, "json", cfg.output_dir + "/report.json");
    emit_report(results, "table", cfg.output_dir + "/report.csv");
    emit_series(results, cfg.output_dir);
    std::cout << "wrote report to " << cfg.output_dir << "/report.json\n";
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint) {
    Pipeline p = prepare_pipeline(cfg);
    ParamStore params = ParamStore::load(checkpoint);
    const MaskPlan test_plan =
        plan_split(p.test_norm, SplitRole::Test, cfg.training, mix_seed(cfg.seed, 201));
    auto [test_view, test_targets] = apply_mask_plan(p.test_norm, test_plan);
    ensure_dir(cfg.output_dir);
    ojson out;
    out["kind"] = "evaluate";
    out["config"] = cfg.to_json();
    out["model"] = metrics_to_json(
        evaluate(params, cfg.training.model, p.tau, test_view, test_targets, p.stats));
    out["baselines"]["mean"] =
        metrics_to_json(baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Mean));
    out["baselines"]["locf"] =
        metrics_to_json(baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Locf));
    out["baselines"]["linear"] =
        metrics_to_json(baseline_metrics(test_view, test_targets, p.stats, BaselineKind::Linear));
    write_text_file(cfg.output_dir + "/metrics.json", out.dump(2) + "\n");
    std::cout << "wrote " << cfg.output_dir << "/metrics.json\n";
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& axis_name,
               const std::string& values_csv) {
    const AblationAxis axis = parse_axis(axis_name);
    std::vector<std::string> values;
    std::string cur;
    for (char c : values_csv) {
        if (c == ',') {
            values.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) values.push_back(cur);
    if (values.empty()) throw ValidationError("ablate: no axis values given");

    Pipeline p = prepare_pipeline(cfg);
    const std::vector<AblationRow> rows = ablate(cfg.training, axis, values, p.dataset);
    ensure_dir(cfg.output_dir);
    ojson results = ablation_to_json(axis, rows);
    results["config"] = cfg.to_json();
    emit_report(results, "json", cfg.output_dir + "/ablation.json");
    emit_report(results, "table", cfg.output_dir + "/ablation.csv");
    emit_series(results, cfg.output_dir);
    std::cout << "wrote ablation report (" << rows.size() << " arms) to " << cfg.output_dir
              << "\n";
    return 0;
}

int cmd_audit(const ExperimentConfig& cfg, const std::string& plan_path,
              const std::string& split_name) {
    Pipeline p = prepare_pipeline(cfg);
    const TimeSeriesBatch* split = nullptr;
    if (split_name == "train")
        split = &p.train_norm;
    else if (split_name == "val")
        split = &p.val_norm;
    else if (split_name == "test")
        split = &p.test_norm;
    else
        throw ValidationError("audit: split must be train, val or test");
    const MaskPlan plan = MaskPlan::from_json(read_text_file(plan_path));
    const MaskAudit audit = audit_mask_plan(plan, split->mask);
    ensure_dir(cfg.output_dir);
    ojson out;
    out["kind"] = "audit";
    out["split"] = split_name;
    out["plan_strategy"] = to_string(plan.strategy);
    out["target_rate"] = plan.target_rate;
    out["audit"] = audit_to_json(audit);
    write_text_file(cfg.output_dir + "/audit.json", out.dump(2) + "\n");
    std::cout << "realized rate " << audit.realized_rate << " vs target " << plan.target_rate
              << "\n";
    return 0;
}

int cmd_report(const std::string& results_path, const std::string& format,
               const std::string& out_path) {
    const ojson results = ojson::parse(read_text_file(results_path));
    emit_report(results, format, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

ojson ExperimentConfig::to_json() const {
    ojson j;
    j["seed"] = seed;
    if (synthetic)
        j["dataset"]["synthetic"] = ojson::parse(synthetic->to_json());
    else
        j["dataset"]["table"] = table_path;
    j["split"] = {{"train", split[0]}, {"val", split[1]}, {"test", split[2]}};
    j["training"] = ojson::parse(training.to_json());
    j["output_dir"] = output_dir;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (!j.contains("seed")) throw ValidationError("config: seed is mandatory");
    c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        if (d.contains("synthetic"))
            c.synthetic = SyntheticConfig::from_json(d["synthetic"].dump());
        else if (d.contains("table"))
            c.table_path = d["table"].get<std::string>();
        else
            throw ValidationError("config: dataset must contain 'synthetic' or 'table'");
    } else {
        c.synthetic = SyntheticConfig{};
    }
    if (j.contains("split")) {
        c.split[0] = j["split"].value("train", 0.8);
        c.split[1] = j["split"].value("val", 0.1);
        c.split[2] = j["split"].value("test", 0.1);
    }
    if (j.contains("training")) c.training = TrainConfig::from_json(j["training"].dump());
    c.training.seed = c.seed;  // all randomness flows from the config seed
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    return from_json(j);
}

Pipeline prepare_pipeline(const ExperimentConfig& config) {
    Pipeline p;
    if (config.synthetic) {
        p.dataset = generate_synthetic(*config.synthetic, mix_seed(config.seed, 100)).batch;
    } else {
        p.dataset = load_table(config.table_path);
    }
    p.splits = split_dataset(p.dataset, config.split, mix_seed(config.seed, 101));
    const TimeSeriesBatch train_raw = subset(p.dataset, p.splits.train);
    p.stats = fit_normalizer(train_raw);
    p.tau = compute_median_gaps(train_raw);
    p.train_norm = apply_normalizer(train_raw, p.stats);
    p.val_norm = apply_normalizer(subset(p.dataset, p.splits.val), p.stats);
    p.test_norm = apply_normalizer(subset(p.dataset, p.splits.test), p.stats);
    return p;
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"CSAI: conditional self-attention imputation for incomplete time series"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool cv = false;
    std::string checkpoint, axis, values, plan_path, split_name = "train";
    std::string results_path, format = "table", out_path;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        sub->add_option("--config", opts.config_path, "experiment config (JSON)")
            ->required(needs_config);
        sub->add_option("--out", opts.out_override, "override output directory");
        sub->add_option("--seed", opts.seed_override, "override config seed");
        sub->add_option("--epochs", opts.epochs_override, "override training epochs");
        sub->add_option("--threads", opts.threads_override, "override worker threads");
    };

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset and manifest");
    add_common(generate);
    CLI::App* preprocess =
        app.add_subcommand("preprocess", "split, fit normalizer and median gaps");
    add_common(preprocess);
    CLI::App* mask = app.add_subcommand("mask", "plan artificial masks for every split");
    add_common(mask);
    CLI::App* train_cmd = app.add_subcommand("train", "train and evaluate on the test split");
    add_common(train_cmd);
    train_cmd->add_flag("--cv", cv, "run 5-fold cross-validation instead of a single split");
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--checkpoint", checkpoint, "parameter checkpoint")->required();
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "sweep one experiment axis");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--axis", axis, "permutation | factor | mask-mode")->required();
    ablate_cmd->add_option("--values", values, "comma-separated axis values")->required();
    CLI::App* audit_cmd = app.add_subcommand("audit", "audit a mask plan against a split");
    add_common(audit_cmd);
    audit_cmd->add_option("--plan", plan_path, "mask plan JSON")->required();
    audit_cmd->add_option("--split", split_name, "train | val | test");
    CLI::App* report_cmd = app.add_subcommand("report", "re-emit a results file");
    report_cmd->add_option("--results", results_path, "results JSON")->required();
    report_cmd->add_option("--format", format, "json | table");
    report_cmd->add_option("--out", out_path, "output path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (report_cmd->parsed()) return cmd_report(results_path, format, out_path);
        const ExperimentConfig cfg = resolve_config(opts);
        if (generate->parsed()) return cmd_generate(cfg);
        if (preprocess->parsed()) return cmd_preprocess(cfg);
        if (mask->parsed()) return cmd_mask(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg, cv);
        if (evaluate_cmd->parsed()) return cmd_evaluate(cfg, checkpoint);
        if (ablate_cmd->parsed()) return cmd_ablate(cfg, axis, values);
        if (audit_cmd->parsed()) return cmd_audit(cfg, plan_path, split_name);
        std::cerr << app.help();
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace csai
