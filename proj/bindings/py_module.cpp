#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include "csai/cli.hpp"
#include "csai/masking.hpp"
#include "csai/model.hpp"
#include "csai/report.hpp"
#include "csai/trainer.hpp"
#include "csai/tsdata.hpp"

namespace py = pybind11;
using namespace csai;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Tensor t;
    t.shape.assign(a.shape(), a.shape() + a.ndim());
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

TimeSeriesBatch make_batch(const py::array_t<double>& values, const py::array_t<double>& mask,
                           const py::array_t<double>& timestamps,
                           const std::vector<int>& labels) {
    TimeSeriesBatch b;
    b.values = array_to_tensor(values);
    b.mask = array_to_tensor(mask);
    b.timestamps = array_to_tensor(timestamps);
    b.labels = labels;
    populate_indicators(b);
    return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Conditional self-attention imputation for incomplete multivariate time series";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

    py::class_<TimeSeriesBatch>(m, "TimeSeriesBatch")
        .def(py::init(&make_batch), py::arg("values"), py::arg("mask"), py::arg("timestamps"),
             py::arg("labels") = std::vector<int>{})
        .def_property_readonly("values", [](const TimeSeriesBatch& b) { return tensor_to_array(b.values); })
        .def_property_readonly("mask", [](const TimeSeriesBatch& b) { return tensor_to_array(b.mask); })
        .def_property_readonly("timestamps",
                               [](const TimeSeriesBatch& b) { return tensor_to_array(b.timestamps); })
        .def_property_readonly("delta", [](const TimeSeriesBatch& b) { return tensor_to_array(b.delta); })
        .def_property_readonly("last_obs",
                               [](const TimeSeriesBatch& b) { return tensor_to_array(b.last_obs); })
        .def_property_readonly("labels", [](const TimeSeriesBatch& b) { return b.labels; })
        .def_property_readonly("n_samples", &TimeSeriesBatch::n_samples)
        .def_property_readonly("n_steps", &TimeSeriesBatch::n_steps)
        .def_property_readonly("n_features", &TimeSeriesBatch::n_features);

    m.def(
        "compute_delta",
        [](const std::vector<double>& ts, const std::vector<int>& mask) {
            return compute_delta(ts, mask);
        },
        py::arg("timestamps"), py::arg("mask"));

    m.def(
        "generate_synthetic",
        [](const std::string& config_json, uint64_t seed) {
            const SyntheticDataset d = generate_synthetic(SyntheticConfig::from_json(config_json), seed);
            return py::make_tuple(d.batch, tensor_to_array(d.ground_truth));
        },
        py::arg("config_json"), py::arg("seed"));

    m.def("load_table", &load_table, py::arg("path"),
          py::arg("expected_features") = std::vector<std::string>{});

    m.def(
        "fit_normalizer",
        [](const TimeSeriesBatch& train) {
            const NormStats s = fit_normalizer(train);
            return py::make_tuple(s.mean, s.std, s.warnings);
        },
        py::arg("train"));

    m.def(
        "apply_normalizer",
        [](const TimeSeriesBatch& b, const std::vector<double>& mean, const std::vector<double>& std) {
            NormStats s;
            s.mean = mean;
            s.std = std;
            s.fitted_on = "train";
            return apply_normalizer(b, s);
        },
        py::arg("batch"), py::arg("mean"), py::arg("std"));

    m.def(
        "compute_median_gaps",
        [](const TimeSeriesBatch& train) { return compute_median_gaps(train).tau; },
        py::arg("train"));

    py::class_<MaskPlan>(m, "MaskPlan")
        .def_property_readonly("strategy", [](const MaskPlan& p) { return to_string(p.strategy); })
        .def_readonly("target_rate", &MaskPlan::target_rate)
        .def_readonly("adjust_factor", &MaskPlan::adjust_factor)
        .def_readonly("seed", &MaskPlan::seed)
        .def_property_readonly("cells",
                               [](const MaskPlan& p) {
                                   std::vector<std::tuple<int64_t, int64_t, int64_t>> cells;
                                   for (const Cell& c : p.cells)
                                       cells.emplace_back(c.sample, c.step, c.feature);
                                   return cells;
                               })
        .def("to_json", &MaskPlan::to_json)
        .def_static("from_json", &MaskPlan::from_json);

    m.def(
        "plan_uniform_mask",
        [](const py::array_t<double>& mask, double rate, uint64_t seed, const std::string& mode) {
            return plan_uniform_mask(array_to_tensor(mask), rate, seed,
                                     mode == "legacy" ? MaskMode::Legacy : MaskMode::Corrected);
        },
        py::arg("mask"), py::arg("target_rate"), py::arg("seed"), py::arg("mode") = "corrected");

    m.def(
        "plan_nonuniform_mask",
        [](const py::array_t<double>& mask, double rate, double factor,
           const std::vector<double>& p_dist, uint64_t seed) {
            MissingDistribution dist;
            dist.p_dist = p_dist;
            dist.n_obs.assign(p_dist.size(), 0);
            return plan_nonuniform_mask(array_to_tensor(mask), rate, factor, dist, seed);
        },
        py::arg("mask"), py::arg("target_rate"), py::arg("adjust_factor"), py::arg("p_dist"),
        py::arg("seed"));

    m.def(
        "apply_mask_plan",
        [](const TimeSeriesBatch& b, const MaskPlan& plan) {
            auto [view, targets] = apply_mask_plan(b, plan);
            std::vector<std::tuple<int64_t, int64_t, int64_t, double>> t;
            for (const EvalTarget& e : targets)
                t.emplace_back(e.cell.sample, e.cell.step, e.cell.feature, e.truth);
            return py::make_tuple(view, t);
        },
        py::arg("batch"), py::arg("plan"));

    m.def(
        "audit_mask_plan",
        [](const MaskPlan& plan, const py::array_t<double>& mask) {
            const MaskAudit a = audit_mask_plan(plan, array_to_tensor(mask));
            py::dict d;
            d["realized_rate"] = a.realized_rate;
            d["per_feature_rate"] = a.per_feature_rate;
            d["deviation"] = a.deviation;
            d["pearson_rate_vs_pdist"] = a.pearson_rate_vs_pdist;
            d["spearman_rate_vs_pdist"] = a.spearman_rate_vs_pdist;
            return d;
        },
        py::arg("plan"), py::arg("mask"));

    m.def("run_cli", &run, py::arg("args"),
          "Run the command-line interface; returns the exit code.");

    m.def(
        "train_and_report",
        [](const std::string& experiment_config_json) {
            const ExperimentConfig cfg =
                ExperimentConfig::from_json(nlohmann::json::parse(experiment_config_json));
            Pipeline p = prepare_pipeline(cfg);
            const TrainResult r = train(cfg.training, p.train_norm, p.val_norm, p.stats, p.tau);
            ParamStore best = r.best_params;
            const MaskPlan plan = plan_uniform_mask(p.test_norm.mask, cfg.training.mask_rate,
                                                    mix_seed(cfg.seed, 201));
            auto [view, targets] = apply_mask_plan(p.test_norm, plan);
            const Metrics model = evaluate(best, cfg.training.model, p.tau, view, targets, p.stats);
            const Metrics mean = baseline_metrics(view, targets, p.stats, BaselineKind::Mean);
            const Metrics locf = baseline_metrics(view, targets, p.stats, BaselineKind::Locf);
            py::dict d;
            d["val_mae"] = r.best_val_mae;
            d["best_epoch"] = r.best_epoch;
            d["test_mae"] = model.mae;
            d["baseline_mean_mae"] = mean.mae;
            d["baseline_locf_mae"] = locf.mae;
            return d;
        },
        py::arg("experiment_config_json"),
        "Train on a single split and return test metrics next to trivial baselines.");
}
