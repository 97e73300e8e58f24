#include "csai/gradcheck.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace csai {

GradCheckReport finite_difference_check(const std::function<double(ParamStore&)>& loss_fn,
                                        const std::function<void(ParamStore&)>& grad_fn,
                                        ParamStore& store, int n_probes, double h, double tol,
                                        uint64_t seed, double floor) {
    if (store.scalar_count() == 0) throw std::invalid_argument("finite_difference_check: empty store");

    store.zero_grads();
    grad_fn(store);

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick_entry(0, store.size() - 1);

    GradCheckReport report;
    report.n_probes = n_probes;
    for (int p = 0; p < n_probes; ++p) {
        size_t ei = pick_entry(rng);
        while (store.entry(ei).value.numel() == 0) ei = pick_entry(rng);
        auto& e = store.entry(ei);
        std::uniform_int_distribution<int64_t> pick_idx(0, e.value.numel() - 1);
        const int64_t idx = pick_idx(rng);

        const double saved = e.value.data[static_cast<size_t>(idx)];
        e.value.data[static_cast<size_t>(idx)] = saved + h;
        const double f_plus = loss_fn(store);
        e.value.data[static_cast<size_t>(idx)] = saved - h;
        const double f_minus = loss_fn(store);
        e.value.data[static_cast<size_t>(idx)] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw std::runtime_error("finite_difference_check: non-finite loss at probe of " + e.name);

        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double analytic = e.grad.data[static_cast<size_t>(idx)];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
        const double rel = std::fabs(analytic - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param = e.name;
            report.worst_index = idx;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

}  // namespace csai
