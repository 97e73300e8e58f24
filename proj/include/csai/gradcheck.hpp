#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csai/params.hpp"

namespace csai {

struct GradCheckReport {
    double max_rel_error = 0.0;
    int n_probes = 0;
    bool pass = false;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central-difference verification of analytic gradients.
///
/// loss_fn must evaluate the (deterministic) loss without touching grads;
/// grad_fn must fill store.grad for the same loss. For each probed scalar
/// parameter the relative error is |a - n| / max(|a|, |n|, floor), with a
/// small floor so nearly-dead units do not drown the report in noise.
GradCheckReport finite_difference_check(const std::function<double(ParamStore&)>& loss_fn,
                                        const std::function<void(ParamStore&)>& grad_fn,
                                        ParamStore& store, int n_probes, double h, double tol,
                                        uint64_t seed, double floor = 1e-6);

}  // namespace csai
