#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csai/tsdata.hpp"

namespace csai {

enum class MaskStrategy { UniformCorrected, UniformLegacy, NonUniform };
enum class MaskMode { Corrected, Legacy };
enum class SplitRole { Train, Val, Test };
enum class MaskPermutation { All, TrainOnly, ValOnly, TestOnly, ValTest, None };

std::string to_string(MaskStrategy s);
std::string to_string(MaskPermutation p);
MaskStrategy parse_strategy(const std::string& s);
MaskPermutation parse_permutation(const std::string& s);

struct Cell {
    int64_t sample = 0, step = 0, feature = 0;
    auto operator<=>(const Cell&) const = default;
};

/// A set of observed cells to hide. Cells are sorted and distinct, so equal
/// plans serialize to identical JSON.
struct MaskPlan {
    MaskStrategy strategy = MaskStrategy::UniformCorrected;
    double target_rate = 0.0;    // U
    double adjust_factor = 0.0;  // I, only meaningful for non-uniform plans
    uint64_t seed = 0;
    std::vector<Cell> cells;

    std::string to_json() const;
    static MaskPlan from_json(const std::string& text);
};

struct MissingDistribution {
    std::vector<double> p_dist;  // per-feature missing fraction
    std::vector<int64_t> n_obs;  // per-feature observed count
};

struct EvalTarget {
    Cell cell;
    double truth = 0.0;
};

struct MaskAudit {
    double realized_rate = 0.0;  // planned cells / observed cells
    std::vector<double> per_feature_rate;
    double deviation = 0.0;  // realized_rate - target
    double pearson_rate_vs_pdist = 0.0;
    double spearman_rate_vs_pdist = 0.0;
};

MissingDistribution feature_missing_distribution(const TimeSeriesBatch& dataset);

/// Corrected mode hides exactly round(U * n_observed) observed cells.
/// Legacy mode reproduces the historical flaw: the same count is drawn over
/// *all* cells and only the observed hits survive, so the realized rate
/// drops by the observed fraction.
MaskPlan plan_uniform_mask(const Tensor& mask, double target_rate, uint64_t seed,
                           MaskMode mode = MaskMode::Corrected);

/// Per-feature rates r(d) = U * w(d) / Wbar with w(d) = 1 + I*p_dist(d) and
/// Wbar the observation-weighted mean of w; rates are capped at 1 with the
/// excess redistributed, and counts apportioned by largest remainder so the
/// total equals round(U * total observed).
MaskPlan plan_nonuniform_mask(const Tensor& mask, double target_rate, double adjust_factor,
                              const MissingDistribution& dist, uint64_t seed);

std::pair<TimeSeriesBatch, std::vector<EvalTarget>> apply_mask_plan(const TimeSeriesBatch& batch,
                                                                    const MaskPlan& plan);

MaskAudit audit_mask_plan(const MaskPlan& plan, const Tensor& mask);

MaskStrategy select_split_policy(MaskPermutation permutation, SplitRole split);

}  // namespace csai
