#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csai/tensor.hpp"

namespace csai {

/// Bad input data or configuration; the CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One batch of incomplete multivariate series. Immutable by convention:
/// every transformation returns a new batch. Values at mask==0 cells are
/// kept at 0 so that accidental reads are conspicuous.
struct TimeSeriesBatch {
    Tensor values;      // [N,T,D]
    Tensor mask;        // [N,T,D], 1 = observed
    Tensor timestamps;  // [N,T], strictly increasing per sample
    Tensor delta;       // [N,T,D], hours since last observation
    Tensor last_obs;    // [N,T,D], last observed value carried forward
    std::vector<int> labels;  // empty, or one 0/1 label per sample

    bool has_labels() const { return !labels.empty(); }
    int64_t n_samples() const { return values.shape.empty() ? 0 : values.shape[0]; }
    int64_t n_steps() const { return values.shape.size() < 2 ? 0 : values.shape[1]; }
    int64_t n_features() const { return values.shape.size() < 3 ? 0 : values.shape[2]; }
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::string fitted_on;
    std::vector<std::string> warnings;
};

struct MedianGaps {
    std::vector<double> tau;  // hours, one per feature
};

struct SplitIndices {
    std::vector<int64_t> train, val, test;
};

/// Time-gap recursion for one series: delta[0]=0; for t>0 the raw gap is
/// added to the running gap when the previous step was missing, otherwise
/// the gap resets.
std::vector<double> compute_delta(const std::vector<double>& timestamps,
                                  const std::vector<int>& mask);

Tensor build_last_observation(const Tensor& values, const Tensor& mask,
                              const std::vector<double>& fill);

/// Recomputes delta and last_obs from values/mask/timestamps (fill = 0).
/// Throws ValidationError naming the sample on non-increasing timestamps.
void populate_indicators(TimeSeriesBatch& batch);

MedianGaps compute_median_gaps(const TimeSeriesBatch& train);

SplitIndices split_dataset(const TimeSeriesBatch& dataset, const std::array<double, 3>& ratios,
                           uint64_t seed);

NormStats fit_normalizer(const TimeSeriesBatch& train);
TimeSeriesBatch apply_normalizer(const TimeSeriesBatch& batch, const NormStats& stats);
inline double denormalize_value(const NormStats& s, int64_t d, double v) {
    return v * s.std[static_cast<size_t>(d)] + s.mean[static_cast<size_t>(d)];
}

TimeSeriesBatch subset(const TimeSeriesBatch& batch, const std::vector<int64_t>& indices);

/// Time-reversed copy: values/mask reversed, timestamps remapped so they
/// stay strictly increasing from 0, delta and last_obs recomputed.
TimeSeriesBatch reverse_time(const TimeSeriesBatch& batch);

struct SyntheticConfig {
    int64_t n_samples = 200;
    int64_t n_steps = 24;
    int64_t n_features = 8;
    std::vector<double> missing_rates;  // per feature; single value broadcasts
    double mnar_coupling = 1.0;         // 0 = missing completely at random
    double base_gap_hours = 1.0;
    double temporal_corr = 0.9;  // latent AR correlation across one base gap
    double cross_corr = 0.7;     // loading on the shared factor
    double label_noise = 0.25;

    std::string to_json() const;
    static SyntheticConfig from_json(const std::string& text);
};

struct SyntheticDataset {
    TimeSeriesBatch batch;  // MNAR view; values zeroed where missing
    Tensor ground_truth;    // [N,T,D] complete values
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config, uint64_t seed);

/// Delimited-text ingestion: header `sample_id,time,<features...>[,label]`,
/// empty cell = missing. Errors carry 1-based line numbers.
TimeSeriesBatch load_table(const std::string& path,
                           const std::vector<std::string>& expected_features = {});

void write_table(const std::string& path, const Tensor& values, const Tensor& mask,
                 const Tensor& timestamps, const std::vector<int>& labels,
                 const std::vector<std::string>& feature_names = {});

}  // namespace csai
