#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "csai/masking.hpp"
#include "csai/model.hpp"
#include "csai/params.hpp"
#include "csai/tsdata.hpp"

namespace csai {

/// Deterministic seed derivation for independent RNG streams.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

struct LossWeights {
    double reconstruction = 1.0;
    double consistency = 0.1;    // lambda_c
    double classification = 1.0; // lambda_y
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    double learning_rate = 1e-3;
    LossWeights weights;
    double mask_rate = 0.1;    // U
    double adjust_factor = 5;  // I, used where the policy selects non-uniform
    MaskPermutation permutation = MaskPermutation::TrainOnly;
    MaskMode mask_mode = MaskMode::Corrected;
    uint64_t seed = 0;
    int patience = 20;  // early stopping on validation MAE
    int threads = 1;    // fold/arm parallelism
    ModelConfig model;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct Metrics {
    double mae = 0.0;
    std::optional<double> mre;
    std::optional<double> auc;
    std::vector<double> per_feature_mae;
    int64_t evaluated_cells = 0;
};

struct LossBreakdown {
    double total = 0.0;
    double reconstruction = 0.0;
    double consistency = 0.0;
    double classification = 0.0;
};

/// Recomputes the three loss terms from the model output streams; the tape
/// loss used in training must agree with this to roundoff.
LossBreakdown compute_loss(const ModelOutput& output, const TimeSeriesBatch& batch,
                           const LossWeights& weights);

/// Mann-Whitney statistic with ties counted 1/2; throws on single-class input.
double auc_score(const std::vector<double>& scores, const std::vector<int>& labels);

/// MAE/MRE over the artificially masked cells, in denormalized units.
Metrics evaluate(ParamStore& params, const ModelConfig& config, const MedianGaps& tau,
                 const TimeSeriesBatch& view, const std::vector<EvalTarget>& targets,
                 const NormStats& stats);

enum class BaselineKind { Mean, Locf, Linear };
Metrics baseline_metrics(const TimeSeriesBatch& view, const std::vector<EvalTarget>& targets,
                         const NormStats& stats, BaselineKind kind);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double reconstruction = 0.0;
    double consistency = 0.0;
    double classification = 0.0;
    double val_mae = 0.0;
};

struct TrainResult {
    ParamStore best_params;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::infinity();
};

/// Both batches must already be normalized with stats fitted on the training
/// split. A fresh training mask is planned every epoch; the validation plan
/// is fixed. Keeps the parameters from the epoch with the lowest validation
/// MAE.
TrainResult train(const TrainConfig& config, const TimeSeriesBatch& train_split,
                  const TimeSeriesBatch& val_split, const NormStats& stats,
                  const MedianGaps& tau);

struct FoldResult {
    int fold = 0;
    Metrics test;
    Metrics baseline_mean;
    Metrics baseline_locf;
    Metrics baseline_linear;
    int best_epoch = -1;
    double best_val_mae = 0.0;
    NormStats stats;
    std::vector<EpochRecord> history;
};

struct CvReport {
    std::vector<FoldResult> folds;
    double mae_mean = 0.0, mae_std = 0.0;
    std::optional<double> mre_mean, mre_std;
    std::optional<double> auc_mean, auc_std;
    double epochs_mean = 0.0;
};

/// 5-fold cross-validation with rotating train/val/test roles; normalizer
/// and median gaps are refit on each fold's training portion.
CvReport cross_validate(const TrainConfig& config, const TimeSeriesBatch& dataset);

enum class AblationAxis { Permutations, Factors, MaskModes };
AblationAxis parse_axis(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationRow {
    std::string axis_value;
    TrainConfig config;
    CvReport report;
};

std::vector<AblationRow> ablate(const TrainConfig& config, AblationAxis axis,
                                const std::vector<std::string>& values,
                                const TimeSeriesBatch& dataset);

}  // namespace csai
