#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "csai/trainer.hpp"
#include "csai/tsdata.hpp"
#include "json.hpp"

namespace csai {

/// One config file drives an entire experiment; flags only override fields.
struct ExperimentConfig {
    uint64_t seed = 0;
    std::optional<SyntheticConfig> synthetic;
    std::string table_path;  // used when no synthetic block is present
    std::array<double, 3> split{0.8, 0.1, 0.1};
    TrainConfig training;
    std::string output_dir = "out";

    nlohmann::ordered_json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
};

/// Everything the subcommands need, derived deterministically from the
/// config: raw dataset, split indices, leakage-safe stats, normalized splits.
struct Pipeline {
    TimeSeriesBatch dataset;
    SplitIndices splits;
    NormStats stats;
    MedianGaps tau;
    TimeSeriesBatch train_norm, val_norm, test_norm;
};

Pipeline prepare_pipeline(const ExperimentConfig& config);

/// Entry point behind the `csai` binary. args excludes the program name.
/// Returns 0 on success, 1 on validation/usage errors, 2 on runtime failure.
int run(const std::vector<std::string>& args);

}  // namespace csai
