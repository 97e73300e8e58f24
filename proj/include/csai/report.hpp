#pragma once

#include <string>
#include <vector>

#include "csai/trainer.hpp"
#include "json.hpp"

namespace csai {

nlohmann::ordered_json metrics_to_json(const Metrics& m);
nlohmann::ordered_json fold_to_json(const FoldResult& f);
nlohmann::ordered_json cv_report_to_json(const CvReport& r);
nlohmann::ordered_json ablation_to_json(AblationAxis axis, const std::vector<AblationRow>& rows);

/// Flattens a results document into one row per fold x arm. Every numeric
/// cell of the table comes verbatim from this array, so a parsed table
/// compares equal to it.
nlohmann::ordered_json flat_rows(const nlohmann::ordered_json& results);

/// Writes results as JSON or as the flat delimited table; table numbers
/// are formatted losslessly. Throws std::runtime_error on unwritable paths.
void emit_report(const nlohmann::ordered_json& results, const std::string& format,
                 const std::string& path);

/// Parses a table written by emit_report back into the flat row array.
nlohmann::ordered_json parse_table(const std::string& path);

/// Plot-ready delimited series: per-epoch validation MAE and, for ablation
/// documents, the metric-vs-axis sweep.
void emit_series(const nlohmann::ordered_json& results, const std::string& dir);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace csai
