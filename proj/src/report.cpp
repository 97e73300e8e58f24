#include "csai/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace csai {

namespace {

using ojson = nlohmann::ordered_json;

std::string fmt_number(const ojson& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
    return buf;
}

const std::vector<std::string> kTableColumns = {
    "axis",          "axis_value",        "fold",
    "mae",           "mre",               "auc",
    "evaluated_cells", "best_epoch",      "best_val_mae",
    "baseline_mean_mae", "baseline_locf_mae", "baseline_linear_mae",
    "mae_mean",      "mae_std",           "mre_mean",
    "mre_std",       "auc_mean",          "auc_std",
    "epochs_mean"};

ojson flat_row_from_fold(const std::string& axis, const std::string& axis_value,
                         const ojson& fold, const ojson& aggregates) {
    ojson row;
    row["axis"] = axis;
    row["axis_value"] = axis_value;
    row["fold"] = fold.value("fold", -1);
    row["mae"] = fold.at("test").at("mae");
    row["mre"] = fold.at("test").value("mre", ojson());
    row["auc"] = fold.at("test").value("auc", ojson());
    row["evaluated_cells"] = fold.at("test").at("evaluated_cells");
    row["best_epoch"] = fold.at("best_epoch");
    row["best_val_mae"] = fold.at("best_val_mae");
    row["baseline_mean_mae"] = fold.contains("baselines") ? fold["baselines"]["mean"]["mae"] : ojson();
    row["baseline_locf_mae"] = fold.contains("baselines") ? fold["baselines"]["locf"]["mae"] : ojson();
    row["baseline_linear_mae"] =
        fold.contains("baselines") ? fold["baselines"]["linear"]["mae"] : ojson();
    for (const char* key : {"mae_mean", "mae_std", "mre_mean", "mre_std", "auc_mean", "auc_std",
                            "epochs_mean"})
        row[key] = aggregates.is_null() ? ojson() : aggregates.value(key, ojson());
    return row;
}

}  // namespace

ojson metrics_to_json(const Metrics& m) {
    ojson j;
    j["mae"] = m.mae;
    if (m.mre)
        j["mre"] = *m.mre;
    else
        j["mre"] = nullptr;
    if (m.auc)
        j["auc"] = *m.auc;
    else
        j["auc"] = nullptr;
    j["per_feature_mae"] = m.per_feature_mae;
    j["evaluated_cells"] = m.evaluated_cells;
    return j;
}

ojson fold_to_json(const FoldResult& f) {
    ojson j;
    j["fold"] = f.fold;
    j["test"] = metrics_to_json(f.test);
    j["baselines"] = ojson();
    j["baselines"]["mean"] = metrics_to_json(f.baseline_mean);
    j["baselines"]["locf"] = metrics_to_json(f.baseline_locf);
    j["baselines"]["linear"] = metrics_to_json(f.baseline_linear);
    j["best_epoch"] = f.best_epoch;
    j["best_val_mae"] = f.best_val_mae;
    ojson hist = ojson::array();
    for (const EpochRecord& r : f.history)
        hist.push_back({r.epoch, r.train_loss, r.reconstruction, r.consistency, r.classification,
                        r.val_mae});
    j["history"] = std::move(hist);
    return j;
}

ojson cv_report_to_json(const CvReport& r) {
    ojson j;
    ojson folds = ojson::array();
    for (const FoldResult& f : r.folds) folds.push_back(fold_to_json(f));
    j["folds"] = std::move(folds);
    j["mae_mean"] = r.mae_mean;
    j["mae_std"] = r.mae_std;
    j["mre_mean"] = r.mre_mean ? ojson(*r.mre_mean) : ojson();
    j["mre_std"] = r.mre_std ? ojson(*r.mre_std) : ojson();
    j["auc_mean"] = r.auc_mean ? ojson(*r.auc_mean) : ojson();
    j["auc_std"] = r.auc_std ? ojson(*r.auc_std) : ojson();
    j["epochs_mean"] = r.epochs_mean;
    return j;
}

ojson ablation_to_json(AblationAxis axis, const std::vector<AblationRow>& rows) {
    ojson j;
    j["kind"] = "ablation";
    j["axis"] = to_string(axis);
    ojson out_rows = ojson::array();
    for (const AblationRow& row : rows) {
        ojson r;
        r["axis_value"] = row.axis_value;
        r["config"] = ojson::parse(row.config.to_json());
        r["report"] = cv_report_to_json(row.report);
        out_rows.push_back(std::move(r));
    }
    j["rows"] = std::move(out_rows);
    return j;
}

ojson flat_rows(const ojson& results) {
    ojson rows = ojson::array();
    const std::string kind = results.value("kind", "");
    if (kind == "ablation") {
        const std::string axis = results.value("axis", "");
        for (const auto& arm : results.at("rows")) {
            const std::string axis_value = arm.at("axis_value").get<std::string>();
            const ojson& report = arm.at("report");
            for (const auto& fold : report.at("folds"))
                rows.push_back(flat_row_from_fold(axis, axis_value, fold, report));
        }
    } else if (kind == "cross_validation") {
        const ojson& report = results.at("report");
        for (const auto& fold : report.at("folds"))
            rows.push_back(flat_row_from_fold("", "", fold, report));
    } else if (kind == "train") {
        rows.push_back(flat_row_from_fold("", "", results.at("result"), ojson()));
    } else {
        throw std::runtime_error("flat_rows: unknown results kind '" + kind + "'");
    }
    return rows;
}

void emit_report(const ojson& results, const std::string& format, const std::string& path) {
    if (format == "json") {
        write_text_file(path, results.dump(2) + "\n");
        return;
    }
    if (format != "table") throw ValidationError("emit_report: format must be json or table");
    ojson rows = flat_rows(results);
    std::ostringstream os;
    for (size_t i = 0; i < kTableColumns.size(); ++i) os << (i ? "," : "") << kTableColumns[i];
    os << '\n';
    for (const auto& row : rows) {
        for (size_t i = 0; i < kTableColumns.size(); ++i)
            os << (i ? "," : "") << fmt_number(row.at(kTableColumns[i]));
        os << '\n';
    }
    write_text_file(path, os.str());
}

ojson parse_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("parse_table: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("parse_table: empty file");
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        cells.push_back(cur);
        return cells;
    };
    const std::vector<std::string> header = split(line);
    ojson rows = ojson::array();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line);
        ojson row;
        for (size_t i = 0; i < header.size() && i < cells.size(); ++i) {
            const std::string& cell = cells[i];
            const std::string& col = header[i];
            if (col == "axis" || col == "axis_value") {
                row[col] = cell;
            } else if (cell.empty()) {
                row[col] = nullptr;
            } else if (cell.find_first_of(".eEn") == std::string::npos) {
                row[col] = static_cast<int64_t>(std::stoll(cell));
            } else {
                row[col] = std::stod(cell);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void emit_series(const ojson& results, const std::string& dir) {
    const std::string kind = results.value("kind", "");
    // per-epoch validation MAE for every arm x fold
    {
        std::ostringstream os;
        os << "axis_value,fold,epoch,val_mae\n";
        auto emit_history = [&](const std::string& axis_value, const ojson& fold) {
            if (!fold.contains("history")) return;
            for (const auto& rec : fold["history"])
                os << axis_value << ',' << fold.value("fold", -1) << ','
                   << rec.at(0).get<int64_t>() << ',' << fmt_number(rec.at(5)) << '\n';
        };
        if (kind == "ablation") {
            for (const auto& arm : results.at("rows"))
                for (const auto& fold : arm.at("report").at("folds"))
                    emit_history(arm.at("axis_value").get<std::string>(), fold);
        } else if (kind == "cross_validation") {
            for (const auto& fold : results.at("report").at("folds")) emit_history("", fold);
        } else if (kind == "train") {
            emit_history("", results.at("result"));
        }
        write_text_file(dir + "/series_epoch_val_mae.csv", os.str());
    }
    if (kind == "ablation") {
        std::ostringstream os;
        os << "axis_value,mae_mean,mae_std,auc_mean,auc_std,epochs_mean\n";
        for (const auto& arm : results.at("rows")) {
            const ojson& rep = arm.at("report");
            os << arm.at("axis_value").get<std::string>() << ',' << fmt_number(rep.at("mae_mean"))
               << ',' << fmt_number(rep.at("mae_std")) << ',' << fmt_number(rep.at("auc_mean"))
               << ',' << fmt_number(rep.at("auc_std")) << ',' << fmt_number(rep.at("epochs_mean"))
               << '\n';
        }
        write_text_file(dir + "/series_axis.csv", os.str());
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open file: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace csai
