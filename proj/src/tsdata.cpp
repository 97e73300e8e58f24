#include "csai/tsdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace csai {

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<double> compute_delta(const std::vector<double>& timestamps,
                                  const std::vector<int>& mask) {
    const size_t T = timestamps.size();
    if (T == 0) throw ValidationError("compute_delta: empty series");
    if (mask.size() != T) throw ValidationError("compute_delta: mask length mismatch");
    std::vector<double> delta(T, 0.0);
    for (size_t t = 1; t < T; ++t) {
        const double gap = timestamps[t] - timestamps[t - 1];
        if (gap <= 0.0)
            throw ValidationError("compute_delta: timestamps not strictly increasing at step " +
                                  std::to_string(t));
        delta[t] = mask[t - 1] == 0 ? gap + delta[t - 1] : gap;
    }
    return delta;
}

Tensor build_last_observation(const Tensor& values, const Tensor& mask,
                              const std::vector<double>& fill) {
    if (!values.same_shape(mask)) throw ValidationError("build_last_observation: shape mismatch");
    if (values.rank() != 3) throw ValidationError("build_last_observation: expected [N,T,D]");
    const int64_t N = values.shape[0], T = values.shape[1], D = values.shape[2];
    if (static_cast<int64_t>(fill.size()) != D)
        throw ValidationError("build_last_observation: fill length mismatch");
    Tensor out = Tensor::zeros(values.shape);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d) {
            double last = fill[static_cast<size_t>(d)];
            for (int64_t t = 0; t < T; ++t) {
                if (mask(n, t, d) != 0.0) last = values(n, t, d);
                out(n, t, d) = last;
            }
        }
    return out;
}

void populate_indicators(TimeSeriesBatch& batch) {
    const int64_t N = batch.n_samples(), T = batch.n_steps(), D = batch.n_features();
    batch.delta = Tensor::zeros({N, T, D});
    std::vector<double> ts(static_cast<size_t>(T));
    std::vector<int> m(static_cast<size_t>(T));
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t t = 0; t < T; ++t) ts[static_cast<size_t>(t)] = batch.timestamps(n, t);
        for (int64_t d = 0; d < D; ++d) {
            for (int64_t t = 0; t < T; ++t) m[static_cast<size_t>(t)] = batch.mask(n, t, d) != 0.0 ? 1 : 0;
            std::vector<double> delta;
            try {
                delta = compute_delta(ts, m);
            } catch (const ValidationError& e) {
                throw ValidationError("sample " + std::to_string(n) + ": " + e.what());
            }
            for (int64_t t = 0; t < T; ++t) batch.delta(n, t, d) = delta[static_cast<size_t>(t)];
        }
    }
    batch.last_obs = build_last_observation(batch.values, batch.mask,
                                            std::vector<double>(static_cast<size_t>(D), 0.0));
}

MedianGaps compute_median_gaps(const TimeSeriesBatch& train) {
    const int64_t N = train.n_samples(), T = train.n_steps(), D = train.n_features();
    if (N == 0) throw ValidationError("compute_median_gaps: empty training set");
    MedianGaps result;
    result.tau.assign(static_cast<size_t>(D), -1.0);
    std::vector<double> with_gaps;
    for (int64_t d = 0; d < D; ++d) {
        std::vector<double> gaps;
        for (int64_t n = 0; n < N; ++n) {
            double prev = -1.0;
            bool seen = false;
            for (int64_t t = 0; t < T; ++t) {
                if (train.mask(n, t, d) == 0.0) continue;
                const double s = train.timestamps(n, t);
                if (seen) gaps.push_back(s - prev);
                prev = s;
                seen = true;
            }
        }
        if (!gaps.empty()) {
            result.tau[static_cast<size_t>(d)] = median_of(std::move(gaps));
            with_gaps.push_back(result.tau[static_cast<size_t>(d)]);
        }
    }
    if (with_gaps.empty())
        throw ValidationError("compute_median_gaps: no feature has two observations");
    const double global = median_of(with_gaps);
    for (double& tau : result.tau)
        if (tau < 0.0) tau = global;
    return result;
}

SplitIndices split_dataset(const TimeSeriesBatch& dataset, const std::array<double, 3>& ratios,
                           uint64_t seed) {
    const int64_t N = dataset.n_samples();
    if (N == 0) throw ValidationError("split_dataset: empty dataset");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(sum - 1.0) > 1e-9) throw ValidationError("split_dataset: ratios must sum to 1");

    std::mt19937_64 rng(seed);
    SplitIndices out;
    auto assign_group = [&](std::vector<int64_t>& idx) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const int64_t n = static_cast<int64_t>(idx.size());
        const int64_t n_val = std::llround(ratios[1] * static_cast<double>(n));
        const int64_t n_test = std::llround(ratios[2] * static_cast<double>(n));
        const int64_t n_train = n - n_val - n_test;
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_train)
                out.train.push_back(idx[static_cast<size_t>(i)]);
            else if (i < n_train + n_val)
                out.val.push_back(idx[static_cast<size_t>(i)]);
            else
                out.test.push_back(idx[static_cast<size_t>(i)]);
        }
    };

    if (dataset.has_labels()) {
        std::vector<int64_t> neg, pos;
        for (int64_t i = 0; i < N; ++i)
            (dataset.labels[static_cast<size_t>(i)] ? pos : neg).push_back(i);
        assign_group(neg);
        assign_group(pos);
    } else {
        std::vector<int64_t> idx(static_cast<size_t>(N));
        std::iota(idx.begin(), idx.end(), 0);
        assign_group(idx);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw ValidationError("split_dataset: ratios produce an empty split");
    return out;
}

NormStats fit_normalizer(const TimeSeriesBatch& train) {
    const int64_t N = train.n_samples(), T = train.n_steps(), D = train.n_features();
    NormStats stats;
    stats.fitted_on = "train";
    stats.mean.assign(static_cast<size_t>(D), 0.0);
    stats.std.assign(static_cast<size_t>(D), 1.0);
    for (int64_t d = 0; d < D; ++d) {
        double sum = 0.0, sum2 = 0.0;
        int64_t count = 0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t t = 0; t < T; ++t)
                if (train.mask(n, t, d) != 0.0) {
                    sum += train.values(n, t, d);
                    sum2 += train.values(n, t, d) * train.values(n, t, d);
                    ++count;
                }
        if (count == 0) {
            stats.warnings.push_back("feature " + std::to_string(d) +
                                     " has no observed training cells; using mean 0, std 1");
            continue;
        }
        const double mean = sum / static_cast<double>(count);
        double var = sum2 / static_cast<double>(count) - mean * mean;
        var = std::max(var, 0.0);  // guard against cancellation
        stats.mean[static_cast<size_t>(d)] = mean;
        stats.std[static_cast<size_t>(d)] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return stats;
}

TimeSeriesBatch apply_normalizer(const TimeSeriesBatch& batch, const NormStats& stats) {
    const int64_t D = batch.n_features();
    if (static_cast<int64_t>(stats.mean.size()) != D || static_cast<int64_t>(stats.std.size()) != D)
        throw ValidationError("apply_normalizer: stats dimension mismatch");
    TimeSeriesBatch out = batch;
    const int64_t N = batch.n_samples(), T = batch.n_steps();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d)
                out.values(n, t, d) = batch.mask(n, t, d) != 0.0
                                          ? (batch.values(n, t, d) - stats.mean[static_cast<size_t>(d)]) /
                                                stats.std[static_cast<size_t>(d)]
                                          : 0.0;
    populate_indicators(out);
    return out;
}

TimeSeriesBatch subset(const TimeSeriesBatch& batch, const std::vector<int64_t>& indices) {
    const int64_t T = batch.n_steps(), D = batch.n_features();
    const int64_t M = static_cast<int64_t>(indices.size());
    TimeSeriesBatch out;
    out.values = Tensor::zeros({M, T, D});
    out.mask = Tensor::zeros({M, T, D});
    out.timestamps = Tensor::zeros({M, T});
    out.delta = Tensor::zeros({M, T, D});
    out.last_obs = Tensor::zeros({M, T, D});
    for (int64_t i = 0; i < M; ++i) {
        const int64_t n = indices[static_cast<size_t>(i)];
        if (n < 0 || n >= batch.n_samples()) throw ValidationError("subset: index out of range");
        for (int64_t t = 0; t < T; ++t) {
            out.timestamps(i, t) = batch.timestamps(n, t);
            for (int64_t d = 0; d < D; ++d) {
                out.values(i, t, d) = batch.values(n, t, d);
                out.mask(i, t, d) = batch.mask(n, t, d);
                out.delta(i, t, d) = batch.delta(n, t, d);
                out.last_obs(i, t, d) = batch.last_obs(n, t, d);
            }
        }
        if (batch.has_labels()) out.labels.push_back(batch.labels[static_cast<size_t>(n)]);
    }
    return out;
}

TimeSeriesBatch reverse_time(const TimeSeriesBatch& batch) {
    const int64_t N = batch.n_samples(), T = batch.n_steps(), D = batch.n_features();
    TimeSeriesBatch out;
    out.values = Tensor::zeros({N, T, D});
    out.mask = Tensor::zeros({N, T, D});
    out.timestamps = Tensor::zeros({N, T});
    out.labels = batch.labels;
    for (int64_t n = 0; n < N; ++n) {
        const double s_end = batch.timestamps(n, T - 1);
        for (int64_t t = 0; t < T; ++t) {
            const int64_t rt = T - 1 - t;
            out.timestamps(n, t) = s_end - batch.timestamps(n, rt);
            for (int64_t d = 0; d < D; ++d) {
                out.values(n, t, d) = batch.values(n, rt, d);
                out.mask(n, t, d) = batch.mask(n, rt, d);
            }
        }
    }
    populate_indicators(out);
    return out;
}

std::string SyntheticConfig::to_json() const {
    nlohmann::ordered_json j;
    j["n_samples"] = n_samples;
    j["n_steps"] = n_steps;
    j["n_features"] = n_features;
    j["missing_rates"] = missing_rates;
    j["mnar_coupling"] = mnar_coupling;
    j["base_gap_hours"] = base_gap_hours;
    j["temporal_corr"] = temporal_corr;
    j["cross_corr"] = cross_corr;
    j["label_noise"] = label_noise;
    return j.dump(2);
}

SyntheticConfig SyntheticConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    SyntheticConfig c;
    c.n_samples = j.value("n_samples", c.n_samples);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.n_features = j.value("n_features", c.n_features);
    if (j.contains("missing_rates")) c.missing_rates = j["missing_rates"].get<std::vector<double>>();
    c.mnar_coupling = j.value("mnar_coupling", c.mnar_coupling);
    c.base_gap_hours = j.value("base_gap_hours", c.base_gap_hours);
    c.temporal_corr = j.value("temporal_corr", c.temporal_corr);
    c.cross_corr = j.value("cross_corr", c.cross_corr);
    c.label_noise = j.value("label_noise", c.label_noise);
    return c;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config, uint64_t seed) {
    const int64_t N = config.n_samples, T = config.n_steps, D = config.n_features;
    if (N <= 0 || T <= 0 || D <= 0) throw ValidationError("generate_synthetic: N, T, D must be positive");
    std::vector<double> rates = config.missing_rates;
    if (rates.empty()) rates.assign(static_cast<size_t>(D), 0.3);
    if (rates.size() == 1) rates.assign(static_cast<size_t>(D), rates[0]);
    if (static_cast<int64_t>(rates.size()) != D)
        throw ValidationError("generate_synthetic: missing_rates length must be 1 or D");
    for (double r : rates)
        if (r < 0.0 || r >= 1.0)
            throw ValidationError("generate_synthetic: missing rates must lie in [0, 1)");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // fixed per-feature offsets and scales so raw features live on
    // different numeric ranges
    std::vector<double> offset(static_cast<size_t>(D)), scale(static_cast<size_t>(D));
    for (int64_t d = 0; d < D; ++d) {
        offset[static_cast<size_t>(d)] = -5.0 + 10.0 * unif(rng);
        scale[static_cast<size_t>(d)] = 0.5 + 2.5 * unif(rng);
    }

    SyntheticDataset out;
    out.batch.timestamps = Tensor::zeros({N, T});
    out.ground_truth = Tensor::zeros({N, T, D});
    out.batch.mask = Tensor::zeros({N, T, D});
    Tensor latent = Tensor::zeros({N, T, D});  // standardized values, drives MNAR

    const double w = config.cross_corr;
    const double w_own = std::sqrt(std::max(0.0, 1.0 - w * w));
    std::vector<double> own(static_cast<size_t>(D));
    for (int64_t n = 0; n < N; ++n) {
        double s = 0.0;
        double factor = gauss(rng);
        for (int64_t d = 0; d < D; ++d) own[static_cast<size_t>(d)] = gauss(rng);
        double factor_sum = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            if (t > 0) {
                const double gap = config.base_gap_hours * (0.5 + 0.5 * expo(rng));
                s += gap;
                const double phi = std::pow(config.temporal_corr, gap / config.base_gap_hours);
                const double nz = std::sqrt(std::max(0.0, 1.0 - phi * phi));
                factor = phi * factor + nz * gauss(rng);
                for (int64_t d = 0; d < D; ++d)
                    own[static_cast<size_t>(d)] = phi * own[static_cast<size_t>(d)] + nz * gauss(rng);
            }
            out.batch.timestamps(n, t) = s;
            factor_sum += factor;
            for (int64_t d = 0; d < D; ++d) {
                const double z = w * factor + w_own * own[static_cast<size_t>(d)];
                latent(n, t, d) = z;
                out.ground_truth(n, t, d) = offset[static_cast<size_t>(d)] + scale[static_cast<size_t>(d)] * z;
            }
        }
        const double logit = factor_sum / static_cast<double>(T) + config.label_noise * gauss(rng);
        out.batch.labels.push_back(logit > 0.0 ? 1 : 0);
    }

    // MNAR: per-cell missingness score grows with |value|; the per-feature
    // intercept is calibrated by bisection so the mean probability hits the
    // requested rate exactly.
    const double c0 = std::sqrt(2.0 / M_PI);  // E|N(0,1)|
    const double kappa = config.mnar_coupling;
    out.batch.values = Tensor::zeros({N, T, D});
    for (int64_t d = 0; d < D; ++d) {
        std::vector<double> score(static_cast<size_t>(N * T));
        for (int64_t n = 0; n < N; ++n)
            for (int64_t t = 0; t < T; ++t)
                score[static_cast<size_t>(n * T + t)] = kappa * (std::fabs(latent(n, t, d)) - c0);
        const double target = rates[static_cast<size_t>(d)];
        double lo = -40.0, hi = 40.0;
        for (int iter = 0; iter < 80; ++iter) {
            const double mid = 0.5 * (lo + hi);
            double mean = 0.0;
            for (double sc : score) mean += 1.0 / (1.0 + std::exp(-(mid + sc)));
            mean /= static_cast<double>(score.size());
            (mean < target ? lo : hi) = mid;
        }
        const double intercept = 0.5 * (lo + hi);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t t = 0; t < T; ++t) {
                const double p_miss =
                    1.0 / (1.0 + std::exp(-(intercept + score[static_cast<size_t>(n * T + t)])));
                const bool missing = unif(rng) < p_miss;
                out.batch.mask(n, t, d) = missing ? 0.0 : 1.0;
                out.batch.values(n, t, d) = missing ? 0.0 : out.ground_truth(n, t, d);
            }
    }

    populate_indicators(out.batch);
    return out;
}

TimeSeriesBatch load_table(const std::string& path,
                           const std::vector<std::string>& expected_features) {
    std::ifstream is(path);
    if (!is) throw ValidationError("load_table: cannot open " + path);

    auto split_line = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
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

    std::string line;
    if (!std::getline(is, line)) throw ValidationError("load_table: empty file " + path);
    std::vector<std::string> header = split_line(line);
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "time")
        throw ValidationError("load_table: header must start with sample_id,time");
    bool has_label = header.back() == "label";
    std::vector<std::string> features(header.begin() + 2, header.end() - (has_label ? 1 : 0));
    if (features.empty()) throw ValidationError("load_table: no feature columns");
    if (!expected_features.empty() && features != expected_features)
        throw ValidationError("load_table: feature columns do not match the expected schema");
    const int64_t D = static_cast<int64_t>(features.size());

    struct Sample {
        std::vector<double> times;
        std::vector<std::vector<double>> rows;   // value per feature
        std::vector<std::vector<int>> observed;  // 0/1 per feature
        int label = -1;
    };
    std::vector<std::string> order;
    std::map<std::string, Sample> samples;

    auto parse_number = [](const std::string& s, int line_no, const std::string& what) {
        size_t pos = 0;
        double v;
        try {
            v = std::stod(s, &pos);
        } catch (...) {
            throw ValidationError("load_table: line " + std::to_string(line_no) + ": unparseable " +
                                  what + " '" + s + "'");
        }
        if (pos != s.size())
            throw ValidationError("load_table: line " + std::to_string(line_no) + ": unparseable " +
                                  what + " '" + s + "'");
        return v;
    };

    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_line(line);
        if (static_cast<int64_t>(cells.size()) != 2 + D + (has_label ? 1 : 0))
            throw ValidationError("load_table: line " + std::to_string(line_no) +
                                  ": wrong column count");
        const std::string& sid = cells[0];
        const double time = parse_number(cells[1], line_no, "time");
        if (samples.find(sid) == samples.end()) order.push_back(sid);
        Sample& sample = samples[sid];
        if (!sample.times.empty()) {
            if (time == sample.times.back())
                throw ValidationError("load_table: line " + std::to_string(line_no) +
                                      ": duplicate (sample, time) row for sample " + sid);
            if (time < sample.times.back())
                throw ValidationError("load_table: line " + std::to_string(line_no) +
                                      ": time goes backwards for sample " + sid);
        }
        sample.times.push_back(time);
        std::vector<double> row(static_cast<size_t>(D), 0.0);
        std::vector<int> obs(static_cast<size_t>(D), 0);
        for (int64_t d = 0; d < D; ++d) {
            const std::string& cell = cells[static_cast<size_t>(2 + d)];
            if (cell.empty()) continue;
            row[static_cast<size_t>(d)] = parse_number(cell, line_no, "value");
            obs[static_cast<size_t>(d)] = 1;
        }
        sample.rows.push_back(std::move(row));
        sample.observed.push_back(std::move(obs));
        if (has_label) {
            const double lv = parse_number(cells.back(), line_no, "label");
            const int li = static_cast<int>(lv);
            if ((lv != 0.0 && lv != 1.0))
                throw ValidationError("load_table: line " + std::to_string(line_no) +
                                      ": label must be 0 or 1");
            if (sample.label >= 0 && sample.label != li)
                throw ValidationError("load_table: line " + std::to_string(line_no) +
                                      ": label changes within sample " + sid);
            sample.label = li;
        }
    }
    if (order.empty()) throw ValidationError("load_table: no data rows in " + path);

    const int64_t T = static_cast<int64_t>(samples[order[0]].times.size());
    for (const std::string& sid : order)
        if (static_cast<int64_t>(samples[sid].times.size()) != T)
            throw ValidationError("load_table: sample " + sid + " has " +
                                  std::to_string(samples[sid].times.size()) + " rows, expected " +
                                  std::to_string(T));

    const int64_t N = static_cast<int64_t>(order.size());
    TimeSeriesBatch batch;
    batch.values = Tensor::zeros({N, T, D});
    batch.mask = Tensor::zeros({N, T, D});
    batch.timestamps = Tensor::zeros({N, T});
    for (int64_t n = 0; n < N; ++n) {
        const Sample& sample = samples[order[static_cast<size_t>(n)]];
        for (int64_t t = 0; t < T; ++t) {
            batch.timestamps(n, t) = sample.times[static_cast<size_t>(t)];
            for (int64_t d = 0; d < D; ++d) {
                batch.values(n, t, d) = sample.rows[static_cast<size_t>(t)][static_cast<size_t>(d)];
                batch.mask(n, t, d) = sample.observed[static_cast<size_t>(t)][static_cast<size_t>(d)];
            }
        }
        if (has_label) batch.labels.push_back(sample.label);
    }
    populate_indicators(batch);
    return batch;
}

void write_table(const std::string& path, const Tensor& values, const Tensor& mask,
                 const Tensor& timestamps, const std::vector<int>& labels,
                 const std::vector<std::string>& feature_names) {
    const int64_t N = values.shape[0], T = values.shape[1], D = values.shape[2];
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_table: cannot open " + path);
    os << "sample_id,time";
    for (int64_t d = 0; d < D; ++d) {
        if (static_cast<int64_t>(feature_names.size()) == D)
            os << ',' << feature_names[static_cast<size_t>(d)];
        else
            os << ",f" << (d + 1);
    }
    if (!labels.empty()) os << ",label";
    os << '\n';
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t) {
            os << 's' << n << ',' << fmt_double(timestamps(n, t));
            for (int64_t d = 0; d < D; ++d) {
                os << ',';
                if (mask(n, t, d) != 0.0) os << fmt_double(values(n, t, d));
            }
            if (!labels.empty()) os << ',' << labels[static_cast<size_t>(n)];
            os << '\n';
        }
    if (!os) throw std::runtime_error("write_table: write failed for " + path);
}

}  // namespace csai
