#include "csai/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace csai {

namespace {

std::vector<int64_t> sample_without_replacement(int64_t population, int64_t k,
                                                std::mt19937_64& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(population));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<int64_t> pick(i, population - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
}

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    if (n < 2) return 0.0;
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::UniformCorrected: return "uniform-corrected";
        case MaskStrategy::UniformLegacy: return "uniform-legacy";
        case MaskStrategy::NonUniform: return "nonuniform";
    }
    return "?";
}

MaskStrategy parse_strategy(const std::string& s) {
    if (s == "uniform-corrected") return MaskStrategy::UniformCorrected;
    if (s == "uniform-legacy") return MaskStrategy::UniformLegacy;
    if (s == "nonuniform") return MaskStrategy::NonUniform;
    throw ValidationError("unknown mask strategy '" + s + "'");
}

std::string to_string(MaskPermutation p) {
    switch (p) {
        case MaskPermutation::All: return "All";
        case MaskPermutation::TrainOnly: return "Train_only";
        case MaskPermutation::ValOnly: return "Val_only";
        case MaskPermutation::TestOnly: return "Test_only";
        case MaskPermutation::ValTest: return "Val_Test";
        case MaskPermutation::None: return "None";
    }
    return "?";
}

MaskPermutation parse_permutation(const std::string& s) {
    if (s == "All") return MaskPermutation::All;
    if (s == "Train_only") return MaskPermutation::TrainOnly;
    if (s == "Val_only") return MaskPermutation::ValOnly;
    if (s == "Test_only") return MaskPermutation::TestOnly;
    if (s == "Val_Test") return MaskPermutation::ValTest;
    if (s == "None") return MaskPermutation::None;
    throw ValidationError("unknown masking permutation '" + s + "'");
}

std::string MaskPlan::to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = csai::to_string(strategy);
    j["target_rate"] = target_rate;
    j["adjust_factor"] = adjust_factor;
    j["seed"] = seed;
    auto cs = nlohmann::ordered_json::array();
    for (const Cell& c : cells) cs.push_back({c.sample, c.step, c.feature});
    j["cells"] = std::move(cs);
    return j.dump(2);
}

MaskPlan MaskPlan::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MaskPlan p;
    p.strategy = parse_strategy(j.at("strategy").get<std::string>());
    p.target_rate = j.at("target_rate").get<double>();
    p.adjust_factor = j.value("adjust_factor", 0.0);
    p.seed = j.at("seed").get<uint64_t>();
    for (const auto& c : j.at("cells"))
        p.cells.push_back(Cell{c.at(0).get<int64_t>(), c.at(1).get<int64_t>(), c.at(2).get<int64_t>()});
    std::sort(p.cells.begin(), p.cells.end());
    return p;
}

MissingDistribution feature_missing_distribution(const TimeSeriesBatch& dataset) {
    const int64_t N = dataset.n_samples(), T = dataset.n_steps(), D = dataset.n_features();
    if (N == 0) throw ValidationError("feature_missing_distribution: empty dataset");
    MissingDistribution dist;
    dist.p_dist.assign(static_cast<size_t>(D), 0.0);
    dist.n_obs.assign(static_cast<size_t>(D), 0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d)
                if (dataset.mask(n, t, d) != 0.0) ++dist.n_obs[static_cast<size_t>(d)];
    for (int64_t d = 0; d < D; ++d)
        dist.p_dist[static_cast<size_t>(d)] =
            1.0 - static_cast<double>(dist.n_obs[static_cast<size_t>(d)]) / static_cast<double>(N * T);
    return dist;
}

MaskPlan plan_uniform_mask(const Tensor& mask, double target_rate, uint64_t seed, MaskMode mode) {
    if (target_rate < 0.0 || target_rate >= 1.0)
        throw ValidationError("plan_uniform_mask: target rate must lie in [0, 1)");
    if (mask.rank() != 3) throw ValidationError("plan_uniform_mask: expected mask [N,T,D]");
    const int64_t N = mask.shape[0], T = mask.shape[1], D = mask.shape[2];

    std::vector<Cell> observed;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d)
                if (mask(n, t, d) != 0.0) observed.push_back(Cell{n, t, d});

    MaskPlan plan;
    plan.strategy = mode == MaskMode::Corrected ? MaskStrategy::UniformCorrected
                                                : MaskStrategy::UniformLegacy;
    plan.target_rate = target_rate;
    plan.seed = seed;
    const int64_t n_obs = static_cast<int64_t>(observed.size());
    const int64_t k = std::llround(target_rate * static_cast<double>(n_obs));
    if (k == 0) return plan;

    std::mt19937_64 rng(seed);
    if (mode == MaskMode::Corrected) {
        for (int64_t i : sample_without_replacement(n_obs, k, rng))
            plan.cells.push_back(observed[static_cast<size_t>(i)]);
    } else {
        // the flawed conversion: the count is right but the draw runs over
        // every cell, so hits on already-missing cells are simply lost
        for (int64_t flat : sample_without_replacement(N * T * D, k, rng)) {
            const int64_t n = flat / (T * D), t = (flat / D) % T, d = flat % D;
            if (mask(n, t, d) != 0.0) plan.cells.push_back(Cell{n, t, d});
        }
    }
    std::sort(plan.cells.begin(), plan.cells.end());
    return plan;
}

MaskPlan plan_nonuniform_mask(const Tensor& mask, double target_rate, double adjust_factor,
                              const MissingDistribution& dist, uint64_t seed) {
    if (target_rate < 0.0 || target_rate >= 1.0)
        throw ValidationError("plan_nonuniform_mask: target rate must lie in [0, 1)");
    if (adjust_factor < 0.0)
        throw ValidationError("plan_nonuniform_mask: adjust factor must be nonnegative");
    if (mask.rank() != 3) throw ValidationError("plan_nonuniform_mask: expected mask [N,T,D]");
    const int64_t N = mask.shape[0], T = mask.shape[1], D = mask.shape[2];
    if (static_cast<int64_t>(dist.p_dist.size()) != D)
        throw ValidationError("plan_nonuniform_mask: distribution dimension mismatch");

    std::vector<std::vector<Cell>> per_feature(static_cast<size_t>(D));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d)
                if (mask(n, t, d) != 0.0) per_feature[static_cast<size_t>(d)].push_back(Cell{n, t, d});

    int64_t total_obs = 0;
    std::vector<int64_t> n_obs(static_cast<size_t>(D));
    for (int64_t d = 0; d < D; ++d) {
        n_obs[static_cast<size_t>(d)] = static_cast<int64_t>(per_feature[static_cast<size_t>(d)].size());
        total_obs += n_obs[static_cast<size_t>(d)];
    }

    MaskPlan plan;
    plan.strategy = MaskStrategy::NonUniform;
    plan.target_rate = target_rate;
    plan.adjust_factor = adjust_factor;
    plan.seed = seed;
    const int64_t total_target = std::llround(target_rate * static_cast<double>(total_obs));
    if (total_target == 0) return plan;

    // expected counts under w(d) = 1 + I*p_dist(d), normalized so they sum
    // to U * total_obs
    std::vector<double> expected(static_cast<size_t>(D), 0.0);
    double weighted = 0.0;
    for (int64_t d = 0; d < D; ++d)
        weighted += (1.0 + adjust_factor * dist.p_dist[static_cast<size_t>(d)]) *
                    static_cast<double>(n_obs[static_cast<size_t>(d)]);
    const double wbar = weighted / static_cast<double>(total_obs);
    for (int64_t d = 0; d < D; ++d)
        expected[static_cast<size_t>(d)] = target_rate *
                                           (1.0 + adjust_factor * dist.p_dist[static_cast<size_t>(d)]) / wbar *
                                           static_cast<double>(n_obs[static_cast<size_t>(d)]);

    // cap at the per-feature observation count, redistributing the excess
    // proportionally over the uncapped features until stable
    std::vector<bool> capped(static_cast<size_t>(D), false);
    for (int iter = 0; iter < static_cast<int>(D) + 1; ++iter) {
        double excess = 0.0;
        double uncapped_sum = 0.0;
        bool newly_capped = false;
        for (int64_t d = 0; d < D; ++d) {
            const size_t di = static_cast<size_t>(d);
            if (capped[di]) continue;
            if (expected[di] >= static_cast<double>(n_obs[di])) {
                excess += expected[di] - static_cast<double>(n_obs[di]);
                expected[di] = static_cast<double>(n_obs[di]);
                capped[di] = true;
                newly_capped = true;
            } else {
                uncapped_sum += expected[di];
            }
        }
        if (!newly_capped || excess == 0.0) break;
        if (uncapped_sum == 0.0) {
            if (excess > 0.5)
                throw ValidationError("plan_nonuniform_mask: all features capped, target unreachable");
            break;
        }
        for (int64_t d = 0; d < D; ++d) {
            const size_t di = static_cast<size_t>(d);
            if (!capped[di]) expected[di] += excess * expected[di] / uncapped_sum;
        }
    }

    // largest-remainder apportionment to hit the total exactly
    std::vector<int64_t> count(static_cast<size_t>(D), 0);
    int64_t assigned = 0;
    for (int64_t d = 0; d < D; ++d) {
        count[static_cast<size_t>(d)] = static_cast<int64_t>(std::floor(expected[static_cast<size_t>(d)]));
        count[static_cast<size_t>(d)] = std::min(count[static_cast<size_t>(d)], n_obs[static_cast<size_t>(d)]);
        assigned += count[static_cast<size_t>(d)];
    }
    int64_t deficit = total_target - assigned;
    std::vector<int64_t> order(static_cast<size_t>(D));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const double ra = expected[static_cast<size_t>(a)] - std::floor(expected[static_cast<size_t>(a)]);
        const double rb = expected[static_cast<size_t>(b)] - std::floor(expected[static_cast<size_t>(b)]);
        return ra > rb;
    });
    for (int round = 0; deficit > 0; ++round) {
        bool progressed = false;
        for (int64_t d : order) {
            if (deficit == 0) break;
            if (count[static_cast<size_t>(d)] < n_obs[static_cast<size_t>(d)]) {
                ++count[static_cast<size_t>(d)];
                --deficit;
                progressed = true;
            }
        }
        if (!progressed)
            throw ValidationError("plan_nonuniform_mask: all features capped, target unreachable");
    }

    std::mt19937_64 rng(seed);
    for (int64_t d = 0; d < D; ++d) {
        const auto& cells = per_feature[static_cast<size_t>(d)];
        const int64_t k = count[static_cast<size_t>(d)];
        if (k == 0) continue;
        for (int64_t i : sample_without_replacement(static_cast<int64_t>(cells.size()), k, rng))
            plan.cells.push_back(cells[static_cast<size_t>(i)]);
    }
    std::sort(plan.cells.begin(), plan.cells.end());
    return plan;
}

std::pair<TimeSeriesBatch, std::vector<EvalTarget>> apply_mask_plan(const TimeSeriesBatch& batch,
                                                                    const MaskPlan& plan) {
    TimeSeriesBatch view = batch;
    std::vector<EvalTarget> targets;
    targets.reserve(plan.cells.size());
    for (size_t i = 0; i < plan.cells.size(); ++i) {
        const Cell& c = plan.cells[i];
        if (i > 0 && plan.cells[i - 1] == c)
            throw ValidationError("apply_mask_plan: corrupt plan (duplicate cell)");
        if (c.sample < 0 || c.sample >= batch.n_samples() || c.step < 0 || c.step >= batch.n_steps() ||
            c.feature < 0 || c.feature >= batch.n_features())
            throw ValidationError("apply_mask_plan: corrupt plan (cell out of range)");
        if (batch.mask(c.sample, c.step, c.feature) == 0.0)
            throw ValidationError("apply_mask_plan: corrupt plan (cell already missing)");
        targets.push_back(EvalTarget{c, batch.values(c.sample, c.step, c.feature)});
        view.mask(c.sample, c.step, c.feature) = 0.0;
        view.values(c.sample, c.step, c.feature) = 0.0;
    }
    if (!plan.cells.empty()) populate_indicators(view);
    return {std::move(view), std::move(targets)};
}

MaskAudit audit_mask_plan(const MaskPlan& plan, const Tensor& mask) {
    const int64_t N = mask.shape[0], T = mask.shape[1], D = mask.shape[2];
    std::vector<int64_t> obs(static_cast<size_t>(D), 0), hit(static_cast<size_t>(D), 0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d)
                if (mask(n, t, d) != 0.0) ++obs[static_cast<size_t>(d)];
    for (const Cell& c : plan.cells) ++hit[static_cast<size_t>(c.feature)];

    MaskAudit audit;
    audit.per_feature_rate.assign(static_cast<size_t>(D), 0.0);
    int64_t total_obs = 0, total_hit = 0;
    std::vector<double> p_dist(static_cast<size_t>(D), 0.0);
    for (int64_t d = 0; d < D; ++d) {
        const size_t di = static_cast<size_t>(d);
        total_obs += obs[di];
        total_hit += hit[di];
        if (obs[di] > 0)
            audit.per_feature_rate[di] = static_cast<double>(hit[di]) / static_cast<double>(obs[di]);
        p_dist[di] = 1.0 - static_cast<double>(obs[di]) / static_cast<double>(N * T);
    }
    audit.realized_rate = total_obs > 0 ? static_cast<double>(total_hit) / static_cast<double>(total_obs) : 0.0;
    audit.deviation = audit.realized_rate - plan.target_rate;
    audit.pearson_rate_vs_pdist = pearson(audit.per_feature_rate, p_dist);
    audit.spearman_rate_vs_pdist = pearson(ranks_with_ties(audit.per_feature_rate), ranks_with_ties(p_dist));
    return audit;
}

MaskStrategy select_split_policy(MaskPermutation permutation, SplitRole split) {
    bool nonuniform = false;
    switch (permutation) {
        case MaskPermutation::All: nonuniform = true; break;
        case MaskPermutation::TrainOnly: nonuniform = split == SplitRole::Train; break;
        case MaskPermutation::ValOnly: nonuniform = split == SplitRole::Val; break;
        case MaskPermutation::TestOnly: nonuniform = split == SplitRole::Test; break;
        case MaskPermutation::ValTest:
            nonuniform = split == SplitRole::Val || split == SplitRole::Test;
            break;
        case MaskPermutation::None: nonuniform = false; break;
    }
    return nonuniform ? MaskStrategy::NonUniform : MaskStrategy::UniformCorrected;
}

}  // namespace csai
