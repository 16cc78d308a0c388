#pragma once

// Seeded synthetic scenarios and the Monte Carlo sample-size study.
//
// Normal parameters below are written as variances where the scenario is
// described that way; the code converts to standard deviations explicitly.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "certkit/calibration.hpp"
#include "certkit/datamodel.hpp"
#include "certkit/pairs.hpp"
#include "certkit/rng.hpp"

namespace certkit {

namespace detail {

inline CertRecord scalar_record(std::size_t i, double feature, double obs, const PredictiveDistribution& pred) {
    CertRecord r;
    r.id = "r" + std::to_string(i);
    r.v_content = {feature};
    r.y_obs = {obs};
    r.y_pred = std::vector<PredictiveDistribution>{pred};
    return r;
}

}  // namespace detail

// obs ~ N(0, 1), prediction N(0, 1); v_content[0] ~ U[0, 1] is an unrelated feature.
inline CertDataset gen_perfect_calibration(std::size_t n, std::uint64_t seed) {
    detail::require(n >= 1, "gen_perfect_calibration: n must be >= 1");
    Rng rng(seed);
    CertDataset ds{{1, 0, 1, 0}, {}};
    ds.records.reserve(n);
    const PredictiveDistribution pred = Normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double obs = rng.normal();
        ds.records.push_back(detail::scalar_record(i, rng.uniform(), obs, pred));
    }
    return ds;
}

// x in {1..5} with weights (1, 4, 6, 4, 1)/16, obs ~ N(x - 3, 1), prediction
// N(0, variance 2); x is v_content[0]. Marginally the observations are N(0, 2).
inline CertDataset gen_conditional_failure(std::size_t n, std::uint64_t seed) {
    detail::require(n >= 1, "gen_conditional_failure: n must be >= 1");
    Rng rng(seed);
    CertDataset ds{{1, 0, 1, 0}, {}};
    ds.records.reserve(n);
    const PredictiveDistribution pred = Normal(0.0, std::sqrt(2.0));
    constexpr std::array<int, 5> cumulative{1, 5, 11, 15, 16};
    for (std::size_t i = 0; i < n; ++i) {
        const auto draw = static_cast<int>(rng.index(16));
        int x = 1;
        while (draw >= cumulative[static_cast<std::size_t>(x - 1)]) ++x;
        const double obs = rng.normal(x - 3.0, 1.0);
        ds.records.push_back(detail::scalar_record(i, x, obs, pred));
    }
    return ds;
}

// mu_t ~ N(0, variance 2), obs ~ N(mu_t, 1), prediction N(0, variance 3); t is v_content[0].
inline CertDataset gen_time_varying_forecast(std::size_t T, std::uint64_t seed) {
    detail::require(T >= 1, "gen_time_varying_forecast: T must be >= 1");
    Rng rng(seed);
    CertDataset ds{{1, 0, 1, 0}, {}};
    ds.records.reserve(T);
    const PredictiveDistribution pred = Normal(0.0, std::sqrt(3.0));
    for (std::size_t t = 0; t < T; ++t) {
        const double mu_t = rng.normal(0.0, std::sqrt(2.0));
        const double obs = rng.normal(mu_t, 1.0);
        ds.records.push_back(detail::scalar_record(t, static_cast<double>(t), obs, pred));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Linear disentangled toy problem

struct ToyOptions {
    std::size_t input_dim = 0;  // 0 = 3 * (k + l)
    double content_lo = -1.0;
    double content_hi = 1.0;
    double mixing_scale = 0.1;  // column norm of the mixing matrix
    double noise_sd = 0.005;
};

struct ToyProblem {
    PairBatch batch;
    std::vector<std::vector<double>> factors_lhs;  // (content..., style...)
    std::vector<std::vector<double>> factors_rhs;
    Eigen::MatrixXd mixing;                        // input_dim x (k + l)
    Eigen::VectorXd offset;
    std::size_t k = 0;
    std::size_t l = 0;
    OperatingRange range;
};

// x = 0.5 + A v + noise, clipped to [0, 1]; A has orthogonal columns of norm
// mixing_scale. Each pair shares one random content factor; the rest is resampled.
inline ToyProblem gen_toy_disentangled(std::size_t n_pairs, std::size_t k, std::size_t l, std::uint64_t seed,
                                       const ToyOptions& opt = {}) {
    detail::require(k >= 1, "gen_toy_disentangled: k must be >= 1");
    detail::require(opt.content_hi > opt.content_lo, "gen_toy_disentangled: empty content range");
    const std::size_t f = k + l;
    const std::size_t d = opt.input_dim == 0 ? 3 * f : opt.input_dim;
    detail::require(d >= f, "gen_toy_disentangled: input_dim must be >= k + l");
    Rng rng(seed);
    Rng mix_rng = rng.split(0);
    Rng data_rng = rng.split(1);

    Eigen::MatrixXd g(d, f);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = mix_rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(f));

    ToyProblem p;
    p.k = k;
    p.l = l;
    p.mixing = opt.mixing_scale * q;
    p.offset = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 0.5);
    p.range = OperatingRange(std::vector<Interval>(k, Interval{opt.content_lo, opt.content_hi}));

    auto draw_factor = [&](std::size_t i) {
        return i < k ? data_rng.uniform(opt.content_lo, opt.content_hi) : data_rng.normal();
    };
    auto observe = [&](const std::vector<double>& v) {
        const Eigen::VectorXd x = p.offset + p.mixing * Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(f));
        std::vector<double> out(d);
        for (std::size_t j = 0; j < d; ++j)
            out[j] = std::clamp(x[static_cast<Eigen::Index>(j)] + opt.noise_sd * data_rng.normal(), 0.0, 1.0);
        return out;
    };
    for (std::size_t n = 0; n < n_pairs; ++n) {
        const auto shared = static_cast<std::size_t>(data_rng.index(k));
        std::vector<double> v(f), w(f);
        for (std::size_t i = 0; i < f; ++i) v[i] = draw_factor(i);
        for (std::size_t i = 0; i < f; ++i) w[i] = i == shared ? v[i] : draw_factor(i);
        p.batch.lhs.push_back(observe(v));
        p.batch.rhs.push_back(observe(w));
        p.batch.shared.push_back({shared});
        p.factors_lhs.push_back(std::move(v));
        p.factors_rhs.push_back(std::move(w));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Failure-probability study

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return detail::splitmix64(seed ^ detail::splitmix64(a * 0x9E3779B97F4A7C15ULL + detail::splitmix64(b)));
}

// True when perfectly calibrated data of size n_samples fails the calibration curve test.
inline bool run_failure_trial(std::size_t n_samples, double eps, std::uint64_t seed) {
    detail::require(n_samples >= 1, "run_failure_trial: n_samples must be >= 1");
    Rng rng(seed);
    std::vector<double> obs(n_samples);
    for (auto& y : obs) y = rng.normal();
    const std::vector<PredictiveDistribution> preds(n_samples, Normal(0.0, 1.0));
    return !test_calibration_curve(preds, obs, eps).passed;
}

struct FailureTable {
    std::vector<std::size_t> n_grid;
    std::vector<double> eps_grid;
    std::size_t n_trials = 0;
    std::vector<std::vector<double>> failure;  // [eps][n]

    double at(double eps, std::size_t n) const {
        for (std::size_t e = 0; e < eps_grid.size(); ++e)
            for (std::size_t j = 0; j < n_grid.size(); ++j)
                if (eps_grid[e] == eps && n_grid[j] == n) return failure[e][j];
        throw InvalidArgument("FailureTable: cell not in grid");
    }
};

inline FailureTable compute_failure_table(std::vector<std::size_t> n_grid = {10, 100, 1000, 10000, 100000},
                                          std::vector<double> eps_grid = {0.05, 0.10, 0.20},
                                          std::size_t n_trials = 100, std::uint64_t seed = 1) {
    detail::require(!n_grid.empty() && !eps_grid.empty(), "compute_failure_table: grids must be non-empty");
    detail::require(n_trials >= 1, "compute_failure_table: n_trials must be >= 1");
    FailureTable t{std::move(n_grid), std::move(eps_grid), n_trials, {}};
    for (std::size_t e = 0; e < t.eps_grid.size(); ++e) {
        std::vector<double> row;
        for (std::size_t j = 0; j < t.n_grid.size(); ++j) {
            std::size_t fails = 0;
            for (std::size_t trial = 0; trial < n_trials; ++trial)
                if (run_failure_trial(t.n_grid[j], t.eps_grid[e], derive_seed(seed, e * t.n_grid.size() + j, trial)))
                    ++fails;
            row.push_back(static_cast<double>(fails) / static_cast<double>(n_trials));
        }
        t.failure.push_back(std::move(row));
    }
    return t;
}

// Smallest n in the grid whose failure frequency at eps is at most max_failure.
inline std::optional<std::size_t> recommend_sample_size(const FailureTable& t, double eps, double max_failure = 0.01) {
    for (std::size_t e = 0; e < t.eps_grid.size(); ++e) {
        if (t.eps_grid[e] != eps) continue;
        for (std::size_t j = 0; j < t.n_grid.size(); ++j)
            if (t.failure[e][j] <= max_failure) return t.n_grid[j];
        return std::nullopt;
    }
    throw InvalidArgument("recommend_sample_size: eps not in table");
}

// Rows = eps, columns = n.
inline void write_failure_table_csv(std::ostream& os, const FailureTable& t) {
    os << "eps";
    for (auto n : t.n_grid) os << ',' << n;
    os << '\n';
    for (std::size_t e = 0; e < t.eps_grid.size(); ++e) {
        os << t.eps_grid[e];
        for (double f : t.failure[e]) os << ',' << f;
        os << '\n';
    }
}

}  // namespace certkit
