#pragma once

// Feature-combination holdout, feature-collapse and ensemble-disagreement checks.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "certkit/adapter.hpp"
#include "certkit/calibration.hpp"
#include "certkit/headens.hpp"
#include "certkit/outcome.hpp"
#include "certkit/rng.hpp"

namespace certkit {

// ---------------------------------------------------------------------------
// Feature-combination holdout

struct HoldoutDescriptor {
    std::size_t record = 0;  // index of the selected record v*
    std::size_t feature_i = 0;
    std::size_t feature_j = 0;
    double center_i = 0.0;
    double center_j = 0.0;
    double delta = 0.0;
    std::size_t attempts = 0;
};

struct HoldoutSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    HoldoutDescriptor holdout;
};

constexpr std::size_t kHoldoutMaxAttempts = 100;

// Semantic features (content then style) as an n x F matrix; NaN marks a missing style label.
inline Eigen::MatrixXd semantic_features(const CertDataset& ds) {
    const std::size_t f = ds.schema.k + ds.schema.l;
    Eigen::MatrixXd vs(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(f));
    for (std::size_t c = 0; c < f; ++c) {
        const auto col = ds.feature(c);
        for (std::size_t r = 0; r < col.size(); ++r)
            vs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                col[r].value_or(std::numeric_limits<double>::quiet_NaN());
    }
    return vs;
}

// Test set: records within delta of a random record v* in both of two random features it
// carries; everything else trains. Resamples v*, i, j while either side is empty.
inline HoldoutSplit samples_without_holdout_feature(const Eigen::MatrixXd& vs, double delta, std::uint64_t seed) {
    detail::require(vs.cols() >= 2, "samples_without_holdout_feature: at least 2 features required");
    detail::require(vs.rows() >= 1, "samples_without_holdout_feature: empty feature matrix");
    detail::require(std::isfinite(delta) && delta > 0.0, "samples_without_holdout_feature: delta must be > 0");
    Rng rng(seed);
    for (std::size_t attempt = 1; attempt <= kHoldoutMaxAttempts; ++attempt) {
        const auto star = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(vs.rows())));
        std::vector<std::size_t> labeled;
        for (Eigen::Index c = 0; c < vs.cols(); ++c)
            if (!std::isnan(vs(star, c))) labeled.push_back(static_cast<std::size_t>(c));
        if (labeled.size() < 2) continue;
        rng.shuffle(std::span(labeled));
        HoldoutSplit s;
        s.holdout = {static_cast<std::size_t>(star), labeled[0], labeled[1],
                     vs(star, static_cast<Eigen::Index>(labeled[0])), vs(star, static_cast<Eigen::Index>(labeled[1])),
                     delta, attempt};
        const auto ci = static_cast<Eigen::Index>(s.holdout.feature_i);
        const auto cj = static_cast<Eigen::Index>(s.holdout.feature_j);
        for (Eigen::Index r = 0; r < vs.rows(); ++r) {
            const bool near = std::abs(vs(r, ci) - s.holdout.center_i) <= delta &&
                              std::abs(vs(r, cj) - s.holdout.center_j) <= delta;
            (near ? s.test : s.train).push_back(static_cast<std::size_t>(r));
        }
        if (!s.train.empty() && !s.test.empty()) return s;
    }
    throw InvalidArgument("samples_without_holdout_feature: no non-empty train/test split after " +
                          std::to_string(kHoldoutMaxAttempts) + " attempts (delta " + std::to_string(delta) +
                          " covers the feature range)");
}

struct FeatureCombinationOptions {
    double delta = 0.2;
    std::size_t n_repeat = 20;
    double margin = 0.1;
    double train_fraction = 0.80;
};

struct FeatureCombinationResult {
    TestOutcome outcome;
    double baseline_mse = 0.0;
    std::vector<double> holdout_mse;
    std::vector<double> error_ratios;  // holdout error / baseline error
    std::vector<HoldoutDescriptor> holdouts;
};

namespace detail {

// Mean squared error of predictive means plus a resolution floor: errors below
// kErrorResolution times the RMS observation of the whole dataset are indistinguishable
// from round-off.
constexpr double kErrorResolution = 1e-10;

inline double error_floor(const CertDataset& ds) {
    double scale = 0.0;
    std::size_t count = 0;
    for (const auto& r : ds.records)
        for (double y : r.y_obs) {
            scale += y * y;
            ++count;
        }
    return kErrorResolution * kErrorResolution * (count ? scale / static_cast<double>(count) : 0.0) +
           std::numeric_limits<double>::min();
}

inline double train_and_score(const Learner& learner, const CertDataset& ds, const std::vector<std::size_t>& train,
                              const std::vector<std::size_t>& test, double floor) {
    const auto predicted = learner.train_eval(ds.subset(train), ds.subset(test));
    return std::max(-eval_model_performance(predicted), 0.0) + floor;
}

// Runs body(r) for r in [0, n) on up to hardware_concurrency threads; the first failure by
// index is rethrown after all workers finish.
template <class Body>
void parallel_repeats(std::size_t n, Body&& body) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t r = next++; r < n; r = next++) {
            try {
                body(r);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Pass iff every holdout split keeps its error within (1 + margin) of the random-split baseline.
inline FeatureCombinationResult test_new_feature_combinations(const CertDataset& ds, const Learner& learner,
                                                              std::uint64_t seed,
                                                              const FeatureCombinationOptions& opt = {}) {
    detail::require(ds.size() >= 2, "test_new_feature_combinations: at least 2 records required");
    detail::require(opt.train_fraction > 0.0 && opt.train_fraction < 1.0,
                    "test_new_feature_combinations: train_fraction must lie in (0, 1)");
    detail::require(opt.margin >= 0.0, "test_new_feature_combinations: margin must be >= 0");
    FeatureCombinationResult res;
    res.outcome.name = "new_feature_combinations";
    const Rng master(seed);

    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(ds.size()) * opt.train_fraction));
    detail::require(n_train >= 1 && n_train < ds.size(),
                    "test_new_feature_combinations: train_fraction leaves an empty side");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng = master.split(0);
    split_rng.shuffle(std::span(order));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    const double floor = detail::error_floor(ds);
    res.baseline_mse = detail::train_and_score(learner, ds, train, test, floor);

    const Eigen::MatrixXd vs = semantic_features(ds);
    res.holdout_mse.resize(opt.n_repeat);
    res.holdouts.resize(opt.n_repeat);
    detail::parallel_repeats(opt.n_repeat, [&](std::size_t r) {
        const auto split = samples_without_holdout_feature(vs, opt.delta, master.split(r + 1).next_u64());
        res.holdouts[r] = split.holdout;
        try {
            res.holdout_mse[r] = detail::train_and_score(learner, ds, split.train, split.test, floor);
        } catch (const AdapterError& e) {
            throw AdapterError("repeat " + std::to_string(r) + ": " + e.what());
        }
    });

    bool ok = true;
    double worst = 0.0;
    for (std::size_t r = 0; r < opt.n_repeat; ++r) {
        const double ratio = res.holdout_mse[r] / res.baseline_mse;
        res.error_ratios.push_back(ratio);
        worst = std::max(worst, ratio);
        if (!(ratio - 1.0 < opt.margin)) {
            ok = false;
            const auto& h = res.holdouts[r];
            res.outcome.notes.push_back("repeat " + std::to_string(r) + ": holdout of " + feature_name(ds.schema, h.feature_i) +
                                        " x " + feature_name(ds.schema, h.feature_j) + " around record " +
                                        ds.records[h.record].id + " has error ratio " + std::to_string(ratio));
        }
    }
    if (opt.n_repeat == 0) res.outcome.notes.push_back("no repeats executed");
    res.outcome.passed = ok;
    res.outcome.statistics["baseline_mse"] = res.baseline_mse;
    res.outcome.statistics["worst_error_ratio"] = worst;
    res.outcome.statistics["margin"] = opt.margin;
    res.outcome.statistics["n_repeat"] = static_cast<double>(opt.n_repeat);
    return res;
}

// ---------------------------------------------------------------------------
// Feature collapse

struct FeatureCollapseResult {
    TestOutcome outcome;
    double interval_lo = 0.0;
    double interval_hi = 0.0;
    double inside_fraction = 0.0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
};

constexpr double kCollapseTrim = 0.10;
constexpr double kCollapseMaxInside = 0.02;

// Retrains without the lowest and highest 10% by v_content[i]; pass iff fewer than 2% of the
// withheld records embed inside the [1%, 99%] quantile interval of the training embeddings.
inline FeatureCollapseResult test_no_feature_collapse(const CertDataset& ds, const Learner& encoder,
                                                      std::size_t content_index) {
    detail::require(content_index < ds.schema.k, "test_no_feature_collapse: content index out of range");
    const std::size_t n = ds.size();
    const auto trim = static_cast<std::size_t>(std::floor(static_cast<double>(n) * kCollapseTrim));
    detail::require(trim >= 1 && n > 2 * trim, "test_no_feature_collapse: dataset too small to trim 10% per side");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return ds.records[a].v_content[content_index] < ds.records[b].v_content[content_index];
    });
    FeatureCollapseResult res;
    res.outcome.name = "no_feature_collapse";
    res.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(trim), idx.end() - static_cast<std::ptrdiff_t>(trim));
    res.eval.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(trim));
    res.eval.insert(res.eval.end(), idx.end() - static_cast<std::ptrdiff_t>(trim), idx.end());
    std::sort(res.train.begin(), res.train.end());
    std::sort(res.eval.begin(), res.eval.end());

    std::vector<std::size_t> both = res.train;
    both.insert(both.end(), res.eval.begin(), res.eval.end());
    const CertDataset embedded = encoder.train_eval(ds.subset(res.train), ds.subset(both));
    auto embedding = [&](std::size_t row) {
        const auto& lat = embedded.records.at(row).latents;
        if (lat.empty() || lat.front().size() <= content_index)
            throw AdapterError("test_no_feature_collapse: encoder returned no latent " + std::to_string(content_index) +
                               " for record " + embedded.records.at(row).id);
        return lat.front()[content_index].mu;
    };
    std::vector<double> train_z;
    for (std::size_t r = 0; r < res.train.size(); ++r) train_z.push_back(embedding(r));
    res.interval_lo = empirical_quantile(train_z, 0.01);
    res.interval_hi = empirical_quantile(train_z, 0.99);
    std::size_t inside = 0;
    for (std::size_t r = res.train.size(); r < both.size(); ++r) {
        const double z = embedding(r);
        if (z >= res.interval_lo && z <= res.interval_hi) ++inside;
    }
    res.inside_fraction = static_cast<double>(inside) / static_cast<double>(res.eval.size());
    res.outcome.passed = res.inside_fraction < kCollapseMaxInside;
    res.outcome.statistics["inside_fraction"] = res.inside_fraction;
    res.outcome.statistics["interval_lo"] = res.interval_lo;
    res.outcome.statistics["interval_hi"] = res.interval_hi;
    res.outcome.statistics["content_index"] = static_cast<double>(content_index);
    if (!res.outcome.passed)
        res.outcome.notes.push_back(std::to_string(inside) + " of " + std::to_string(res.eval.size()) +
                                    " withheld records embed inside the training interval of z[" +
                                    std::to_string(content_index) + "]");
    return res;
}

// ---------------------------------------------------------------------------
// Ensemble disagreement

struct DisagreementOptions {
    double tau = 0.0;
    std::optional<double> expected_fp_rate;
    std::optional<double> expected_fn_rate;
    std::optional<std::vector<std::size_t>> ood_subset;
    std::optional<std::vector<std::size_t>> easy_subset;
};

struct DisagreementCheck {
    std::size_t n = 0;
    std::size_t n_flagged = 0;
    double rate = 0.0;
    std::optional<double> expected_rate;
    std::optional<bool> within_expected;
};

struct DisagreementReport {
    double tau = 0.0;
    std::vector<std::vector<double>> variances;  // [record][output]
    std::vector<bool> flagged;
    DisagreementCheck in_distribution;  // rejections outside the OOD subset
    std::optional<DisagreementCheck> easy;
    std::optional<DisagreementCheck> ood;  // detections
    std::vector<std::string> high_variance_ids;  // flagged in-distribution records
};

namespace detail {

inline DisagreementCheck count_flags(const std::vector<bool>& flagged, const std::vector<std::size_t>& rows) {
    DisagreementCheck c;
    c.n = rows.size();
    for (auto r : rows) c.n_flagged += flagged.at(r) ? 1 : 0;
    c.rate = c.n ? static_cast<double>(c.n_flagged) / static_cast<double>(c.n) : 0.0;
    return c;
}

}  // namespace detail

// member_means[e][record][output]: point predictions of each ensemble member. Variance across
// members uses the unbiased (E - 1) estimator; a record is flagged when any output exceeds tau.
inline DisagreementReport ensemble_disagreement_report(const std::vector<std::vector<std::vector<double>>>& member_means,
                                                       const std::vector<std::string>& ids,
                                                       const DisagreementOptions& opt) {
    detail::require(member_means.size() >= 2, "ensemble_disagreement_report: at least 2 ensemble members required");
    detail::require(std::isfinite(opt.tau) && opt.tau >= 0.0, "ensemble_disagreement_report: tau must be >= 0");
    const std::size_t n = ids.size();
    for (const auto& m : member_means)
        detail::require(m.size() == n, "ensemble_disagreement_report: member record counts differ");
    DisagreementReport rep;
    rep.tau = opt.tau;
    rep.variances.resize(n);
    rep.flagged.assign(n, false);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t outputs = member_means.front()[r].size();
        for (std::size_t o = 0; o < outputs; ++o) {
            std::vector<double> vals;
            for (const auto& m : member_means) {
                detail::require(m[r].size() == outputs, "ensemble_disagreement_report: member output counts differ");
                vals.push_back(m[r][o]);
            }
            rep.variances[r].push_back(sample_variance(vals));
            if (rep.variances[r].back() > opt.tau) rep.flagged[r] = true;
        }
    }
    std::vector<bool> is_ood(n, false);
    if (opt.ood_subset)
        for (auto r : *opt.ood_subset) {
            detail::require(r < n, "ensemble_disagreement_report: OOD subset index out of range");
            is_ood[r] = true;
        }
    std::vector<std::size_t> in_dist;
    for (std::size_t r = 0; r < n; ++r)
        if (!is_ood[r]) in_dist.push_back(r);
    rep.in_distribution = detail::count_flags(rep.flagged, in_dist);
    if (opt.expected_fp_rate) {
        rep.in_distribution.expected_rate = opt.expected_fp_rate;
        rep.in_distribution.within_expected = rep.in_distribution.rate <= *opt.expected_fp_rate;
    }
    if (opt.easy_subset) {
        for (auto r : *opt.easy_subset) detail::require(r < n, "ensemble_disagreement_report: easy subset index out of range");
        rep.easy = detail::count_flags(rep.flagged, *opt.easy_subset);
    }
    if (opt.ood_subset) {
        rep.ood = detail::count_flags(rep.flagged, *opt.ood_subset);
        if (opt.expected_fn_rate) {
            rep.ood->expected_rate = opt.expected_fn_rate;
            rep.ood->within_expected = 1.0 - rep.ood->rate <= *opt.expected_fn_rate;
        }
    }
    for (auto r : in_dist)
        if (rep.flagged[r]) rep.high_variance_ids.push_back(ids[r]);
    return rep;
}

// Members from latents: output o of member e is the head mean of content latent o, or the raw
// latent mean when no head is given.
inline DisagreementReport ensemble_disagreement_report(const CertDataset& ds, const DisagreementOptions& opt,
                                                       const std::optional<HeadConfig>& head = std::nullopt) {
    detail::require(ds.schema.E >= 2, "ensemble_disagreement_report: at least 2 ensemble members required");
    std::vector<std::vector<std::vector<double>>> means(ds.schema.E);
    std::vector<std::string> ids;
    for (const auto& r : ds.records) {
        ids.push_back(r.id);
        for (std::size_t e = 0; e < ds.schema.E; ++e) {
            std::vector<double> out;
            for (std::size_t o = 0; o < ds.schema.k; ++o) {
                const auto& z = r.latents.at(e).at(o);
                out.push_back(head ? head_transform(z, *head, o).mu() : z.mu);
            }
            means[e].push_back(std::move(out));
        }
    }
    return ensemble_disagreement_report(means, ids, opt);
}

// Members from separate prediction runs over the same records.
inline DisagreementReport ensemble_disagreement_report(const std::vector<CertDataset>& members,
                                                       const DisagreementOptions& opt) {
    detail::require(members.size() >= 2, "ensemble_disagreement_report: at least 2 ensemble members required");
    std::vector<std::vector<std::vector<double>>> means;
    std::vector<std::string> ids;
    for (const auto& r : members.front().records) ids.push_back(r.id);
    for (const auto& m : members) {
        detail::require(m.has_predictions(), "ensemble_disagreement_report: member without predictions");
        detail::require(m.size() == ids.size(), "ensemble_disagreement_report: member record counts differ");
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < m.size(); ++i) {
            detail::require(m.records[i].id == ids[i], "ensemble_disagreement_report: member record ids differ at " +
                                                           std::to_string(i));
            std::vector<double> out;
            for (const auto& d : *m.records[i].y_pred) out.push_back(mean(d));
            rows.push_back(std::move(out));
        }
        means.push_back(std::move(rows));
    }
    return ensemble_disagreement_report(means, ids, opt);
}

}  // namespace certkit
