#pragma once

// Marginal and conditional calibration, PIT dispersion and binomial aggregation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "certkit/datamodel.hpp"
#include "certkit/outcome.hpp"
#include "certkit/statdist.hpp"

namespace certkit {

inline constexpr std::size_t kGridSize = 20;

// 0.05, 0.10, ..., 1.00
inline std::array<double, kGridSize> calibration_grid() {
    std::array<double, kGridSize> ps{};
    for (std::size_t i = 0; i < kGridSize; ++i) ps[i] = static_cast<double>(i + 1) / 20.0;
    return ps;
}

struct CalibrationCurve {
    std::vector<double> ps;
    std::vector<double> observed_frequencies;
    std::size_t n = 0;
};

namespace detail {

inline void require_paired(std::size_t preds, std::size_t obs) {
    require(preds > 0, "calibration: empty input");
    require(preds == obs, "calibration: predictions and observations differ in length");
}

// Coverage sets for every grid probability; p = 1 is the support.
inline std::array<Interval, kGridSize> grid_intervals(const PredictiveDistribution& d) {
    const auto ps = calibration_grid();
    std::array<Interval, kGridSize> out{};
    for (std::size_t i = 0; i + 1 < kGridSize; ++i) out[i] = invcdf_interval(d, ps[i]);
    out[kGridSize - 1] = support(d);
    return out;
}

}  // namespace detail

inline CalibrationCurve compute_calibration_curve(const std::vector<PredictiveDistribution>& preds,
                                                  const std::vector<double>& obs) {
    detail::require_paired(preds.size(), obs.size());
    const auto ps = calibration_grid();
    // first_hit[j]: records whose smallest covering grid interval is j.
    std::array<std::size_t, kGridSize + 1> first_hit{};
    std::array<Interval, kGridSize> intervals{};
    const PredictiveDistribution* cached = nullptr;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (cached == nullptr || !(*cached == preds[i])) {
            intervals = detail::grid_intervals(preds[i]);
            cached = &preds[i];
        }
        std::size_t j = 0;
        while (j < kGridSize && !intervals[j].contains(obs[i])) ++j;
        ++first_hit[j];
    }
    CalibrationCurve c;
    c.n = preds.size();
    c.ps.assign(ps.begin(), ps.end());
    std::size_t covered = 0;
    for (std::size_t j = 0; j < kGridSize; ++j) {
        covered += first_hit[j];
        c.observed_frequencies.push_back(static_cast<double>(covered) / static_cast<double>(c.n));
    }
    return c;
}

inline TestOutcome evaluate_calibration_curve(const CalibrationCurve& c, double eps = 0.10) {
    detail::require(eps >= 0.0 && eps < 1.0, "calibration: eps must lie in [0, 1)");
    TestOutcome t;
    t.name = "calibration_curve";
    double worst_slack = std::numeric_limits<double>::infinity();
    double worst_p = 0.0;
    double worst_freq = 0.0;
    for (std::size_t i = 0; i < c.ps.size(); ++i) {
        const double slack = c.observed_frequencies[i] - c.ps[i] * (1.0 - eps);
        if (slack < worst_slack) {
            worst_slack = slack;
            worst_p = c.ps[i];
            worst_freq = c.observed_frequencies[i];
        }
    }
    t.passed = worst_slack >= 0.0;
    t.statistics = {{"n", static_cast<double>(c.n)},
                    {"eps", eps},
                    {"min_slack", worst_slack},
                    {"worst_p", worst_p},
                    {"worst_frequency", worst_freq}};
    return t;
}

inline TestOutcome test_calibration_curve(const std::vector<PredictiveDistribution>& preds,
                                          const std::vector<double>& obs, double eps = 0.10) {
    return evaluate_calibration_curve(compute_calibration_curve(preds, obs), eps);
}

inline std::vector<double> pit_values(const std::vector<PredictiveDistribution>& preds, const std::vector<double>& obs) {
    detail::require(preds.size() == obs.size(), "pit_values: predictions and observations differ in length");
    std::vector<double> u(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) u[i] = cdf(preds[i], obs[i]);
    return u;
}

// Unbiased sample variance.
inline double sample_variance(const std::vector<double>& xs) {
    detail::require(xs.size() >= 2, "sample_variance: need at least 2 values");
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / static_cast<double>(xs.size() - 1);
}

inline TestOutcome test_dispersion(const std::vector<PredictiveDistribution>& preds, const std::vector<double>& obs,
                                   double eps = 0.10) {
    detail::require(preds.size() >= 2, "test_dispersion: need at least 2 records");
    detail::require(eps >= 0.0 && eps < 1.0, "test_dispersion: eps must lie in [0, 1)");
    const double var = sample_variance(pit_values(preds, obs));
    const double threshold = (1.0 / 12.0) * (1.0 + eps);
    TestOutcome t;
    t.name = "dispersion";
    t.passed = var <= threshold;
    t.statistics = {{"n", static_cast<double>(preds.size())}, {"eps", eps}, {"pit_variance", var}, {"threshold", threshold}};
    return t;
}

struct HistogramBin {
    double lo;
    double hi;
    std::size_t count;
};

inline std::vector<HistogramBin> pit_histogram(const std::vector<double>& pit, std::size_t bins = 20) {
    detail::require(bins >= 1, "pit_histogram: bins must be >= 1");
    std::vector<HistogramBin> h(bins);
    for (std::size_t b = 0; b < bins; ++b)
        h[b] = {static_cast<double>(b) / static_cast<double>(bins), static_cast<double>(b + 1) / static_cast<double>(bins), 0};
    for (double u : pit) {
        auto b = static_cast<std::size_t>(std::clamp(u, 0.0, 1.0) * static_cast<double>(bins));
        ++h[std::min(b, bins - 1)].count;
    }
    return h;
}

inline void write_curve_csv(std::ostream& os, const CalibrationCurve& c) {
    os << "p,observed_frequency\n";
    for (std::size_t i = 0; i < c.ps.size(); ++i) os << c.ps[i] << ',' << c.observed_frequencies[i] << '\n';
}

inline void write_histogram_csv(std::ostream& os, const std::vector<HistogramBin>& h) {
    os << "bin_lo,bin_hi,count\n";
    for (const auto& b : h) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
}

// ---------------------------------------------------------------------------
// Conditional calibration

// Records with a value for feature f, stably sorted by it and cut into
// consecutive groups of n_min; a short remainder joins the last group.
inline std::vector<std::vector<std::size_t>> partition_subgroups(const CertDataset& ds, std::size_t feature,
                                                                 std::size_t n_min = 10000) {
    detail::require(n_min >= 1, "partition_subgroups: n_min must be >= 1");
    const auto values = ds.feature(feature);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i]) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *values[a] < *values[b]; });
    std::vector<std::vector<std::size_t>> groups;
    if (idx.empty()) return groups;
    const std::size_t n_groups = std::max<std::size_t>(1, idx.size() / n_min);
    for (std::size_t g = 0; g < n_groups; ++g) {
        const auto begin = idx.begin() + static_cast<std::ptrdiff_t>(g * n_min);
        const auto end = g + 1 == n_groups ? idx.end() : begin + static_cast<std::ptrdiff_t>(n_min);
        groups.emplace_back(begin, end);
    }
    return groups;
}

struct SubgroupResult {
    std::size_t output = 0;
    std::vector<Subgroup> cell;  // one entry, or two for pairwise conditioning
    TestOutcome calibration;
    TestOutcome dispersion;
};

struct ConditionalResult {
    std::size_t n_tests = 0;
    std::size_t n_fail_calibration = 0;
    std::size_t n_fail_dispersion = 0;
    std::vector<SubgroupResult> subgroups;
    std::vector<std::string> notes;
};

struct ConditionalOptions {
    std::size_t n_min = 10000;
    double eps = 0.10;
    bool pairwise = false;
};

namespace detail {

inline Subgroup describe(const CertDataset& ds, std::size_t feature, const std::vector<std::size_t>& group) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto i : group) {
        const auto& r = ds.records[i];
        const double v = feature < ds.schema.k ? r.v_content[feature] : *r.v_style[feature - ds.schema.k];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {feature, lo, hi, group.size()};
}

inline void run_cell(const CertDataset& ds, std::size_t output, std::vector<Subgroup> cell,
                     const std::vector<std::size_t>& group, double eps, ConditionalResult& res) {
    std::vector<PredictiveDistribution> preds;
    std::vector<double> obs;
    preds.reserve(group.size());
    obs.reserve(group.size());
    for (auto i : group) {
        preds.push_back(ds.records[i].y_pred->at(output));
        obs.push_back(ds.records[i].y_obs[output]);
    }
    SubgroupResult s;
    s.output = output;
    s.cell = std::move(cell);
    s.calibration = test_calibration_curve(preds, obs, eps);
    s.calibration.subgroup = s.cell.front();
    if (group.size() >= 2) {
        s.dispersion = test_dispersion(preds, obs, eps);
        s.dispersion.subgroup = s.cell.front();
    } else {
        s.dispersion = skipped_outcome("dispersion", "subgroup has fewer than 2 records");
    }
    ++res.n_tests;
    if (!s.calibration.passed) ++res.n_fail_calibration;
    if (!s.dispersion.passed && !s.dispersion.skipped) ++res.n_fail_dispersion;
    res.subgroups.push_back(std::move(s));
}

}  // namespace detail

// Calibration and dispersion per subgroup of every semantic feature with labels.
inline ConditionalResult test_conditional_calibration(const CertDataset& ds, std::size_t output,
                                                      const ConditionalOptions& opt = {}) {
    detail::require(ds.has_predictions(), "test_conditional_calibration: dataset carries no predictions");
    detail::require(output < ds.schema.m, "test_conditional_calibration: output index out of range");
    ConditionalResult res;
    const std::size_t n_features = ds.schema.k + ds.schema.l;
    for (std::size_t f = 0; f < n_features; ++f) {
        const auto groups = partition_subgroups(ds, f, opt.n_min);
        if (groups.empty()) {
            res.notes.push_back(feature_name(ds.schema, f) + " has no labels; not conditioned on");
            continue;
        }
        if (groups.size() == 1 && groups.front().size() < opt.n_min)
            res.notes.push_back(feature_name(ds.schema, f) + ": only " + std::to_string(groups.front().size()) +
                                " labeled records, below n_min; tested as a single group");
        for (const auto& g : groups) detail::run_cell(ds, output, {detail::describe(ds, f, g)}, g, opt.eps, res);
    }
    if (!opt.pairwise) return res;
    // Outer bins of about sqrt(n / n_min) * n_min records, each split again on the second feature.
    for (std::size_t f1 = 0; f1 < n_features; ++f1) {
        for (std::size_t f2 = f1 + 1; f2 < n_features; ++f2) {
            CertDataset labeled{ds.schema, {}};
            std::vector<std::size_t> origin;
            const auto v1 = ds.feature(f1);
            const auto v2 = ds.feature(f2);
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (v1[i] && v2[i]) {
                    labeled.records.push_back(ds.records[i]);
                    origin.push_back(i);
                }
            if (labeled.empty()) continue;
            const auto per_side = static_cast<std::size_t>(
                std::floor(std::sqrt(static_cast<double>(labeled.size()) / static_cast<double>(opt.n_min))));
            const std::size_t outer_min = opt.n_min * std::max<std::size_t>(1, per_side);
            for (const auto& outer : partition_subgroups(labeled, f1, outer_min)) {
                const auto inner_ds = labeled.subset(outer);
                for (const auto& inner : partition_subgroups(inner_ds, f2, opt.n_min)) {
                    std::vector<std::size_t> cell_idx;
                    for (auto i : inner) cell_idx.push_back(origin[outer[i]]);
                    detail::run_cell(ds, output,
                                     {detail::describe(ds, f1, cell_idx), detail::describe(ds, f2, cell_idx)}, cell_idx,
                                     opt.eps, res);
                }
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Binomial aggregation

inline TestOutcome test_probability_n_fails(std::int64_t n_tests, std::int64_t n_fail, double p_fail = 0.01,
                                            double thresh = 0.001) {
    detail::require(n_tests >= 0 && n_fail >= 0, "test_probability_n_fails: counts must be >= 0");
    detail::require(n_fail <= n_tests, "test_probability_n_fails: n_fail exceeds n_tests");
    detail::require(p_fail >= 0.0 && p_fail <= 1.0, "test_probability_n_fails: p_fail must lie in [0, 1]");
    // fma rounds once, so its sign is the exact sign of n*p - k.
    const bool within_rate =
        std::fma(static_cast<double>(n_tests), p_fail, -static_cast<double>(n_fail)) >= 0.0;
    const double pmf = binomial_pmf(n_tests, p_fail, n_fail);
    TestOutcome t;
    t.name = "probability_n_fails";
    t.passed = within_rate || pmf >= thresh;
    t.statistics = {{"n_tests", static_cast<double>(n_tests)},
                    {"n_fail", static_cast<double>(n_fail)},
                    {"p_fail", p_fail},
                    {"threshold", thresh},
                    {"binomial_pmf", pmf}};
    return t;
}

// ---------------------------------------------------------------------------
// Uncertainty-quantification certification

struct UqOptions {
    double eps = 0.10;
    std::size_t n_min = 10000;
    double p_fail = 0.01;
    double thresh = 0.001;
    bool pairwise = false;
};

struct UqSection {
    bool skipped = false;
    bool certified = false;
    std::vector<TestOutcome> marginal;      // calibration and dispersion per output
    std::vector<CalibrationCurve> curves;   // per output
    std::vector<std::vector<HistogramBin>> pit_histograms;
    ConditionalResult conditional;          // aggregated over outputs
    TestOutcome conditional_calibration;
    TestOutcome conditional_dispersion;
    std::vector<std::string> failing_subgroups;
    std::vector<std::string> notes;
};

inline std::string describe_cell(const Schema& s, const SubgroupResult& r) {
    std::string out = "output " + std::to_string(r.output) + ":";
    for (const auto& c : r.cell) {
        std::ostringstream ss;
        ss << ' ' << feature_name(s, c.feature) << " in [" << c.lo << ", " << c.hi << "]";
        out += ss.str();
    }
    return out + " (n=" + std::to_string(r.cell.front().size) + ")";
}

inline UqSection certify_uncertainty_quantification(const CertDataset& ds, const UqOptions& opt = {}) {
    UqSection sec;
    if (!ds.has_predictions()) {
        sec.skipped = true;
        sec.notes.push_back("skipped: no predictions");
        return sec;
    }
    bool marginal_ok = true;
    for (std::size_t o = 0; o < ds.schema.m; ++o) {
        const auto preds = ds.predictions(o);
        const auto obs = ds.observations(o);
        const auto curve = compute_calibration_curve(preds, obs);
        auto cal = evaluate_calibration_curve(curve, opt.eps);
        cal.name += "[" + std::to_string(o) + "]";
        marginal_ok = marginal_ok && cal.passed;
        sec.marginal.push_back(std::move(cal));
        if (preds.size() >= 2) {
            auto disp = test_dispersion(preds, obs, opt.eps);
            disp.name += "[" + std::to_string(o) + "]";
            marginal_ok = marginal_ok && disp.passed;
            sec.marginal.push_back(std::move(disp));
        }
        sec.curves.push_back(curve);
        sec.pit_histograms.push_back(pit_histogram(pit_values(preds, obs)));

        auto cond = test_conditional_calibration(ds, o, {opt.n_min, opt.eps, opt.pairwise});
        sec.conditional.n_tests += cond.n_tests;
        sec.conditional.n_fail_calibration += cond.n_fail_calibration;
        sec.conditional.n_fail_dispersion += cond.n_fail_dispersion;
        for (auto& n : cond.notes) sec.conditional.notes.push_back(std::move(n));
        for (auto& s : cond.subgroups) sec.conditional.subgroups.push_back(std::move(s));
    }
    for (const auto& s : sec.conditional.subgroups) {
        if (!s.calibration.passed) sec.failing_subgroups.push_back("calibration " + describe_cell(ds.schema, s));
        if (!s.dispersion.passed && !s.dispersion.skipped)
            sec.failing_subgroups.push_back("dispersion " + describe_cell(ds.schema, s));
    }
    const auto n = static_cast<std::int64_t>(sec.conditional.n_tests);
    sec.conditional_calibration = test_probability_n_fails(
        n, static_cast<std::int64_t>(sec.conditional.n_fail_calibration), opt.p_fail, opt.thresh);
    sec.conditional_calibration.name = "conditional_calibration";
    sec.conditional_dispersion = test_probability_n_fails(
        n, static_cast<std::int64_t>(sec.conditional.n_fail_dispersion), opt.p_fail, opt.thresh);
    sec.conditional_dispersion.name = "conditional_dispersion";
    sec.certified = marginal_ok && sec.conditional_calibration.passed && sec.conditional_dispersion.passed;
    return sec;
}

}  // namespace certkit
