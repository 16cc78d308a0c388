#pragma once

// Ordinary least squares with t-tests, and the disentanglement checks built on it.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "certkit/datamodel.hpp"
#include "certkit/outcome.hpp"
#include "certkit/statdist.hpp"

namespace certkit {

struct OlsFit {
    Eigen::VectorXd betas;  // regressors in design order, intercept last
    Eigen::VectorXd std_errors;
    Eigen::VectorXd t_stats;
    std::vector<double> p_values;
    double sigma2_hat = 0.0;
    std::int64_t dof = 0;
};

// Regress target on [design, 1]. Columns are scaled to unit norm before a
// column-pivoted QR; a scaled pivot below 1e-10 is a singular design.
inline OlsFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& target) {
    const Eigen::Index n = design.rows();
    const Eigen::Index p = design.cols() + 1;
    detail::require(target.size() == n, "fit_ols: target length differs from design rows");
    detail::require(n > p, "fit_ols: need more observations than coefficients (n > p + 1)");
    detail::require(design.allFinite() && target.allFinite(), "fit_ols: non-finite input");

    Eigen::MatrixXd x(n, p);
    x.leftCols(p - 1) = design;
    x.col(p - 1).setOnes();
    Eigen::VectorXd scale(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        scale[j] = x.col(j).norm();
        if (scale[j] == 0.0) throw SingularDesign("fit_ols: column " + std::to_string(j) + " is identically zero");
        x.col(j) /= scale[j];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < p; ++j)
        if (std::abs(r(j, j)) < 1e-10)
            throw SingularDesign("fit_ols: design is rank deficient (pivot " + std::to_string(std::abs(r(j, j))) + ")");

    const Eigen::VectorXd scaled_beta = qr.solve(target);
    // diag((X^T X)^-1) in scaled, pivoted coordinates = squared row norms of R^-1.
    const Eigen::MatrixXd r_inv =
        r.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const auto& perm = qr.colsPermutation().indices();

    OlsFit fit;
    fit.dof = static_cast<std::int64_t>(n - p);
    fit.betas = scaled_beta.cwiseQuotient(scale);
    const double rss = (x * scaled_beta - target).squaredNorm();
    fit.sigma2_hat = rss / static_cast<double>(fit.dof);
    fit.std_errors.resize(p);
    fit.t_stats.resize(p);
    fit.p_values.resize(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) {
        const Eigen::Index j = perm[k];
        const double var_scaled = r_inv.row(k).squaredNorm();
        fit.std_errors[j] = std::sqrt(fit.sigma2_hat * var_scaled) / scale[j];
    }
    for (Eigen::Index j = 0; j < p; ++j) {
        double t;
        if (fit.std_errors[j] > 0.0) t = fit.betas[j] / fit.std_errors[j];
        else t = fit.betas[j] == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), fit.betas[j]);
        fit.t_stats[j] = t;
        fit.p_values[static_cast<std::size_t>(j)] = student_t_p_value(t, fit.dof);
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Disentanglement verification

struct FactorRegression {
    std::string target;          // e.g. "v_content[0]"
    std::vector<std::string> regressors;
    OlsFit fit;
    std::vector<std::size_t> significant;  // regressor indices with p < alpha (intercept excluded)
};

struct OneToOneResult {
    TestOutcome outcome;
    std::vector<FactorRegression> regressions;
    std::vector<std::optional<std::size_t>> mapping;  // factor -> latent
};

// Each content factor must be explained by exactly one latent, and no two
// factors by the same latent.
inline OneToOneResult test_1_to_1_mapping(const Eigen::MatrixXd& latents, const Eigen::MatrixXd& v_content,
                                          double significance_level = 0.05) {
    detail::require(latents.rows() == v_content.rows(), "test_1_to_1_mapping: row counts differ");
    detail::require(significance_level > 0.0 && significance_level < 1.0,
                    "test_1_to_1_mapping: significance level must lie in (0, 1)");
    OneToOneResult res;
    res.outcome.name = "one_to_one_mapping";
    const auto k = static_cast<std::size_t>(v_content.cols());
    const auto z = static_cast<std::size_t>(latents.cols());
    std::vector<std::string> names;
    for (std::size_t j = 0; j < z; ++j) names.push_back("z[" + std::to_string(j) + "]");
    bool single_ok = true;
    for (std::size_t i = 0; i < k; ++i) {
        FactorRegression fr;
        fr.target = "v_content[" + std::to_string(i) + "]";
        fr.regressors = names;
        fr.fit = fit_ols(latents, v_content.col(static_cast<Eigen::Index>(i)));
        for (std::size_t j = 0; j < z; ++j)
            if (fr.fit.p_values[j] < significance_level) fr.significant.push_back(j);
        res.outcome.statistics["factor" + std::to_string(i) + ".n_significant"] =
            static_cast<double>(fr.significant.size());
        if (fr.significant.size() == 1) {
            res.mapping.emplace_back(fr.significant.front());
            res.outcome.statistics["factor" + std::to_string(i) + ".latent"] =
                static_cast<double>(fr.significant.front());
        } else {
            res.mapping.emplace_back(std::nullopt);
            single_ok = false;
            res.outcome.notes.push_back(fr.target + " has " + std::to_string(fr.significant.size()) +
                                        " significant latents, expected exactly 1");
        }
        res.regressions.push_back(std::move(fr));
    }
    bool distinct = true;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b)
            if (res.mapping[a] && res.mapping[b] && *res.mapping[a] == *res.mapping[b]) {
                distinct = false;
                res.outcome.notes.push_back("v_content[" + std::to_string(a) + "] and v_content[" + std::to_string(b) +
                                            "] both map to z[" + std::to_string(*res.mapping[a]) + "]");
            }
    res.outcome.statistics["significance_level"] = significance_level;
    res.outcome.statistics["n_factors"] = static_cast<double>(k);
    res.outcome.passed = single_ok && distinct;
    return res;
}

struct SeparationResult {
    TestOutcome outcome;
    std::vector<FactorRegression> regressions;
    std::vector<std::size_t> offending_content;  // content latent indices significant for some style label
};

// Content latents must carry no information about labeled style features.
// v_style uses NaN for a missing label; rows without a label are dropped per feature.
inline SeparationResult test_content_style_separation(const Eigen::MatrixXd& latents_content,
                                                      const Eigen::MatrixXd& latents_style,
                                                      const Eigen::MatrixXd& v_style,
                                                      double significance_level = 0.05) {
    const Eigen::Index n = latents_content.rows();
    detail::require(latents_style.rows() == n && v_style.rows() == n, "test_content_style_separation: row counts differ");
    SeparationResult res;
    res.outcome.name = "content_style_separation";
    const Eigen::Index k = latents_content.cols();
    const Eigen::Index l = latents_style.cols();
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < k; ++j) names.push_back("z_content[" + std::to_string(j) + "]");
    for (Eigen::Index j = 0; j < l; ++j) names.push_back("z_style[" + std::to_string(j) + "]");

    std::size_t tested = 0;
    std::vector<bool> offending(static_cast<std::size_t>(k), false);
    for (Eigen::Index s = 0; s < v_style.cols(); ++s) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!std::isnan(v_style(i, s))) rows.push_back(i);
        if (rows.empty()) continue;
        Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()), k + l);
        Eigen::VectorXd target(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto rr = static_cast<Eigen::Index>(r);
            design.row(rr).head(k) = latents_content.row(rows[r]);
            design.row(rr).tail(l) = latents_style.row(rows[r]);
            target[rr] = v_style(rows[r], s);
        }
        FactorRegression fr;
        fr.target = "v_style[" + std::to_string(s) + "]";
        fr.regressors = names;
        fr.fit = fit_ols(design, target);
        for (Eigen::Index j = 0; j < k; ++j)
            if (fr.fit.p_values[static_cast<std::size_t>(j)] < significance_level) {
                fr.significant.push_back(static_cast<std::size_t>(j));
                offending[static_cast<std::size_t>(j)] = true;
                res.outcome.notes.push_back("z_content[" + std::to_string(j) + "] predicts " + fr.target + " (p = " +
                                            std::to_string(fr.fit.p_values[static_cast<std::size_t>(j)]) + ")");
            }
        double min_p = 1.0;
        for (Eigen::Index j = 0; j < k; ++j) min_p = std::min(min_p, fr.fit.p_values[static_cast<std::size_t>(j)]);
        res.outcome.statistics["style" + std::to_string(s) + ".min_content_p"] = min_p;
        res.regressions.push_back(std::move(fr));
        ++tested;
    }
    if (tested == 0) {
        auto out = skipped_outcome("content_style_separation", "no labeled style features");
        out.statistics["n_style_features"] = 0.0;
        res.outcome = out;
        return res;
    }
    for (std::size_t j = 0; j < offending.size(); ++j)
        if (offending[j]) res.offending_content.push_back(j);
    res.outcome.statistics["n_style_features"] = static_cast<double>(tested);
    res.outcome.statistics["significance_level"] = significance_level;
    res.outcome.passed = res.offending_content.empty();
    return res;
}

// factor, latent_index, beta, p_value; the intercept row has latent_index "intercept".
inline void write_pvalue_csv(std::ostream& os, const std::vector<FactorRegression>& regs) {
    os << "factor,latent_index,beta,p_value\n";
    for (const auto& r : regs) {
        for (std::size_t j = 0; j < r.fit.p_values.size(); ++j) {
            os << r.target << ',';
            if (j < r.regressors.size()) os << j;
            else os << "intercept";
            os << ',' << r.fit.betas[static_cast<Eigen::Index>(j)] << ',' << r.fit.p_values[j] << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset accessors

// Latent means of one ensemble member, n x (k + l).
inline Eigen::MatrixXd latent_means(const CertDataset& ds, std::size_t member = 0) {
    detail::require(member < ds.schema.E, "latent_means: member index out of range");
    const auto n = static_cast<Eigen::Index>(ds.size());
    const auto d = static_cast<Eigen::Index>(ds.schema.k + ds.schema.l);
    Eigen::MatrixXd z(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = ds.records[static_cast<std::size_t>(i)].latents[member][static_cast<std::size_t>(j)].mu;
    return z;
}

inline Eigen::MatrixXd content_matrix(const CertDataset& ds) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.schema.k));
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.schema.k; ++j)
            v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.records[i].v_content[j];
    return v;
}

// NaN marks a missing label.
inline Eigen::MatrixXd style_matrix(const CertDataset& ds) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.schema.l));
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.schema.l; ++j)
            v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                ds.records[i].v_style[j].value_or(std::numeric_limits<double>::quiet_NaN());
    return v;
}

}  // namespace certkit
