#pragma once

// In-process reference learners on content features, for tests and offline runs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "certkit/adapter.hpp"

namespace certkit {

namespace detail {

inline Eigen::MatrixXd content_design(const CertDataset& ds, bool intercept) {
    const auto n = static_cast<Eigen::Index>(ds.size());
    const auto k = static_cast<Eigen::Index>(ds.schema.k);
    Eigen::MatrixXd x(n, k + (intercept ? 1 : 0));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) x(i, j) = ds.records[static_cast<std::size_t>(i)].v_content[static_cast<std::size_t>(j)];
        if (intercept) x(i, k) = 1.0;
    }
    return x;
}

inline double positive_sd(double sd) { return std::max(sd, std::numeric_limits<double>::min()); }

inline void require_training_data(const CertDataset& train, const char* who) {
    detail::require(!train.empty(), std::string(who) + ": empty training set");
}

}  // namespace detail

// Least squares on v_content with intercept; predicts N(fit, residual sd).
class LinearLearner : public Learner {
public:
    CertDataset train_eval(const CertDataset& train, const CertDataset& eval) const override {
        detail::require_training_data(train, "LinearLearner");
        const Eigen::MatrixXd x = detail::content_design(train, true);
        const Eigen::MatrixXd xe = detail::content_design(eval, true);
        CertDataset out = eval;
        for (auto& r : out.records) r.y_pred.emplace();
        for (std::size_t o = 0; o < train.schema.m; ++o) {
            const auto y = train.observations(o);
            const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
            const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(yv);
            const double dof = std::max(1.0, static_cast<double>(x.rows() - x.cols()));
            const double sd = detail::positive_sd(std::sqrt((x * beta - yv).squaredNorm() / dof));
            const Eigen::VectorXd fit = xe * beta;
            for (std::size_t i = 0; i < out.size(); ++i)
                out.records[i].y_pred->push_back(Normal(fit[static_cast<Eigen::Index>(i)], sd));
        }
        return out;
    }
};

// Memorizer: predicts the observation of the nearest training record in content space.
class NearestNeighborLearner : public Learner {
public:
    CertDataset train_eval(const CertDataset& train, const CertDataset& eval) const override {
        detail::require_training_data(train, "NearestNeighborLearner");
        const Eigen::MatrixXd x = detail::content_design(train, false);
        const Eigen::MatrixXd xe = detail::content_design(eval, false);
        std::vector<double> sd(train.schema.m);
        for (std::size_t o = 0; o < train.schema.m; ++o) {
            const auto y = train.observations(o);
            const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
            sd[o] = detail::positive_sd(std::sqrt((yv.array() - yv.mean()).square().mean()));
        }
        CertDataset out = eval;
        for (Eigen::Index i = 0; i < xe.rows(); ++i) {
            Eigen::Index best = 0;
            (x.rowwise() - xe.row(i)).rowwise().squaredNorm().minCoeff(&best);
            auto& r = out.records[static_cast<std::size_t>(i)];
            r.y_pred.emplace();
            for (std::size_t o = 0; o < train.schema.m; ++o)
                r.y_pred->push_back(Normal(train.records[static_cast<std::size_t>(best)].y_obs[o], sd[o]));
        }
        return out;
    }
};

enum class EncoderShape { Monotone, Saturating, Constant };

// Encoder stub: latent i is a function of v_content[i] (style latents copy the label or 0).
// Monotone is the identity; Saturating clips to the central 90% of training values;
// Constant maps everything to 0.
class StubEncoder : public Learner {
public:
    explicit StubEncoder(EncoderShape shape) : shape_(shape) {}

    CertDataset train_eval(const CertDataset& train, const CertDataset& eval) const override {
        detail::require_training_data(train, "StubEncoder");
        const std::size_t k = train.schema.k;
        std::vector<double> lo(k), hi(k);
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> v;
            v.reserve(train.size());
            for (const auto& r : train.records) v.push_back(r.v_content[j]);
            lo[j] = empirical_quantile(v, 0.05);
            hi[j] = empirical_quantile(v, 0.95);
        }
        CertDataset out = eval;
        out.schema.E = 1;
        for (auto& r : out.records) {
            std::vector<LatentGaussian> z;
            for (std::size_t j = 0; j < k; ++j) {
                const double v = r.v_content[j];
                double mu = v;
                if (shape_ == EncoderShape::Saturating) mu = std::clamp(v, lo[j], hi[j]);
                if (shape_ == EncoderShape::Constant) mu = 0.0;
                z.push_back({mu, 1.0});
            }
            for (const auto& s : r.v_style) z.push_back({s.value_or(0.0), 1.0});
            r.latents = {std::move(z)};
        }
        return out;
    }

private:
    EncoderShape shape_;
};

}  // namespace certkit
