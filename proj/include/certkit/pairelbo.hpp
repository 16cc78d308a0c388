#pragma once

// Weakly-supervised pairwise ELBO on an affine toy VAE, with analytic gradients.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "certkit/datamodel.hpp"
#include "certkit/pairs.hpp"
#include "certkit/rng.hpp"
#include "certkit/statdist.hpp"

namespace certkit {

inline Normal average_normals(const Normal& d1, const Normal& d2) {
    return Normal(0.5 * (d1.mu() + d2.mu()), 0.5 * (d1.sigma() + d2.sigma()));
}

struct PairStatistics {
    Eigen::VectorXd mu_lhs, sigma_lhs, mu_rhs, sigma_rhs;
};

// Dimensions in S carry the averaged statistics on both sides.
inline PairStatistics masked_pair_statistics(const Eigen::VectorXd& mu_lhs, const Eigen::VectorXd& logvar_lhs,
                                             const Eigen::VectorXd& mu_rhs, const Eigen::VectorXd& logvar_rhs,
                                             const std::vector<std::size_t>& shared) {
    const auto n = mu_lhs.size();
    detail::require(logvar_lhs.size() == n && mu_rhs.size() == n && logvar_rhs.size() == n,
                    "masked_pair_statistics: dimensions differ");
    PairStatistics s{mu_lhs, (0.5 * logvar_lhs).array().exp().matrix(), mu_rhs,
                     (0.5 * logvar_rhs).array().exp().matrix()};
    for (auto i : shared) {
        detail::require(i < static_cast<std::size_t>(n), "masked_pair_statistics: shared index " + std::to_string(i) +
                                                             " outside latent range");
        const auto j = static_cast<Eigen::Index>(i);
        s.mu_lhs[j] = s.mu_rhs[j] = 0.5 * (mu_lhs[j] + mu_rhs[j]);
        s.sigma_lhs[j] = s.sigma_rhs[j] = 0.5 * (s.sigma_lhs[j] + s.sigma_rhs[j]);
    }
    return s;
}

// KL(N(mu, diag sigma^2) || N(0, lambda I)).
inline double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, double lambda = 1.0) {
    detail::require(mu.size() == sigma.size(), "gaussian_kl: dimensions differ");
    detail::require(lambda > 0.0, "gaussian_kl: lambda must be > 0");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        detail::require(sigma[i] > 0.0, "gaussian_kl: sigma must be > 0");
        acc += (mu[i] * mu[i] + sigma[i] * sigma[i]) / lambda - 2.0 * std::log(sigma[i]) - 1.0 + std::log(lambda);
    }
    return 0.5 * acc;
}

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// Binary cross-entropy with logits: sum of softplus(l) - t l.
inline double bernoulli_recon_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& target) {
    detail::require(logits.size() == target.size(), "bernoulli_recon_loss: lengths differ");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        detail::require(target[i] >= 0.0 && target[i] <= 1.0, "bernoulli_recon_loss: target outside [0, 1]");
        acc += detail::softplus(logits[i]) - target[i] * logits[i];
    }
    return acc;
}

// Affine encoder x -> (mu, logvar) and affine decoder z -> logits. The encoder sees
// x - input_center; the center is fixed data preprocessing, not a trained parameter.
struct ToyVae {
    std::size_t k = 0;
    std::size_t l = 0;
    Eigen::VectorXd input_center;
    Eigen::MatrixXd enc_mu_w;
    Eigen::VectorXd enc_mu_b;
    Eigen::MatrixXd enc_logvar_w;
    Eigen::VectorXd enc_logvar_b;
    Eigen::MatrixXd dec_w;
    Eigen::VectorXd dec_b;

    std::size_t latent_dim() const { return k + l; }
    std::size_t input_dim() const { return static_cast<std::size_t>(dec_b.size()); }

    static ToyVae zeros(std::size_t input_dim, std::size_t k, std::size_t l) {
        const auto d = static_cast<Eigen::Index>(input_dim);
        const auto f = static_cast<Eigen::Index>(k + l);
        return {k,
                l,
                Eigen::VectorXd::Zero(d),
                Eigen::MatrixXd::Zero(f, d),
                Eigen::VectorXd::Zero(f),
                Eigen::MatrixXd::Zero(f, d),
                Eigen::VectorXd::Zero(f),
                Eigen::MatrixXd::Zero(d, f),
                Eigen::VectorXd::Zero(d)};
    }

    // Weights N(0, scale^2 / fan_in), biases zero.
    static ToyVae random(std::size_t input_dim, std::size_t k, std::size_t l, std::uint64_t seed, double scale = 1.0) {
        detail::require(input_dim >= 1 && k + l >= 1, "ToyVae: empty dimensions");
        ToyVae m = zeros(input_dim, k, l);
        Rng rng(seed);
        const double enc_sd = scale / std::sqrt(static_cast<double>(input_dim));
        const double dec_sd = scale / std::sqrt(static_cast<double>(k + l));
        for (Eigen::Index i = 0; i < m.enc_mu_w.size(); ++i) m.enc_mu_w.data()[i] = rng.normal(0.0, enc_sd);
        for (Eigen::Index i = 0; i < m.enc_logvar_w.size(); ++i) m.enc_logvar_w.data()[i] = rng.normal(0.0, enc_sd);
        for (Eigen::Index i = 0; i < m.dec_w.size(); ++i) m.dec_w.data()[i] = rng.normal(0.0, dec_sd);
        return m;
    }

    std::size_t n_parameters() const {
        return static_cast<std::size_t>(enc_mu_w.size() + enc_mu_b.size() + enc_logvar_w.size() + enc_logvar_b.size() +
                                        dec_w.size() + dec_b.size());
    }

    template <class F>
    void for_each_block(F&& f) {
        f(enc_mu_w.data(), enc_mu_w.size());
        f(enc_mu_b.data(), enc_mu_b.size());
        f(enc_logvar_w.data(), enc_logvar_w.size());
        f(enc_logvar_b.data(), enc_logvar_b.size());
        f(dec_w.data(), dec_w.size());
        f(dec_b.data(), dec_b.size());
    }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd theta(static_cast<Eigen::Index>(n_parameters()));
        Eigen::Index at = 0;
        const_cast<ToyVae*>(this)->for_each_block([&](double* p, Eigen::Index n) {
            theta.segment(at, n) = Eigen::Map<Eigen::VectorXd>(p, n);
            at += n;
        });
        return theta;
    }

    void set_parameters(const Eigen::VectorXd& theta) {
        detail::require(theta.size() == static_cast<Eigen::Index>(n_parameters()), "ToyVae: parameter count mismatch");
        Eigen::Index at = 0;
        for_each_block([&](double* p, Eigen::Index n) {
            Eigen::Map<Eigen::VectorXd>(p, n) = theta.segment(at, n);
            at += n;
        });
    }

    Eigen::VectorXd encode_mu(const Eigen::VectorXd& x) const { return enc_mu_w * (x - input_center) + enc_mu_b; }
    Eigen::VectorXd encode_logvar(const Eigen::VectorXd& x) const {
        return enc_logvar_w * (x - input_center) + enc_logvar_b;
    }
    Eigen::VectorXd decode(const Eigen::VectorXd& z) const { return dec_w * z + dec_b; }
};

struct LossAndGradient {
    double loss = 0.0;
    ToyVae gradient;
};

namespace detail {

inline Eigen::VectorXd as_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Inputs stacked column-wise, with the shared-index mask (1 = averaged).
struct StackedBatch {
    Eigen::MatrixXd lhs, rhs, mask;
    std::vector<bool> lhs_first;  // noise order, so the loss depends only on the unordered pair
};

inline StackedBatch stack_batch(const PairBatch& batch, std::size_t input_dim, std::size_t latent_dim) {
    detail::require(batch.size() > 0, "pairwise_elbo_loss: empty batch");
    batch.validate(latent_dim);
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto d = static_cast<Eigen::Index>(input_dim);
    StackedBatch s{Eigen::MatrixXd(d, n), Eigen::MatrixXd(d, n),
                   Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(latent_dim), n), std::vector<bool>(batch.size())};
    for (Eigen::Index p = 0; p < n; ++p) {
        const auto& xl = batch.lhs[static_cast<std::size_t>(p)];
        const auto& xr = batch.rhs[static_cast<std::size_t>(p)];
        detail::require(xl.size() == input_dim, "pairwise_elbo_loss: input dimension mismatch");
        s.lhs.col(p) = as_vector(xl);
        s.rhs.col(p) = as_vector(xr);
        for (auto i : batch.shared[static_cast<std::size_t>(p)]) s.mask(static_cast<Eigen::Index>(i), p) = 1.0;
        s.lhs_first[static_cast<std::size_t>(p)] = !std::lexicographical_compare(xr.begin(), xr.end(), xl.begin(), xl.end());
    }
    const bool in_range = ((s.lhs.array() >= 0.0) && (s.lhs.array() <= 1.0) && (s.rhs.array() >= 0.0) &&
                           (s.rhs.array() <= 1.0)).all();
    detail::require(in_range, "bernoulli_recon_loss: target outside [0, 1]");
    return s;
}

inline Eigen::MatrixXd blend(const Eigen::MatrixXd& mask, const Eigen::MatrixXd& own, const Eigen::MatrixXd& other) {
    return (mask.array() * 0.5 * (own + other).array() + (1.0 - mask.array()) * own.array()).matrix();
}

// input_dim x n buffers reused across epochs.
struct LossWorkspace {
    Eigen::MatrixXd cl, cr, logits, dl;
    Eigen::ArrayXXd r;
};

inline double stacked_loss(const ToyVae& m, const StackedBatch& b, std::uint64_t seed, std::size_t n_samples,
                           ToyVae* grad, LossWorkspace& ws) {
    detail::require(n_samples >= 1, "pairwise_elbo_loss: n_samples must be >= 1");
    const Eigen::Index n = b.lhs.cols();
    const Eigen::Index f = static_cast<Eigen::Index>(m.latent_dim());
    ws.cl = b.lhs;
    ws.cl.colwise() -= m.input_center;
    ws.cr = b.rhs;
    ws.cr.colwise() -= m.input_center;
    const Eigen::MatrixXd& cl = ws.cl;
    const Eigen::MatrixXd& cr = ws.cr;
    const Eigen::MatrixXd mu_l = (m.enc_mu_w * cl).colwise() + m.enc_mu_b;
    const Eigen::MatrixXd mu_r = (m.enc_mu_w * cr).colwise() + m.enc_mu_b;
    const Eigen::MatrixXd sd_l = (0.5 * ((m.enc_logvar_w * cl).colwise() + m.enc_logvar_b)).array().exp().matrix();
    const Eigen::MatrixXd sd_r = (0.5 * ((m.enc_logvar_w * cr).colwise() + m.enc_logvar_b)).array().exp().matrix();
    const Eigen::MatrixXd mh_l = blend(b.mask, mu_l, mu_r), mh_r = blend(b.mask, mu_r, mu_l);
    const Eigen::MatrixXd sh_l = blend(b.mask, sd_l, sd_r), sh_r = blend(b.mask, sd_r, sd_l);

    auto kl_sum = [](const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sd) {
        return 0.5 * (mu.array().square() + sd.array().square() - 2.0 * sd.array().log() - 1.0).sum();
    };
    const double kl = kl_sum(mh_l, sh_l) + kl_sum(mh_r, sh_r);

    std::vector<Eigen::MatrixXd> eps_l(n_samples, Eigen::MatrixXd(f, n)), eps_r(n_samples, Eigen::MatrixXd(f, n));
    for (Eigen::Index p = 0; p < n; ++p) {
        Rng rng(seed, static_cast<std::uint64_t>(p));
        const bool lhs_first = b.lhs_first[static_cast<std::size_t>(p)];
        for (std::size_t s = 0; s < n_samples; ++s) {
            auto& first = lhs_first ? eps_l[s] : eps_r[s];
            auto& second = lhs_first ? eps_r[s] : eps_l[s];
            for (Eigen::Index i = 0; i < f; ++i) first(i, p) = rng.normal();
            for (Eigen::Index i = 0; i < f; ++i) second(i, p) = rng.normal();
        }
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    const double w = 1.0 / static_cast<double>(n_samples);
    Eigen::MatrixXd dmh_l, dsh_l, dmh_r, dsh_r;
    if (grad) {
        dmh_l = mh_l * inv_n;
        dmh_r = mh_r * inv_n;
        dsh_l = (sh_l - sh_l.cwiseInverse()) * inv_n;
        dsh_r = (sh_r - sh_r.cwiseInverse()) * inv_n;
    }
    double recon = 0.0;
    auto side = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& mh, const Eigen::MatrixXd& sh,
                    const Eigen::MatrixXd& eps, Eigen::MatrixXd& dmh, Eigen::MatrixXd& dsh) {
        const Eigen::MatrixXd z = mh + sh.cwiseProduct(eps);
        ws.logits.noalias() = m.dec_w * z;
        ws.logits.colwise() += m.dec_b;
        const auto la = ws.logits.array();
        // r = 1 / (1 + exp(-|l|)); softplus(l) = max(l, 0) - log r.
        ws.r = (1.0 + (-la.abs()).exp()).inverse();
        recon += w * (la.max(0.0) - ws.r.log() - x.array() * la).sum();
        if (!grad) return;
        ws.dl = ((la >= 0.0).select(ws.r, 1.0 - ws.r) - x.array()).matrix() * (w * inv_n);
        const Eigen::MatrixXd& dl = ws.dl;
        grad->dec_w.noalias() += dl * z.transpose();
        grad->dec_b += dl.rowwise().sum();
        const Eigen::MatrixXd dz = m.dec_w.transpose() * dl;
        dmh += dz;
        dsh += dz.cwiseProduct(eps);
    };
    for (std::size_t s = 0; s < n_samples; ++s) {
        side(b.lhs, mh_l, sh_l, eps_l[s], dmh_l, dsh_l);
        side(b.rhs, mh_r, sh_r, eps_r[s], dmh_r, dsh_r);
    }
    if (grad) {
        const Eigen::MatrixXd dmu_l = blend(b.mask, dmh_l, dmh_r), dmu_r = blend(b.mask, dmh_r, dmh_l);
        const Eigen::MatrixXd dlv_l = 0.5 * blend(b.mask, dsh_l, dsh_r).cwiseProduct(sd_l);
        const Eigen::MatrixXd dlv_r = 0.5 * blend(b.mask, dsh_r, dsh_l).cwiseProduct(sd_r);
        grad->enc_mu_w.noalias() += dmu_l * cl.transpose() + dmu_r * cr.transpose();
        grad->enc_mu_b += (dmu_l + dmu_r).rowwise().sum();
        grad->enc_logvar_w.noalias() += dlv_l * cl.transpose() + dlv_r * cr.transpose();
        grad->enc_logvar_b += (dlv_l + dlv_r).rowwise().sum();
    }
    return (kl + recon) * inv_n;
}

inline double batch_loss(const ToyVae& m, const PairBatch& batch, std::uint64_t seed, std::size_t n_samples,
                         ToyVae* grad) {
    LossWorkspace ws;
    return stacked_loss(m, stack_batch(batch, m.input_dim(), m.latent_dim()), seed, n_samples, grad, ws);
}

}  // namespace detail

// Negated pairwise ELBO, averaged over pairs; pair p draws its noise from stream p of seed.
inline double pairwise_elbo_loss(const ToyVae& model, const PairBatch& batch, std::uint64_t seed,
                                 std::size_t n_samples = 1) {
    return detail::batch_loss(model, batch, seed, n_samples, nullptr);
}

inline LossAndGradient pairwise_elbo_loss_and_gradient(const ToyVae& model, const PairBatch& batch,
                                                       std::uint64_t seed, std::size_t n_samples = 1) {
    LossAndGradient r{0.0, ToyVae::zeros(model.input_dim(), model.k, model.l)};
    r.loss = detail::batch_loss(model, batch, seed, n_samples, &r.gradient);
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    std::size_t epochs = 500;
    double step_size = 1e-2;
    std::size_t n_samples = 1;
    double init_scale = 0.1;
    bool center_inputs = true;
};

struct TrainResult {
    ToyVae model;
    std::vector<double> loss_trace;  // loss before each update
};

// Full-batch gradient descent; epoch e uses noise seed derived from (seed, e).
inline TrainResult toy_train(const PairBatch& batch, std::size_t k, std::size_t l, std::uint64_t seed,
                             const TrainOptions& opt = {}) {
    detail::require(batch.size() > 0, "toy_train: empty batch");
    detail::require(opt.step_size > 0.0, "toy_train: step size must be > 0");
    TrainResult r{ToyVae::random(batch.lhs.front().size(), k, l, seed, opt.init_scale), {}};
    const auto stacked = detail::stack_batch(batch, r.model.input_dim(), k + l);
    if (opt.center_inputs)
        r.model.input_center = 0.5 * (stacked.lhs.rowwise().mean() + stacked.rhs.rowwise().mean());
    Rng master(seed, 1);
    detail::LossWorkspace ws;
    r.loss_trace.reserve(opt.epochs);
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        ToyVae grad = ToyVae::zeros(r.model.input_dim(), k, l);
        const double loss = detail::stacked_loss(r.model, stacked, master.split(e).next_u64(), opt.n_samples, &grad, ws);
        Eigen::VectorXd theta = r.model.parameters();
        const Eigen::VectorXd g = grad.parameters();
        if (!std::isfinite(loss) || !g.allFinite())
            throw ConvergenceError("toy_train: loss diverged at epoch " + std::to_string(e));
        r.loss_trace.push_back(loss);
        theta -= opt.step_size * g;
        r.model.set_parameters(theta);
    }
    return r;
}

inline void write_loss_trace_csv(std::ostream& os, const std::vector<double>& trace) {
    os << "epoch,loss\n";
    os.precision(17);
    for (std::size_t e = 0; e < trace.size(); ++e) os << e << ',' << trace[e] << '\n';
}

// Encodes inputs with known factors (content first, then the labeled style factors) into a
// dataset with E = 1. Latent style dimensions beyond the labeled ones get missing labels.
inline CertDataset encode_dataset(const ToyVae& model, const std::vector<std::vector<double>>& inputs,
                                  const std::vector<std::vector<double>>& factors, const std::string& id_prefix = "r") {
    detail::require(inputs.size() == factors.size(), "encode_dataset: inputs and factors differ in length");
    const std::size_t k = model.k;
    const std::size_t l = model.l;
    CertDataset ds{{k, l, k, 1}, {}};
    ds.records.reserve(inputs.size());
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        detail::require(factors[n].size() >= k && factors[n].size() - k <= l,
                        "encode_dataset: factor vector does not fit the latent layout");
        const Eigen::VectorXd x = detail::as_vector(inputs[n]);
        const Eigen::VectorXd mu = model.encode_mu(x);
        const Eigen::VectorXd sd = (0.5 * model.encode_logvar(x)).array().exp().matrix();
        CertRecord r;
        r.id = id_prefix + std::to_string(n);
        r.v_content.assign(factors[n].begin(), factors[n].begin() + static_cast<std::ptrdiff_t>(k));
        r.v_style.assign(l, std::nullopt);
        for (std::size_t j = k; j < factors[n].size(); ++j) r.v_style[j - k] = factors[n][j];
        r.y_obs = r.v_content;
        std::vector<LatentGaussian> z(k + l);
        for (std::size_t i = 0; i < k + l; ++i) {
            const auto j = static_cast<Eigen::Index>(i);
            z[i] = {mu[j], std::max(sd[j], std::numeric_limits<double>::min())};
        }
        r.latents.push_back(std::move(z));
        ds.records.push_back(std::move(r));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Encoder-decoder roundtrip

struct RoundtripResult {
    double max_deviation = 0.0;
    double mean_deviation = 0.0;
    std::size_t n_points = 0;
    bool passed = false;
};

enum class RoundtripInput { BernoulliMean, Logits };

// Sup-norm deviation of z from the encoder mean of g(z) over the given latent points; g(z)
// is the Bernoulli mean sigmoid(decode(z)) or the raw decoder output.
inline RoundtripResult roundtrip_consistency(const ToyVae& model, const std::vector<Eigen::VectorXd>& z_grid,
                                             double threshold,
                                             RoundtripInput input = RoundtripInput::BernoulliMean) {
    detail::require(!z_grid.empty(), "roundtrip_consistency: empty grid");
    RoundtripResult r;
    double sum = 0.0;
    for (const auto& z : z_grid) {
        detail::require(z.size() == static_cast<Eigen::Index>(model.latent_dim()),
                        "roundtrip_consistency: latent dimension mismatch");
        Eigen::VectorXd x = model.decode(z);
        if (input == RoundtripInput::BernoulliMean)
            for (auto& v : x) v = detail::sigmoid(v);
        const double dev = (z - model.encode_mu(x)).cwiseAbs().maxCoeff();
        r.max_deviation = std::max(r.max_deviation, dev);
        sum += dev;
    }
    r.n_points = z_grid.size();
    r.mean_deviation = sum / static_cast<double>(r.n_points);
    r.passed = r.max_deviation <= threshold;
    return r;
}

// Regular grid with `per_dim` points per dimension on [-2, 2]^dim.
inline std::vector<Eigen::VectorXd> prior_box_grid(std::size_t dim, std::size_t per_dim) {
    detail::require(dim >= 1 && per_dim >= 2, "prior_box_grid: need dim >= 1 and per_dim >= 2");
    std::size_t total = 1;
    for (std::size_t i = 0; i < dim; ++i) {
        detail::require(total <= 1'000'000 / per_dim, "prior_box_grid: grid too large");
        total *= per_dim;
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(total);
    for (std::size_t c = 0; c < total; ++c) {
        Eigen::VectorXd z(static_cast<Eigen::Index>(dim));
        std::size_t rem = c;
        for (std::size_t i = 0; i < dim; ++i) {
            z[static_cast<Eigen::Index>(i)] = -2.0 + 4.0 * static_cast<double>(rem % per_dim) / static_cast<double>(per_dim - 1);
            rem /= per_dim;
        }
        out.push_back(std::move(z));
    }
    return out;
}

}  // namespace certkit
