#pragma once

// Bi-Lipschitz bounds for layer compositions, singular value bounds and an empirical probe.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "certkit/error.hpp"
#include "certkit/rng.hpp"

namespace certkit {

// x + h(x) with h Lipschitz with constant alpha.
struct Residual {
    double alpha = 0.0;
};

struct Dense {
    double sigma_min = 0.0;
    double sigma_max = 0.0;
};

struct LeakyRelu {
    double alpha = 0.01;
};

struct LayerSpec;

struct Composition {
    std::vector<LayerSpec> layers;
};

struct LayerSpec {
    std::variant<Residual, Dense, LeakyRelu, Composition> kind;
};

struct LipschitzBounds {
    double lower = 1.0;
    double upper = 1.0;
    std::vector<std::string> warnings;
};

inline LipschitzBounds bilipschitz_bounds(const LayerSpec& spec) {
    return std::visit(
        [](const auto& k) -> LipschitzBounds {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Residual>) {
                detail::require(std::isfinite(k.alpha) && k.alpha >= 0.0, "Residual: alpha must be finite and >= 0");
                if (k.alpha >= 1.0)
                    return {0.0, 1.0 + k.alpha,
                            {"Residual(alpha=" + std::to_string(k.alpha) + "): alpha >= 1, lower bound is vacuous"}};
                return {1.0 - k.alpha, 1.0 + k.alpha, {}};
            } else if constexpr (std::is_same_v<T, Dense>) {
                detail::require(std::isfinite(k.sigma_max) && k.sigma_min >= 0.0 && k.sigma_min <= k.sigma_max,
                                "Dense: requires 0 <= sigma_min <= sigma_max < inf");
                return {k.sigma_min, k.sigma_max, {}};
            } else if constexpr (std::is_same_v<T, LeakyRelu>) {
                detail::require(k.alpha > 0.0 && k.alpha < 1.0, "LeakyRelu: alpha must lie in (0, 1)");
                return {k.alpha, 1.0, {}};
            } else {
                LipschitzBounds b;
                for (const auto& layer : k.layers) {
                    auto inner = bilipschitz_bounds(layer);
                    b.lower *= inner.lower;
                    b.upper *= inner.upper;
                    b.warnings.insert(b.warnings.end(), inner.warnings.begin(), inner.warnings.end());
                }
                return b;
            }
        },
        spec.kind);
}

inline LayerSpec repeat_layer(const LayerSpec& layer, std::size_t times) {
    return {Composition{std::vector<LayerSpec>(times, layer)}};
}

struct SingularValueBounds {
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

constexpr double kPowerTolerance = 1e-10;
constexpr std::size_t kPowerMaxIterations = 10000;

// Largest eigenvalue of the symmetric positive semi-definite operator apply(.) of size n.
template <class Apply>
inline double power_iteration(Apply&& apply, Eigen::Index n, std::uint64_t seed, std::size_t& iterations) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = rng.normal();
    v.normalize();
    double lambda = 0.0;
    for (std::size_t it = 1; it <= kPowerMaxIterations; ++it) {
        Eigen::VectorXd w = apply(v);
        const double next = v.dot(w);
        const double norm = w.norm();
        iterations = it;
        if (norm == 0.0) return 0.0;
        v = w / norm;
        if (it > 1 && std::abs(next - lambda) <= kPowerTolerance * std::abs(next)) return next;
        lambda = next;
    }
    throw ConvergenceError("power iteration did not converge after " + std::to_string(kPowerMaxIterations) +
                           " iterations");
}

}  // namespace detail

// sigma_max by power iteration on M^T M; sigma_min by inverse iteration on M^T M through a
// QR factorization of M (0 when M has fewer rows than columns or is rank deficient).
inline SingularValueBounds singular_value_bounds(const Eigen::MatrixXd& m) {
    detail::require(m.size() > 0, "singular_value_bounds: empty matrix");
    detail::require(m.allFinite(), "singular_value_bounds: non-finite entries");
    SingularValueBounds r;
    std::size_t it = 0;
    const double lmax = detail::power_iteration([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return m.transpose() * (m * v); },
                                                m.cols(), 0x5eed, it);
    r.iterations = it;
    r.sigma_max = std::sqrt(std::max(lmax, 0.0));
    if (m.rows() < m.cols() || r.sigma_max == 0.0) return r;

    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const Eigen::MatrixXd rmat = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
    const double tiny = std::numeric_limits<double>::epsilon() * static_cast<double>(m.rows()) * r.sigma_max;
    if ((rmat.diagonal().cwiseAbs().array() <= tiny).any()) return r;
    const auto upper = rmat.triangularView<Eigen::Upper>();
    const double inv_lmin = detail::power_iteration(
        [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            const Eigen::VectorXd w = upper.transpose().solve(v);
            return upper.solve(w);
        },
        m.cols(), 0x5eed + 1, it);
    r.iterations += it;
    r.sigma_min = inv_lmin > 0.0 ? std::min(1.0 / std::sqrt(inv_lmin), r.sigma_max) : 0.0;
    return r;
}

inline LayerSpec dense_layer(const Eigen::MatrixXd& weights) {
    const auto s = singular_value_bounds(weights);
    return {Dense{s.sigma_min, s.sigma_max}};
}

// ---------------------------------------------------------------------------
// Empirical probe

struct ProbeResult {
    double min_ratio = std::numeric_limits<double>::infinity();
    double max_ratio = 0.0;
    std::size_t n_pairs = 0;
};

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Extremes of |f(x) - f(x')| / |x - x'| over uniform random pairs in the box [lo, hi].
inline ProbeResult empirical_lipschitz_probe(const VectorFunction& f, const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi, std::size_t n_pairs, std::uint64_t seed) {
    detail::require(n_pairs >= 1, "empirical_lipschitz_probe: n_pairs must be >= 1");
    detail::require(lo.size() == hi.size() && lo.size() > 0, "empirical_lipschitz_probe: box dimensions differ");
    detail::require((hi.array() >= lo.array()).all() && (hi.array() > lo.array()).any(),
                    "empirical_lipschitz_probe: box has no volume");
    Rng rng(seed);
    auto draw = [&] {
        Eigen::VectorXd x(lo.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
        return x;
    };
    ProbeResult r;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        Eigen::VectorXd x = draw(), y = draw();
        while ((x - y).norm() == 0.0) y = draw();
        const double ratio = (f(x) - f(y)).norm() / (x - y).norm();
        r.min_ratio = std::min(r.min_ratio, ratio);
        r.max_ratio = std::max(r.max_ratio, ratio);
    }
    r.n_pairs = n_pairs;
    return r;
}

// ---------------------------------------------------------------------------
// Residual networks with spectrally scaled branches

// x -> x + W2 leaky(W1 x + b) per layer, with |W1|_2 |W2|_2 = alpha.
struct ResidualNet {
    std::vector<Eigen::MatrixXd> w1, w2;
    std::vector<Eigen::VectorXd> b;
    double leak = 0.01;

    Eigen::VectorXd operator()(Eigen::VectorXd x) const {
        for (std::size_t i = 0; i < w1.size(); ++i) {
            Eigen::VectorXd h = w1[i] * x + b[i];
            for (auto& v : h) v = v >= 0.0 ? v : leak * v;
            x += w2[i] * h;
        }
        return x;
    }

    LayerSpec spec(double alpha) const { return repeat_layer({Residual{alpha}}, w1.size()); }
};

inline ResidualNet random_residual_net(std::size_t dim, std::size_t hidden, std::size_t layers, double alpha,
                                       std::uint64_t seed) {
    detail::require(dim >= 1 && hidden >= 1, "random_residual_net: empty dimensions");
    detail::require(alpha >= 0.0, "random_residual_net: alpha must be >= 0");
    Rng rng(seed);
    ResidualNet net;
    const auto d = static_cast<Eigen::Index>(dim);
    const auto h = static_cast<Eigen::Index>(hidden);
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd a(h, d), c(d, h);
        Eigen::VectorXd bias(h);
        for (auto& v : a.reshaped()) v = rng.normal();
        for (auto& v : c.reshaped()) v = rng.normal();
        for (auto& v : bias) v = rng.normal();
        a /= singular_value_bounds(a).sigma_max;
        c *= alpha / singular_value_bounds(c).sigma_max;
        net.w1.push_back(std::move(a));
        net.w2.push_back(std::move(c));
        net.b.push_back(std::move(bias));
    }
    return net;
}

}  // namespace certkit
