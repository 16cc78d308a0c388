#pragma once

// Univariate predictive distributions and the special functions behind them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "certkit/error.hpp"

namespace certkit {

namespace detail {

inline void require_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be finite");
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kSqrt2Pi = 2.50662827463100050242;

}  // namespace detail

// ---------------------------------------------------------------------------
// Standard normal

inline double std_normal_pdf(double z) { return detail::kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// erfc keeps full relative precision in the lower tail.
inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * detail::kInvSqrt2); }

inline double std_normal_invcdf(double p) {
    detail::require(p > 0.0 && p < 1.0, "normal_invcdf: p must lie in (0, 1)");
    if (p > 0.5) return -std_normal_invcdf(1.0 - p);  // 1 - p is exact here

    // Acklam's rational approximation (|rel err| < 1.2e-9) ...
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    double x;
    if (p < 0.02425) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    // ... then one Halley step against the erfc-based cdf.
    const double e = std_normal_cdf(x) - p;
    const double u = e * detail::kSqrt2Pi * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Parameterised normal

inline double normal_pdf(double mu, double sigma, double x) {
    detail::require_finite(mu, "mu");
    detail::require_finite(sigma, "sigma");
    detail::require_finite(x, "x");
    detail::require(sigma > 0.0, "sigma must be > 0");
    return std_normal_pdf((x - mu) / sigma) / sigma;
}

inline double normal_cdf(double mu, double sigma, double x) {
    detail::require_finite(mu, "mu");
    detail::require_finite(sigma, "sigma");
    detail::require_finite(x, "x");
    detail::require(sigma > 0.0, "sigma must be > 0");
    return std_normal_cdf((x - mu) / sigma);
}

inline double normal_invcdf(double mu, double sigma, double p) {
    detail::require_finite(mu, "mu");
    detail::require_finite(sigma, "sigma");
    detail::require(sigma > 0.0, "sigma must be > 0");
    return mu + sigma * std_normal_invcdf(p);
}

// ---------------------------------------------------------------------------
// Distribution variants

class Normal {
public:
    Normal(double mu, double sigma) : mu_(mu), sigma_(sigma) {
        detail::require_finite(mu, "Normal mu");
        detail::require_finite(sigma, "Normal sigma");
        detail::require(sigma > 0.0, "Normal sigma must be > 0");
    }
    double mu() const { return mu_; }
    double sigma() const { return sigma_; }

    friend bool operator==(const Normal&, const Normal&) = default;

private:
    double mu_;
    double sigma_;
};

class Uniform {
public:
    Uniform(double a, double b) : a_(a), b_(b) {
        detail::require_finite(a, "Uniform a");
        detail::require_finite(b, "Uniform b");
        detail::require(b > a, "Uniform requires b > a");
    }
    double a() const { return a_; }
    double b() const { return b_; }

    friend bool operator==(const Uniform&, const Uniform&) = default;

private:
    double a_;
    double b_;
};

// Equal-weight Gaussian mixture.
class Mixture {
public:
    explicit Mixture(std::vector<Normal> members) : members_(std::move(members)) {
        detail::require(!members_.empty(), "Mixture requires at least one member");
    }
    std::span<const Normal> members() const { return members_; }

    friend bool operator==(const Mixture&, const Mixture&) = default;

private:
    std::vector<Normal> members_;
};

using PredictiveDistribution = std::variant<Normal, Uniform, Mixture>;

struct Interval {
    double lo;
    double hi;

    bool contains(double x) const { return lo <= x && x <= hi; }
    double width() const { return hi - lo; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

inline double mixture_cdf(std::span<const Normal> members, double x) {
    detail::require(!members.empty(), "mixture_cdf: empty member list");
    double acc = 0.0;
    for (const auto& m : members) acc += std_normal_cdf((x - m.mu()) / m.sigma());
    return acc / static_cast<double>(members.size());
}

inline double mixture_pdf(std::span<const Normal> members, double x) {
    detail::require(!members.empty(), "mixture_pdf: empty member list");
    double acc = 0.0;
    for (const auto& m : members) acc += std_normal_pdf((x - m.mu()) / m.sigma()) / m.sigma();
    return acc / static_cast<double>(members.size());
}

namespace detail {

// Root of mixture_cdf(x) = p. Member quantiles bracket the root because the
// mixture cdf is the mean of the member cdfs.
inline double mixture_invcdf(std::span<const Normal> members, double p) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& m : members) {
        const double q = m.mu() + m.sigma() * std_normal_invcdf(p);
        lo = std::min(lo, q);
        hi = std::max(hi, q);
    }
    if (hi - lo <= 0.0) return lo;
    double x = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double f = mixture_cdf(members, x) - p;
        if (f == 0.0) return x;
        if (f < 0.0) lo = x; else hi = x;
        const double dens = mixture_pdf(members, x);
        double next = dens > 0.0 ? x - f / dens : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(x)))
            return next;
        x = next;
    }
    return x;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace detail

// cdf accepts ±inf and returns the limits exactly.
inline double cdf(const PredictiveDistribution& d, double x) {
    if (std::isnan(x)) throw InvalidArgument("cdf: x is NaN");
    if (x == -std::numeric_limits<double>::infinity()) return 0.0;
    if (x == std::numeric_limits<double>::infinity()) return 1.0;
    return std::visit(detail::overloaded{
                          [x](const Normal& n) { return std_normal_cdf((x - n.mu()) / n.sigma()); },
                          [x](const Uniform& u) { return std::clamp((x - u.a()) / (u.b() - u.a()), 0.0, 1.0); },
                          [x](const Mixture& m) { return mixture_cdf(m.members(), x); },
                      },
                      d);
}

inline double pdf(const PredictiveDistribution& d, double x) {
    return std::visit(detail::overloaded{
                          [x](const Normal& n) { return std_normal_pdf((x - n.mu()) / n.sigma()) / n.sigma(); },
                          [x](const Uniform& u) { return (x >= u.a() && x <= u.b()) ? 1.0 / (u.b() - u.a()) : 0.0; },
                          [x](const Mixture& m) { return mixture_pdf(m.members(), x); },
                      },
                      d);
}

inline double invcdf(const PredictiveDistribution& d, double p) {
    detail::require(p > 0.0 && p < 1.0, "invcdf: p must lie in (0, 1)");
    return std::visit(detail::overloaded{
                          [p](const Normal& n) { return n.mu() + n.sigma() * std_normal_invcdf(p); },
                          [p](const Uniform& u) { return u.a() + p * (u.b() - u.a()); },
                          [p](const Mixture& m) { return detail::mixture_invcdf(m.members(), p); },
                      },
                      d);
}

inline double mean(const PredictiveDistribution& d) {
    return std::visit(detail::overloaded{
                          [](const Normal& n) { return n.mu(); },
                          [](const Uniform& u) { return 0.5 * (u.a() + u.b()); },
                          [](const Mixture& m) {
                              double acc = 0.0;
                              for (const auto& n : m.members()) acc += n.mu();
                              return acc / static_cast<double>(m.members().size());
                          },
                      },
                      d);
}

inline double variance(const PredictiveDistribution& d) {
    return std::visit(detail::overloaded{
                          [](const Normal& n) { return n.sigma() * n.sigma(); },
                          [](const Uniform& u) { return (u.b() - u.a()) * (u.b() - u.a()) / 12.0; },
                          [](const Mixture& m) {
                              double first = 0.0, second = 0.0;
                              for (const auto& n : m.members()) {
                                  first += n.mu();
                                  second += n.mu() * n.mu() + n.sigma() * n.sigma();
                              }
                              const auto e = static_cast<double>(m.members().size());
                              first /= e;
                              return second / e - first * first;
                          },
                      },
                      d);
}

// Closure of the support; the p = 1 coverage set.
inline Interval support(const PredictiveDistribution& d) {
    if (const auto* u = std::get_if<Uniform>(&d)) return {u->a(), u->b()};
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
}

// Central prediction interval [F^-1(0.5 - p/2), F^-1(0.5 + p/2)] holding mass p.
inline Interval invcdf_interval(const PredictiveDistribution& d, double p) {
    detail::require(p > 0.0 && p < 1.0, "invcdf_interval: p must lie in (0, 1)");
    return {invcdf(d, 0.5 - 0.5 * p), invcdf(d, 0.5 + 0.5 * p)};
}

// ---------------------------------------------------------------------------
// Student t

// Regularized incomplete beta I_x(a, b) by the modified Lentz continued fraction.
inline double regularized_incomplete_beta(double a, double b, double x) {
    detail::require(a > 0.0 && b > 0.0, "incomplete beta: a, b must be > 0");
    detail::require(x >= 0.0 && x <= 1.0, "incomplete beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);

    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);

    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    constexpr int max_iter = 100000;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) return std::exp(log_front) * h / a;
    }
    throw ConvergenceError("incomplete beta continued fraction did not converge");
}

// Two-sided p-value 2 * (1 - F_t(|t|; dof)) = I_{dof/(dof+t^2)}(dof/2, 1/2).
inline double student_t_p_value(double t_stat, std::int64_t dof) {
    detail::require(dof >= 1, "student_t_p_value: dof must be >= 1");
    if (std::isnan(t_stat)) throw InvalidArgument("student_t_p_value: t is NaN");
    if (t_stat == 0.0) return 1.0;
    if (std::isinf(t_stat)) return 0.0;
    const auto nu = static_cast<double>(dof);
    const double t2 = t_stat * t_stat;
    // x = nu / (nu + t^2); 1 - x = t^2 / (nu + t^2) evaluated without cancellation.
    const double x = nu / (nu + t2);
    if (x > 0.5) {
        return 1.0 - regularized_incomplete_beta(0.5, 0.5 * nu, t2 / (nu + t2));
    }
    return regularized_incomplete_beta(0.5 * nu, 0.5, x);
}

// ---------------------------------------------------------------------------
// Binomial

namespace detail {

// Stirling-formula error lgamma(n+1) - (n+1/2) log n + n - log sqrt(2 pi).
inline double stirlerr(double n) {
    constexpr double s0 = 1.0 / 12.0;
    constexpr double s1 = 1.0 / 360.0;
    constexpr double s2 = 1.0 / 1260.0;
    constexpr double s3 = 1.0 / 1680.0;
    constexpr double s4 = 1.0 / 1188.0;
    if (n <= 15.0) {
        const long double nl = n;
        return static_cast<double>(std::lgamma(nl + 1.0L) - (nl + 0.5L) * std::log(nl) + nl -
                                   0.91893853320467274178032973640561764L);
    }
    const double nn = n * n;
    if (n > 500) return (s0 - s1 / nn) / n;
    if (n > 80) return (s0 - (s1 - s2 / nn) / nn) / n;
    if (n > 35) return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n;
    return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n;
}

// Deviance term x log(x/np) + np - x, evaluated without cancellation near x = np.
inline double bd0(double x, double np) {
    if (std::abs(x - np) < 0.1 * (x + np)) {
        double v = (x - np) / (x + np);
        double s = (x - np) * v;
        double ej = 2.0 * x * v;
        v = v * v;
        for (int j = 1; j < 1000; ++j) {
            ej *= v;
            const double s1 = s + ej / (2 * j + 1);
            if (s1 == s) return s1;
            s = s1;
        }
        return s;
    }
    return x * std::log(x / np) + np - x;
}

}  // namespace detail

// P[X = k] for X ~ Binomial(n, p), via Loader's saddle-point expansion.
inline double binomial_pmf(std::int64_t n, double p_fail, std::int64_t k) {
    detail::require(n >= 0, "binomial_pmf: n must be >= 0");
    detail::require(k >= 0, "binomial_pmf: k must be >= 0");
    detail::require(k <= n, "binomial_pmf: k must be <= n");
    detail::require(p_fail >= 0.0 && p_fail <= 1.0, "binomial_pmf: p must lie in [0, 1]");
    const double p = p_fail;
    const double q = 1.0 - p;
    const auto nd = static_cast<double>(n);
    const auto kd = static_cast<double>(k);
    if (p == 0.0) return k == 0 ? 1.0 : 0.0;
    if (q == 0.0) return k == n ? 1.0 : 0.0;
    if (k == 0) {
        if (n == 0) return 1.0;
        return std::exp(p < 0.1 ? -detail::bd0(nd, nd * q) - nd * p : nd * std::log(q));
    }
    if (k == n) {
        return std::exp(q < 0.1 ? -detail::bd0(nd, nd * p) - nd * q : nd * std::log(p));
    }
    const double lc = detail::stirlerr(nd) - detail::stirlerr(kd) - detail::stirlerr(nd - kd) -
                      detail::bd0(kd, nd * p) - detail::bd0(nd - kd, nd * q);
    const double lf = 1.8378770664093454836 + std::log(kd) + std::log1p(-kd / nd);
    return std::exp(lc - 0.5 * lf);
}

// ---------------------------------------------------------------------------
// Empirical quantiles

// Linear interpolation between order statistics at position (n - 1) p.
inline double empirical_quantile(std::vector<double> v, double p) {
    detail::require(!v.empty(), "empirical_quantile: empty sample");
    detail::require(p >= 0.0 && p <= 1.0, "empirical_quantile: p must lie in [0, 1]");
    const double h = static_cast<double>(v.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (hi == lo) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace certkit
