#pragma once

// Parameter-free model head, median ensemble selection and the mixture OOD rule.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "certkit/datamodel.hpp"
#include "certkit/statdist.hpp"

namespace certkit {

struct HeadConfig {
    OperatingRange range;
    std::vector<bool> flip;  // per content dimension; empty = no flips

    bool flipped(std::size_t i) const { return !flip.empty() && flip.at(i); }
};

// Latent N(mu, sigma) -> output N(y, sigma_y) on [a, b] through the standard normal cdf.
inline Normal head_transform(const LatentGaussian& z, double a, double b, bool flip) {
    detail::require(std::isfinite(a) && std::isfinite(b) && b > a, "head_transform: requires finite b > a");
    detail::require(std::isfinite(z.mu), "head_transform: latent mu must be finite");
    detail::require(std::isfinite(z.sigma) && z.sigma > 0.0, "head_transform: latent sigma must be > 0");
    const double u = std_normal_cdf(flip ? -z.mu : z.mu);
    const double y = u * (b - a) + a;
    // The density factor underflows for |mu| > ~38; keep the result a valid Normal.
    const double sigma_y = std::max(z.sigma * std_normal_pdf(z.mu) * (b - a), std::numeric_limits<double>::min());
    return Normal(y, sigma_y);
}

inline Normal head_transform(const LatentGaussian& z, const HeadConfig& cfg, std::size_t dim) {
    return head_transform(z, cfg.range.a(dim), cfg.range.b(dim), cfg.flipped(dim));
}

// An annotated pair: the factor behind `mu` is known to be smaller than the one behind `mu_prime`.
struct OrientationPair {
    std::size_t dim = 0;
    double mu = 0.0;
    double mu_prime = 0.0;
};

// flip_i is the majority vote of (mu > mu') over the pairs annotated for dimension i.
inline std::vector<bool> calibrate_orientation(const std::vector<OrientationPair>& pairs, std::size_t k) {
    std::vector<std::size_t> votes(k, 0), total(k, 0);
    for (const auto& p : pairs) {
        detail::require(p.dim < k, "calibrate_orientation: dimension " + std::to_string(p.dim) + " out of range");
        ++total[p.dim];
        if (p.mu > p.mu_prime) ++votes[p.dim];
    }
    std::vector<bool> flip(k);
    for (std::size_t i = 0; i < k; ++i) {
        detail::require(total[i] > 0, "calibrate_orientation: no annotated pair for content dimension " + std::to_string(i));
        flip[i] = 2 * votes[i] > total[i];
    }
    return flip;
}

// Member whose mean in `dim` is the (lower) median; ties broken by sigma so the
// choice does not depend on member order.
inline std::pair<std::size_t, LatentGaussian> ensemble_median_select(
    const std::vector<std::vector<LatentGaussian>>& members, std::size_t dim) {
    detail::require(!members.empty(), "ensemble_median_select: no members");
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto& a = members[x].at(dim);
        const auto& b = members[y].at(dim);
        return a.mu != b.mu ? a.mu < b.mu : a.sigma < b.sigma;
    });
    const std::size_t pick = order[(members.size() - 1) / 2];
    return {pick, members[pick][dim]};
}

// Mass of the equal-weight mixture outside selected.mu +- 2 selected.sigma.
inline double outside_mass(const std::vector<Normal>& outputs, const Normal& selected) {
    detail::require(!outputs.empty(), "outside_mass: no members");
    const double lo = selected.mu() - 2.0 * selected.sigma();
    const double hi = selected.mu() + 2.0 * selected.sigma();
    double below = 0.0;
    double above = 0.0;
    for (const auto& o : outputs) {
        below += std_normal_cdf((lo - o.mu()) / o.sigma());
        above += std_normal_cdf((o.mu() - hi) / o.sigma());
    }
    return (below + above) / static_cast<double>(outputs.size());
}

struct OodResult {
    std::vector<bool> flags;          // per content dimension
    bool ood = false;
    std::vector<double> outside_mass;
    std::vector<Normal> prediction;   // head output of the median member
    std::vector<std::size_t> selected;
};

// members: E x (>= k) latent Gaussians, content dimensions first.
inline OodResult ood_detect(const std::vector<std::vector<LatentGaussian>>& members, const HeadConfig& cfg,
                            double tau_ood = 0.15) {
    detail::require(members.size() >= 2, "ood_detect: need at least 2 ensemble members");
    detail::require(tau_ood > 0.0 && tau_ood < 1.0, "ood_detect: tau_ood must lie in (0, 1)");
    const std::size_t k = cfg.range.size();
    OodResult r;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<Normal> outputs;
        outputs.reserve(members.size());
        for (const auto& m : members) outputs.push_back(head_transform(m.at(i), cfg, i));
        const auto [idx, z] = ensemble_median_select(members, i);
        const double mass = outside_mass(outputs, outputs[idx]);
        r.outside_mass.push_back(mass);
        r.flags.push_back(mass > tau_ood);
        r.ood = r.ood || mass > tau_ood;
        r.prediction.push_back(outputs[idx]);
        r.selected.push_back(idx);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Batch mode

struct HeadRecord {
    std::string id;
    std::vector<double> y;
    std::vector<double> sigma_y;
    std::vector<bool> ood_flags;      // empty when E < 2
    std::vector<double> outside_mass;
    bool ood = false;
};

inline std::vector<HeadRecord> head_batch(const CertDataset& ds, const HeadConfig& cfg, double tau_ood = 0.15) {
    detail::require(ds.schema.E >= 1, "head_batch: dataset carries no latents");
    detail::require(cfg.range.size() == ds.schema.k, "head_batch: operating range length differs from k");
    detail::require(cfg.flip.empty() || cfg.flip.size() == ds.schema.k, "head_batch: flip length differs from k");
    std::vector<HeadRecord> out;
    out.reserve(ds.size());
    for (const auto& rec : ds.records) {
        HeadRecord h;
        h.id = rec.id;
        if (ds.schema.E >= 2) {
            const auto r = ood_detect(rec.latents, cfg, tau_ood);
            for (const auto& n : r.prediction) {
                h.y.push_back(n.mu());
                h.sigma_y.push_back(n.sigma());
            }
            h.ood_flags = r.flags;
            h.outside_mass = r.outside_mass;
            h.ood = r.ood;
        } else {
            for (std::size_t i = 0; i < ds.schema.k; ++i) {
                const auto n = head_transform(rec.latents[0][i], cfg, i);
                h.y.push_back(n.mu());
                h.sigma_y.push_back(n.sigma());
            }
        }
        out.push_back(std::move(h));
    }
    return out;
}

inline void write_head_jsonl(std::ostream& os, const std::vector<HeadRecord>& recs) {
    for (const auto& h : recs) {
        detail::json j{{"id", h.id}, {"y", h.y}, {"sigma_y", h.sigma_y}};
        if (!h.ood_flags.empty()) {
            j["ood_flags"] = h.ood_flags;
            j["outside_mass"] = h.outside_mass;
            j["ood"] = h.ood;
        }
        os << j.dump() << '\n';
    }
}

// Copy of ds whose predictions are the head outputs (requires m == k).
inline CertDataset apply_head(const CertDataset& ds, const HeadConfig& cfg) {
    detail::require(ds.schema.m == ds.schema.k, "apply_head: outputs must correspond to content dimensions (m == k)");
    const auto recs = head_batch(ds, cfg);
    CertDataset out = ds;
    for (std::size_t r = 0; r < out.size(); ++r) {
        std::vector<PredictiveDistribution> preds;
        for (std::size_t i = 0; i < recs[r].y.size(); ++i) preds.emplace_back(Normal(recs[r].y[i], recs[r].sigma_y[i]));
        out.records[r].y_pred = std::move(preds);
    }
    return out;
}

}  // namespace certkit
