#pragma once

// End-to-end linear toy: generate pairs, train the toy VAE, verify the encoder on held-out records.

#include <chrono>
#include <cstdint>
#include <vector>

#include "certkit/linmodel.hpp"
#include "certkit/pairelbo.hpp"
#include "certkit/simstudy.hpp"

namespace certkit {

struct ToyRunConfig {
    std::size_t k = 2;
    std::size_t l = 1;
    std::size_t model_l = 1;
    std::size_t n_pairs = 2000;
    std::size_t n_eval = 1000;
    ToyOptions problem{120, -1.0, 1.0, 1.2, 0.1};
    TrainOptions train{1000, 0.1, 1, 1.0, true};
    double significance_level = 0.05;
};

struct ToyRunResult {
    TrainResult trained;
    CertDataset eval;
    OneToOneResult one_to_one;
    SeparationResult separation;
    double seconds = 0.0;

    bool passed() const { return one_to_one.outcome.passed && separation.outcome.passed; }
};

// Trains on the first n_pairs pairs and evaluates on n_eval records drawn from further pairs
// of the same generated problem.
inline ToyRunResult run_toy_disentanglement(const ToyRunConfig& cfg, std::uint64_t seed) {
    detail::require(cfg.model_l >= cfg.l, "run_toy_disentanglement: model_l must cover the labeled style factors");
    detail::require(cfg.n_eval >= 2, "run_toy_disentanglement: n_eval must be >= 2");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t eval_pairs = (cfg.n_eval + 1) / 2;
    const auto prob = gen_toy_disentangled(cfg.n_pairs + eval_pairs, cfg.k, cfg.l, seed, cfg.problem);
    PairBatch train;
    const auto np = static_cast<std::ptrdiff_t>(cfg.n_pairs);
    train.lhs.assign(prob.batch.lhs.begin(), prob.batch.lhs.begin() + np);
    train.rhs.assign(prob.batch.rhs.begin(), prob.batch.rhs.begin() + np);
    train.shared.assign(prob.batch.shared.begin(), prob.batch.shared.begin() + np);

    ToyRunResult r{toy_train(train, cfg.k, cfg.model_l, seed, cfg.train), {}, {}, {}, 0.0};
    std::vector<std::vector<double>> xs, fs;
    for (std::size_t p = cfg.n_pairs; xs.size() < cfg.n_eval; ++p) {
        xs.push_back(prob.batch.lhs[p]);
        fs.push_back(prob.factors_lhs[p]);
        if (xs.size() == cfg.n_eval) break;
        xs.push_back(prob.batch.rhs[p]);
        fs.push_back(prob.factors_rhs[p]);
    }
    r.eval = encode_dataset(r.trained.model, xs, fs, "eval");
    const Eigen::MatrixXd lat = latent_means(r.eval);
    const auto kk = static_cast<Eigen::Index>(cfg.k);
    r.one_to_one = test_1_to_1_mapping(lat, content_matrix(r.eval), cfg.significance_level);
    r.separation = test_content_style_separation(lat.leftCols(kk), lat.rightCols(lat.cols() - kk),
                                                 style_matrix(r.eval), cfg.significance_level);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace certkit
