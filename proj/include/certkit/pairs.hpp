#pragma once

#include <cstddef>
#include <vector>

#include "certkit/error.hpp"

namespace certkit {

// Input pairs (x, x') with the latent indices S known to be shared across each pair.
struct PairBatch {
    std::vector<std::vector<double>> lhs;
    std::vector<std::vector<double>> rhs;
    std::vector<std::vector<std::size_t>> shared;  // 0-based, each non-empty

    std::size_t size() const { return lhs.size(); }

    void validate(std::size_t latent_dim) const {
        detail::require(lhs.size() == rhs.size() && lhs.size() == shared.size(), "PairBatch: ragged batch");
        for (std::size_t p = 0; p < shared.size(); ++p) {
            detail::require(lhs[p].size() == rhs[p].size(), "PairBatch: pair inputs differ in length");
            detail::require(!shared[p].empty(), "PairBatch: shared index set must be non-empty");
            for (auto i : shared[p]) detail::require(i < latent_dim, "PairBatch: shared index outside latent range");
        }
    }
};

}  // namespace certkit
