#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "certkit/datamodel.hpp"

namespace certkit {

// A contiguous range of one semantic feature.
struct Subgroup {
    std::size_t feature = 0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t size = 0;
};

struct TestOutcome {
    std::string name;
    bool passed = false;
    bool skipped = false;
    std::map<std::string, double> statistics;
    std::optional<Subgroup> subgroup;
    std::vector<std::string> notes;
};

inline TestOutcome skipped_outcome(std::string name, std::string reason) {
    TestOutcome t;
    t.name = std::move(name);
    t.skipped = true;
    t.notes.push_back("skipped: " + std::move(reason));
    return t;
}

inline std::string feature_name(const Schema& s, std::size_t f) {
    return f < s.k ? "v_content[" + std::to_string(f) + "]" : "v_style[" + std::to_string(f - s.k) + "]";
}

}  // namespace certkit
