#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dpar/common.hpp"

namespace dpar {

// Per-token next-token-prediction entropies in nats. Position 0 carries the
// +infinity sentinel so the first token always starts a new patch.
struct EntropySequence {
    std::vector<float> values;

    static constexpr float kSentinel = std::numeric_limits<float>::infinity();

    size_t size() const { return values.size(); }

    void validate() const {
        require(!values.empty(), "entropy sequence is empty");
        require(std::isinf(values[0]) && values[0] > 0, "entropy sequence missing +inf sentinel");
        for (size_t i = 1; i < values.size(); ++i)
            require(std::isfinite(values[i]) && values[i] >= 0.0f,
                    "entropy values past the sentinel must be finite and non-negative");
    }
};

}  // namespace dpar
