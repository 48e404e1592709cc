#pragma once

#include <cstdint>

#include "dpar/model.hpp"

namespace dpar {

// Analytic forward-FLOP estimate per sample. Per layer at sequence length L,
// hidden d and MLP width f: projections 8*L*d^2, attention scores/values
// 4*L^2*d, gated MLP 6*L*d*f. Encoder and decoder stages run at L = T, the
// global stage at L = M+1 with M = T / avg_patch_len. Training cost is
// estimated as 3x forward. The estimator targets ratios between
// configurations, not absolute device FLOPs.
struct FlopsReport {
    double encoder = 0;
    double global = 0;
    double decoder = 0;
    double head = 0;
    double training_multiplier = 3.0;

    double forward_total() const { return encoder + global + decoder + head; }
    double training_total() const { return training_multiplier * forward_total(); }
};

FlopsReport estimate_flops(const ModelConfig& cfg, int64_t tokens, double avg_patch_len);

// Token-level causal baseline of the same width: `layers` blocks at L = T+1
// (condition token included) plus the vocabulary head.
FlopsReport estimate_flops_token_baseline(int layers, int hidden, int heads, int vocab,
                                          int64_t tokens);

}  // namespace dpar
