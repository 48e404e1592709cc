#include "dpar/flops.hpp"

#include "dpar/kernels.hpp"

namespace dpar {

namespace {

double layer_flops(double L, double d, double f) {
    return 8.0 * L * d * d + 4.0 * L * L * d + 6.0 * L * d * f;
}

}  // namespace

FlopsReport estimate_flops(const ModelConfig& cfg, int64_t tokens, double avg_patch_len) {
    require(tokens >= 1, "tokens must be positive");
    require(avg_patch_len >= 1.0, "avg_patch_len must be >= 1");
    const double T = static_cast<double>(tokens);
    const double d = cfg.hidden;
    const double f = mlp_width(cfg.hidden);
    const double M = T / avg_patch_len;

    FlopsReport r;
    r.encoder = cfg.encoder_layers * layer_flops(T, d, f);
    // patch cross-attention: q/o projections on M patches, k/v on T tokens,
    // each token scored once by its own patch
    r.encoder += 4.0 * M * d * d + 4.0 * T * d * d + 4.0 * T * d;
    r.global = cfg.global_layers * layer_flops(M + 1.0, d, f);
    r.decoder = cfg.decoder_layers * layer_flops(T, d, f);
    r.decoder += 2.0 * T * d * d;  // copy projection
    r.head = 2.0 * T * d * cfg.vocab_size;
    return r;
}

FlopsReport estimate_flops_token_baseline(int layers, int hidden, int heads, int vocab,
                                          int64_t tokens) {
    require(layers >= 1 && hidden >= 1 && heads >= 1, "bad baseline config");
    const double T = static_cast<double>(tokens);
    const double d = hidden;
    const double f = mlp_width(hidden);
    FlopsReport r;
    r.global = layers * layer_flops(T + 1.0, d, f);
    r.head = 2.0 * T * d * vocab;
    return r;
}

}  // namespace dpar
