#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dpar/autodiff.hpp"
#include "dpar/corpus.hpp"
#include "dpar/entropy_sequence.hpp"
#include "dpar/kernels.hpp"

namespace dpar {

// ---------------------------------------------------------------------------
// Entropy model: a small unconditional causal LM over raw tokens
// ---------------------------------------------------------------------------

struct EntropyModelConfig {
    int layers = 4;
    int hidden = 128;
    int heads = 4;
    int vocab_size = 32;

    int head_dim() const { return hidden / heads; }

    void validate() const {
        require(layers >= 1, "entropy model needs at least one layer");
        require(hidden >= 1 && heads >= 1 && hidden % heads == 0,
                "hidden must be divisible by heads");
        require(head_dim() % 4 == 0, "head_dim must be divisible by 4 for 2D RoPE");
        require(vocab_size >= 1, "vocab must be positive");
    }
};

// Consumes and predicts raw tokens only; logits at row i predict token i+1.
// It never sees class labels and needs no BOS: entropies are only defined for
// non-empty prefixes.
template <typename T>
struct EntropyModel {
    EntropyModelConfig config;
    ParamStore<T> params;
    Param<T>* tok_embed = nullptr;  // [V, h]
    std::vector<BlockParams<T>> blocks;
    Param<T>* final_norm = nullptr;
    Param<T>* head = nullptr;  // [V, h]

    static EntropyModel init(const EntropyModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        EntropyModel m;
        m.config = cfg;
        Rng rng(derive_seed(seed, 0xe7709));
        m.tok_embed = m.params.add("tok_embed", normal_init<T>({cfg.vocab_size, cfg.hidden}, rng));
        for (int i = 0; i < cfg.layers; ++i)
            m.blocks.push_back(
                make_block_params<T>(m.params, "blk." + std::to_string(i), cfg.hidden, rng));
        m.final_norm = m.params.add("final_norm", ones_init<T>({cfg.hidden}));
        m.head = m.params.add("head", normal_init<T>({cfg.vocab_size, cfg.hidden}, rng));
        return m;
    }
};

// Causal forward over a (possibly packed) token sequence; rows of the result
// are next-token logits.
template <typename T>
Var entropy_lm_logits(Graph<T>& g, const EntropyModel<T>& m, const std::vector<int32_t>& ids,
                      const std::vector<std::pair<int, int>>& coords,
                      const std::vector<KeyRange>* ranges_override = nullptr) {
    require(!ids.empty(), "entropy model needs a non-empty prefix");
    require(ids.size() == coords.size(), "ids/coords length mismatch");
    auto rot = token_rot_table<T>(coords, m.config.head_dim());
    std::vector<KeyRange> causal;
    const std::vector<KeyRange>* ranges = ranges_override;
    if (!ranges) {
        causal = query_key_ranges(AttentionMask::causal(), static_cast<int>(ids.size()),
                                  static_cast<int>(ids.size()));
        ranges = &causal;
    }
    Var x = g.embedding(g.param(*m.tok_embed), ids);
    for (const auto& blk : m.blocks)
        x = transformer_block(g, x, blk, *ranges, rot, m.config.heads);
    return g.linear(g.rmsnorm(x, g.param(*m.final_norm)), g.param(*m.head));
}

// Shannon entropy of softmax(logits) in nats, computed stably.
template <typename T>
double softmax_entropy(const T* logits, int64_t vocab) {
    double maxv = static_cast<double>(logits[0]);
    for (int64_t j = 1; j < vocab; ++j) maxv = std::max(maxv, static_cast<double>(logits[j]));
    double z = 0, weighted = 0;
    for (int64_t j = 0; j < vocab; ++j) {
        const double e = std::exp(static_cast<double>(logits[j]) - maxv);
        z += e;
        weighted += e * (static_cast<double>(logits[j]) - maxv);
    }
    return std::log(z) - weighted / z;
}

// Next-token prediction entropy after a non-empty prefix (position >= 1).
template <typename T>
double next_token_entropy(const EntropyModel<T>& m, const std::vector<int32_t>& prefix,
                          const std::vector<std::pair<int, int>>& coords) {
    for (int32_t t : prefix)
        require(t >= 0 && t < m.config.vocab_size, "prefix token out of vocabulary");
    Graph<T> g;
    Var logits = entropy_lm_logits(g, m, prefix, coords);
    const auto& lv = g.value(logits);
    return softmax_entropy(lv.ptr() + (lv.rows() - 1) * lv.cols(), lv.cols());
}

// Entropies for every position of a raster sequence in one teacher-forced
// pass: value[0] is the +inf sentinel, value[i] the entropy after x_{<i}.
template <typename T>
EntropySequence entropy_map(const EntropyModel<T>& m, const RasterSequence& seq) {
    const size_t total = seq.tokens.size();
    require(total >= 1, "empty sequence");
    EntropySequence out;
    out.values.assign(total, EntropySequence::kSentinel);
    if (total == 1) return out;
    for (int32_t t : seq.tokens)
        require(t >= 0 && t < m.config.vocab_size, "token out of vocabulary");

    std::vector<int32_t> ids(seq.tokens.begin(), seq.tokens.end() - 1);
    std::vector<std::pair<int, int>> coords(seq.coords.begin(), seq.coords.end() - 1);
    Graph<T> g;
    Var logits = entropy_lm_logits(g, m, ids, coords);
    const auto& lv = g.value(logits);
    for (size_t i = 1; i < total; ++i)
        out.values[i] =
            static_cast<float>(softmax_entropy(lv.ptr() + (i - 1) * lv.cols(), lv.cols()));
    return out;
}

// ---------------------------------------------------------------------------
// Entropy cache: magic "DPEN" | version u16 | model digest u64 | count u32 |
// length u32 | per sample `length` little-endian f32 values
// ---------------------------------------------------------------------------

void write_entropy_cache(const std::vector<EntropySequence>& sequences, uint64_t model_digest,
                         const std::string& path);

struct EntropyCache {
    uint64_t model_digest = 0;
    std::vector<EntropySequence> sequences;
};

EntropyCache load_entropy_cache(const std::string& path,
                                std::optional<uint64_t> expected_digest = std::nullopt);

}  // namespace dpar
