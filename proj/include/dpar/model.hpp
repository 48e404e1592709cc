#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpar/autodiff.hpp"
#include "dpar/corpus.hpp"
#include "dpar/kernels.hpp"
#include "dpar/patchify.hpp"
#include "dpar/rope.hpp"

namespace dpar {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int encoder_layers = 1;
    int global_layers = 6;
    int decoder_layers = 3;
    int hidden = 128;
    int heads = 4;
    int vocab_size = 32;
    int num_classes = 4;
    PatchifierConfig patchifier;
    EmbeddingVariant embedding_variant = EmbeddingVariant::dynamic;

    int head_dim() const { return hidden / heads; }
    int bos_id() const { return vocab_size; }
    int null_class_id() const { return num_classes; }

    void validate() const {
        require(encoder_layers >= 1 && decoder_layers >= 1 && global_layers >= 1,
                "layer counts must be >= 1");
        require(hidden >= 1 && heads >= 1 && hidden % heads == 0,
                "hidden must be divisible by heads");
        require(head_dim() % 16 == 0, "head_dim must be divisible by 16 for Dynamic RoPE");
        require(vocab_size >= 1 && num_classes >= 1, "vocab/classes must be positive");
        patchifier.validate();
    }
};

// Virtual grid coordinates for the sequence anchors. The condition and the
// BOS token live on a row before the image so they stay positionally distinct
// from every real token and from each other.
inline constexpr std::pair<int, int> kBosCoord = {-1, 0};
inline constexpr PatchSpanCoord kCondSpan = {-1, 0, 0};
inline constexpr PatchSpanCoord kBosPatchSpan = {-1, 1, 1};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct DparModel {
    ModelConfig config;
    ParamStore<T> params;

    Param<T>* tok_embed = nullptr;  // [V+1, h], BOS = V
    Param<T>* cls_embed = nullptr;  // [C+1, h], null class = C
    std::vector<BlockParams<T>> encoder;
    Param<T>* xattn_q_norm = nullptr;
    Param<T>* xattn_kv_norm = nullptr;
    Param<T>* xattn_wq = nullptr;
    Param<T>* xattn_wk = nullptr;
    Param<T>* xattn_wv = nullptr;
    Param<T>* xattn_wo = nullptr;
    std::vector<BlockParams<T>> global;
    Param<T>* copy_norm = nullptr;
    Param<T>* copy_proj = nullptr;
    std::vector<BlockParams<T>> decoder;
    Param<T>* final_norm = nullptr;
    Param<T>* head = nullptr;  // [V, h]

    static DparModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        DparModel m;
        m.config = cfg;
        Rng rng(derive_seed(seed, 0xd9a7));
        const int h = cfg.hidden;
        m.tok_embed = m.params.add("tok_embed", normal_init<T>({cfg.vocab_size + 1, h}, rng));
        m.cls_embed = m.params.add("cls_embed", normal_init<T>({cfg.num_classes + 1, h}, rng));
        for (int i = 0; i < cfg.encoder_layers; ++i)
            m.encoder.push_back(make_block_params<T>(m.params, "enc." + std::to_string(i), h, rng));
        m.xattn_q_norm = m.params.add("xattn.q_norm", ones_init<T>({h}));
        m.xattn_kv_norm = m.params.add("xattn.kv_norm", ones_init<T>({h}));
        m.xattn_wq = m.params.add("xattn.wq", normal_init<T>({h, h}, rng));
        m.xattn_wk = m.params.add("xattn.wk", normal_init<T>({h, h}, rng));
        m.xattn_wv = m.params.add("xattn.wv", normal_init<T>({h, h}, rng));
        m.xattn_wo = m.params.add("xattn.wo", normal_init<T>({h, h}, rng));
        for (int i = 0; i < cfg.global_layers; ++i)
            m.global.push_back(make_block_params<T>(m.params, "glob." + std::to_string(i), h, rng));
        m.copy_norm = m.params.add("copy.norm", ones_init<T>({h}));
        m.copy_proj = m.params.add("copy.proj", normal_init<T>({h, h}, rng));
        for (int i = 0; i < cfg.decoder_layers; ++i)
            m.decoder.push_back(make_block_params<T>(m.params, "dec." + std::to_string(i), h, rng));
        m.final_norm = m.params.add("final_norm", ones_init<T>({h}));
        m.head = m.params.add("head", normal_init<T>({cfg.vocab_size, h}, rng));
        return m;
    }
};

// ---------------------------------------------------------------------------
// Sequence assembly helpers
// ---------------------------------------------------------------------------

// BOS-extended input for a grid sample: ids [BOS, x_0..x_{T-2}], matching
// coords and the prediction targets x_0..x_{T-1}.
struct BosExtended {
    std::vector<int32_t> ids;
    std::vector<std::pair<int, int>> coords;
    std::vector<int32_t> targets;
};

inline BosExtended bos_extend(const ModelConfig& cfg, const TokenGrid& grid) {
    require(grid.vocab_size == cfg.vocab_size, "grid vocab does not match model");
    const auto seq = raster_flatten(grid);
    const int64_t total = grid.size();
    BosExtended out;
    out.ids.reserve(total);
    out.coords.reserve(total);
    out.ids.push_back(cfg.bos_id());
    out.coords.push_back(kBosCoord);
    for (int64_t i = 0; i + 1 < total; ++i) {
        out.ids.push_back(seq.tokens[i]);
        out.coords.push_back(seq.coords[i]);
    }
    out.targets = seq.tokens;
    return out;
}

// Dynamic RoPE coordinates for the global sequence [cond, patch_0..patch_{M-1}]
// of a BOS-extended partition.
inline std::vector<PatchSpanCoord> global_span_coords(const PatchPartition& partition,
                                                      int row_width) {
    std::vector<PatchSpanCoord> coords;
    coords.reserve(partition.spans.size() + 1);
    coords.push_back(kCondSpan);
    coords.push_back(kBosPatchSpan);
    auto real = span_grid_coords(partition, row_width, /*index_offset=*/-1, /*first_span=*/1);
    coords.insert(coords.end(), real.begin(), real.end());
    return coords;
}

// ---------------------------------------------------------------------------
// Forward stages
// ---------------------------------------------------------------------------

// Token embedding followed by the encoder's causal self-attention blocks.
template <typename T>
Var encode_tokens(Graph<T>& g, const DparModel<T>& m, const std::vector<int32_t>& ids,
                  const std::vector<KeyRange>& token_ranges, const RotTablePtr<T>& rot) {
    Var x = g.embedding(g.param(*m.tok_embed), ids);
    for (const auto& blk : m.encoder)
        x = transformer_block(g, x, blk, token_ranges, rot, m.config.heads);
    return x;
}

// Patch queries (span means of the token states) cross-attending exclusively
// to their own token span.
template <typename T>
Var encode_patches(Graph<T>& g, const DparModel<T>& m, Var h_tok,
                   const std::vector<KeyRange>& cross_ranges) {
    Var init = g.segment_mean(h_tok, cross_ranges);
    Var q = g.linear(g.rmsnorm(init, g.param(*m.xattn_q_norm)), g.param(*m.xattn_wq));
    Var kv = g.rmsnorm(h_tok, g.param(*m.xattn_kv_norm));
    Var k = g.linear(kv, g.param(*m.xattn_wk));
    Var v = g.linear(kv, g.param(*m.xattn_wv));
    Var att = g.attention(q, k, v, cross_ranges, m.config.heads);
    return g.add(init, g.linear(att, g.param(*m.xattn_wo)));
}

// Causal patch transformer over an already-assembled global sequence.
template <typename T>
Var global_transform(Graph<T>& g, const DparModel<T>& m, Var seq,
                     const std::vector<KeyRange>& ranges, const RotTablePtr<T>& rot) {
    Var x = seq;
    for (const auto& blk : m.global) x = transformer_block(g, x, blk, ranges, rot, m.config.heads);
    return x;
}

// Copy projection, decoder blocks and the vocabulary head. copy_rows holds
// one global-output row per token position (the row serving its patch).
template <typename T>
Var decode_logits(Graph<T>& g, const DparModel<T>& m, Var h_tok, Var copy_rows,
                  const std::vector<KeyRange>& token_ranges, const RotTablePtr<T>& rot) {
    Var proj = g.linear(g.rmsnorm(copy_rows, g.param(*m.copy_norm)), g.param(*m.copy_proj));
    Var x = g.add(h_tok, proj);
    for (const auto& blk : m.decoder)
        x = transformer_block(g, x, blk, token_ranges, rot, m.config.heads);
    return g.linear(g.rmsnorm(x, g.param(*m.final_norm)), g.param(*m.head));
}

// ---------------------------------------------------------------------------
// Single-sample operations
// ---------------------------------------------------------------------------

template <typename T>
struct EncodeResult {
    Var h_tok;
    Var h_patch;
};

// Full encoder pass over one (BOS-extended) sequence with a given partition.
template <typename T>
EncodeResult<T> encode(Graph<T>& g, const DparModel<T>& m, const std::vector<int32_t>& ids,
                       const std::vector<std::pair<int, int>>& coords,
                       const PatchPartition& partition) {
    require(static_cast<int64_t>(ids.size()) == partition.covered_len,
            "partition does not cover the token sequence");
    require(ids.size() == coords.size(), "ids/coords length mismatch");
    auto rot = token_rot_table<T>(coords, m.config.head_dim());
    auto ranges = query_key_ranges(AttentionMask::causal(), static_cast<int>(ids.size()),
                                   static_cast<int>(ids.size()));
    Var h_tok = encode_tokens(g, m, ids, ranges, rot);
    Var h_patch = encode_patches(g, m, h_tok, partition.spans);
    return {h_tok, h_patch};
}

// Causal transformer over [condition, H_patch]. Output row m is a function of
// the condition and patches strictly before m; it serves patch m. Row M (above
// the last patch) is what a freshly opened patch reads during generation.
template <typename T>
Var global_forward(Graph<T>& g, const DparModel<T>& m, int cond_id, Var h_patch,
                   const PatchPartition& partition) {
    require(cond_id >= 0 && cond_id <= m.config.num_classes, "condition id out of range");
    Var cond = g.embedding(g.param(*m.cls_embed), {cond_id});
    Var seq = g.concat_rows(cond, h_patch);
    const int rows = static_cast<int>(g.value(seq).rows());
    auto coords = global_span_coords(partition, m.config.patchifier.row_width);
    require(static_cast<int>(coords.size()) == rows, "global sequence length mismatch");
    auto rot = patch_rot_table<T>(coords, m.config.head_dim(), m.config.embedding_variant);
    auto ranges = query_key_ranges(AttentionMask::causal(), rows, rows);
    return global_transform(g, m, seq, ranges, rot);
}

// Decoder pass: token position i in patch m reads global output row m.
template <typename T>
Var decode(Graph<T>& g, const DparModel<T>& m, Var h_tok, Var h_hat,
           const std::vector<std::pair<int, int>>& coords, const PatchPartition& partition) {
    require(static_cast<int64_t>(coords.size()) == partition.covered_len,
            "partition does not cover the token sequence");
    require(g.value(h_hat).rows() >= partition.num_patches(),
            "global output shorter than the partition");
    Var copy_rows = g.gather_rows(h_hat, position_to_patch(partition));
    auto rot = token_rot_table<T>(coords, m.config.head_dim());
    auto ranges = query_key_ranges(AttentionMask::causal(), static_cast<int>(coords.size()),
                                   static_cast<int>(coords.size()));
    return decode_logits(g, m, h_tok, copy_rows, ranges, rot);
}

template <typename T>
struct TrainingForward {
    Var loss;          // scalar, sum over positions
    Var per_position;  // [T]
    Var logits;        // [T, V]
    PatchPartition partition;
};

// Algorithm-style training pass over one labeled sample: prepend BOS,
// partition the BOS-extended prefix, encode, run the patch transformer with
// the class (or null-class) condition, decode, and score all T tokens.
template <typename T>
TrainingForward<T> training_forward(Graph<T>& g, const DparModel<T>& m, const LabeledSample& sample,
                                    const EntropySequence& entropies, bool cfg_drop,
                                    const PatchifierConfig* pcfg_override = nullptr) {
    const auto& cfg = m.config;
    const int64_t total = sample.grid.size();
    require(static_cast<int64_t>(entropies.size()) == total, "entropy/sample length mismatch");
    require(sample.label >= 0 && sample.label < cfg.num_classes, "label out of range");

    const PatchifierConfig& pcfg = pcfg_override ? *pcfg_override : cfg.patchifier;
    require(sample.grid.width == pcfg.row_width,
            "grid width must match the patchifier row width");
    auto ext = bos_extend(cfg, sample.grid);
    auto partition = patchify_with_bos(
        std::span<const float>(entropies.values.data(), static_cast<size_t>(total - 1)), pcfg);

    auto enc = encode(g, m, ext.ids, ext.coords, partition);
    const int cond_id = cfg_drop ? cfg.null_class_id() : sample.label;
    Var h_hat = global_forward(g, m, cond_id, enc.h_patch, partition);
    Var logits = decode(g, m, enc.h_tok, h_hat, ext.coords, partition);
    Var per_pos = g.cross_entropy(logits, ext.targets);
    Var loss = g.sum(per_pos);
    return {loss, per_pos, logits, std::move(partition)};
}

// ---------------------------------------------------------------------------
// Packed variable-length batching
// ---------------------------------------------------------------------------

// Concatenation of BOS-extended samples with block-diagonal mask layout; no
// padding anywhere.
struct PackedBatch {
    std::vector<int32_t> ids;
    std::vector<std::pair<int, int>> coords;
    std::vector<int32_t> targets;
    std::vector<int32_t> copy_map;  // token position -> packed global row
    std::vector<KeyRange> token_ranges;
    std::vector<KeyRange> cross_ranges;  // per patch -> packed token rows

    // Global sequence: per sample [cond, patches...]. Rows are gathered from
    // concat(cond_embeddings, h_patch) via global_order.
    std::vector<int32_t> global_order;
    std::vector<PatchSpanCoord> global_coords;
    std::vector<KeyRange> global_ranges;
    std::vector<int32_t> cond_ids;

    std::vector<KeyRange> token_spans;  // per sample, packed token rows
    std::vector<KeyRange> patch_spans;  // per sample, packed patch indices
    std::vector<PatchPartition> partitions;
    int batch = 0;

    void validate() const;
};

PackedBatch pack_batch(const ModelConfig& cfg, std::span<const LabeledSample> samples,
                       std::span<const EntropySequence> entropies,
                       const std::vector<bool>& cfg_drop,
                       const PatchifierConfig* pcfg_override = nullptr);

template <typename T>
struct PackedForward {
    Var per_sample_losses;  // [B], sum reduction per sample
    Var mean_loss;          // scalar, mean over all token positions
    Var per_position;       // [total_T]
    Var logits;
};

template <typename T>
PackedForward<T> packed_training_forward(Graph<T>& g, const DparModel<T>& m,
                                         const PackedBatch& b) {
    const auto& cfg = m.config;
    b.validate();
    auto token_rot = token_rot_table<T>(b.coords, cfg.head_dim());
    Var h_tok = encode_tokens(g, m, b.ids, b.token_ranges, token_rot);
    Var h_patch = encode_patches(g, m, h_tok, b.cross_ranges);

    Var cond = g.embedding(g.param(*m.cls_embed), b.cond_ids);
    Var global_in = g.gather_rows(g.concat_rows(cond, h_patch), b.global_order);
    auto global_rot = patch_rot_table<T>(b.global_coords, cfg.head_dim(), cfg.embedding_variant);
    Var h_hat = global_transform(g, m, global_in, b.global_ranges, global_rot);

    Var copy_rows = g.gather_rows(h_hat, b.copy_map);
    Var logits = decode_logits(g, m, h_tok, copy_rows, b.token_ranges, token_rot);
    Var per_pos = g.cross_entropy(logits, b.targets);
    Var per_sample = g.segment_sum(per_pos, b.token_spans);
    Var mean_loss = g.mean(per_pos);
    return {per_sample, mean_loss, per_pos, logits};
}

// Row-wise softmax, used when comparing predicted distributions.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> out(logits.shape);
    const int64_t L = logits.rows(), V = logits.cols();
    for (int64_t i = 0; i < L; ++i) {
        const T* row = logits.ptr() + i * V;
        T* orow = out.ptr() + i * V;
        T maxv = row[0];
        for (int64_t j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
        double z = 0;
        for (int64_t j = 0; j < V; ++j) {
            orow[j] = std::exp(row[j] - maxv);
            z += static_cast<double>(orow[j]);
        }
        for (int64_t j = 0; j < V; ++j) orow[j] = static_cast<T>(orow[j] / z);
    }
    return out;
}

}  // namespace dpar
