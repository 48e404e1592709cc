#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dpar/entropy.hpp"
#include "dpar/flops.hpp"
#include "dpar/model.hpp"
#include "dpar/rng.hpp"

namespace dpar {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// Patchifier: invariants, incremental replay, monotonicity, static degeneracy
// ---------------------------------------------------------------------------

// Replays the per-token gate; the oracle the partition must match.
inline PatchPartition replay_patchify(const EntropySequence& entropies,
                                      const PatchifierConfig& cfg) {
    const int64_t total = static_cast<int64_t>(entropies.size());
    if (!cfg.use_entropy_gate)
        return static_patchify(total, cfg.use_max_len ? cfg.max_patch_len : static_cast<int>(total),
                               cfg);
    PatchPartition p;
    p.covered_len = total;
    p.spans.emplace_back(0, 0);
    if (total == 1) return p;
    int32_t start = 1;
    int len = 1;
    for (int64_t i = 2; i < total; ++i) {
        if (incremental_decision(entropies.values[i], len, i, cfg) == Decision::extend) {
            ++len;
        } else {
            p.spans.emplace_back(start, static_cast<int32_t>(i - 1));
            start = static_cast<int32_t>(i);
            len = 1;
        }
    }
    p.spans.emplace_back(start, static_cast<int32_t>(total - 1));
    return p;
}

inline EntropySequence random_entropy_sequence(Rng& rng, int64_t total, double max_entropy) {
    EntropySequence e;
    e.values.resize(static_cast<size_t>(total));
    e.values[0] = EntropySequence::kSentinel;
    for (int64_t i = 1; i < total; ++i)
        e.values[static_cast<size_t>(i)] = static_cast<float>(rng.real01() * max_entropy);
    return e;
}

inline CheckResult check_patchifier_invariants(int cases = 1000, int64_t max_len = 1024,
                                               uint64_t seed = 17) {
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        const int64_t total = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_len)));
        PatchifierConfig cfg;
        cfg.entropy_threshold = rng.real01() * 10.0;
        cfg.max_patch_len = 1 + static_cast<int>(rng.below(8));
        cfg.row_width = 1 + static_cast<int>(rng.below(64));
        auto ent = random_entropy_sequence(rng, total, 10.0);
        auto part = patchify(ent, cfg);
        try {
            part.validate(cfg);
        } catch (const std::exception& ex) {
            return {"patchifier invariants", false,
                    "case " + std::to_string(c) + ": " + ex.what()};
        }
        const auto oracle = replay_patchify(ent, cfg);
        if (part.spans != oracle.spans)
            return {"patchifier invariants", false,
                    "case " + std::to_string(c) + ": incremental replay mismatch"};

        // monotonicity: a higher threshold never increases M
        PatchifierConfig higher = cfg;
        higher.entropy_threshold += rng.real01() * 5.0;
        if (patchify(ent, higher).num_patches() > part.num_patches())
            return {"patchifier invariants", false,
                    "case " + std::to_string(c) + ": threshold monotonicity violated"};

        // gate off + P_max = p degenerates to the static packing
        PatchifierConfig off = cfg;
        off.use_entropy_gate = false;
        if (patchify(ent, off).spans != static_patchify(total, cfg.max_patch_len, cfg).spans)
            return {"patchifier invariants", false,
                    "case " + std::to_string(c) + ": static degeneracy violated"};
    }
    return {"patchifier invariants", true,
            std::to_string(cases) + " random sequences, replay + monotonicity + static"};
}

// ---------------------------------------------------------------------------
// RoPE properties
// ---------------------------------------------------------------------------

inline CheckResult check_rope_properties(uint64_t seed = 23) {
    Rng rng(seed);
    // norm preservation over 1e4 random vectors
    double max_norm_dev = 0;
    for (int c = 0; c < 10000; ++c) {
        const int d = 4 * (1 + static_cast<int>(rng.below(16)));
        auto table = rope2d_angles(static_cast<int>(rng.below(64)),
                                   static_cast<int>(rng.below(64)), d);
        std::vector<double> v(static_cast<size_t>(d));
        double norm = 0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
        auto rotated = apply_rotary(v, table);
        double rnorm = 0;
        for (double x : rotated) rnorm += x * x;
        max_norm_dev = std::max(max_norm_dev, std::abs(std::sqrt(rnorm) - std::sqrt(norm)));
    }
    if (max_norm_dev >= 1e-5)
        return {"rope properties", false, "norm deviation " + std::to_string(max_norm_dev)};

    // relative-offset invariance of rotated dot products along one axis
    double max_dot_dev = 0;
    for (int c = 0; c < 200; ++c) {
        const int d = 16;
        std::vector<double> q(d), k(d);
        for (auto& x : q) x = rng.normal();
        for (auto& x : k) x = rng.normal();
        const int xq = static_cast<int>(rng.below(16)), xk = static_cast<int>(rng.below(16));
        const int y = static_cast<int>(rng.below(16));
        const int off = static_cast<int>(rng.below(16));
        auto dot = [&](int a, int b) {
            auto qr = apply_rotary(q, rope2d_angles(a, y, d));
            auto kr = apply_rotary(k, rope2d_angles(b, y, d));
            double s = 0;
            for (int i = 0; i < d; ++i) s += qr[i] * kr[i];
            return s;
        };
        max_dot_dev = std::max(max_dot_dev, std::abs(dot(xq, xk) - dot(xq + off, xk + off)));
    }
    if (max_dot_dev >= 1e-5)
        return {"rope properties", false, "offset invariance broke: " + std::to_string(max_dot_dev)};

    // dynamic table arithmetic for every head dim divisible by 16, and
    // singleton-span agreement with the token table on the x group
    for (int d = 16; d <= 256; d += 16) {
        for (auto variant : {EmbeddingVariant::dynamic, EmbeddingVariant::dynamic_no_redundancy,
                             EmbeddingVariant::plain_2d}) {
            PatchSpanCoord span{3, 2, 5};
            auto t = dynamic_rope_angles(span, d, variant);
            if (static_cast<int>(t.angles.size()) != d / 2)
                return {"rope properties", false, "dynamic table size wrong at d=" +
                                                       std::to_string(d)};
        }
        PatchSpanCoord single{7, 4, 4};
        auto dyn = dynamic_rope_angles(single, d);
        auto tok = rope2d_angles(7, 4, d);
        for (int i = 0; i < d / 4; ++i)
            if (dyn.angles[static_cast<size_t>(i)] != tok.angles[static_cast<size_t>(i)])
                return {"rope properties", false, "x-group disagreement at d=" + std::to_string(d)};
    }
    return {"rope properties", true, "norms, offsets, dimension arithmetic"};
}

// ---------------------------------------------------------------------------
// Gradient checks (64-bit)
// ---------------------------------------------------------------------------

inline CheckResult check_kernel_gradients(uint64_t seed = 31) {
    Rng rng(seed);
    double worst = 0;
    std::string worst_name;
    auto track = [&](const std::string& name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };

    {  // linear + rmsnorm + silu gate chain
        ParamStore<double> ps;
        auto* w1 = ps.add("w1", normal_init<double>({6, 4}, rng, 0.5));
        auto* w2 = ps.add("w2", normal_init<double>({6, 4}, rng, 0.5));
        auto* w3 = ps.add("w3", normal_init<double>({3, 6}, rng, 0.5));
        auto* gn = ps.add("g", normal_init<double>({4}, rng, 0.3));
        Tensor<double> x({5, 4});
        for (auto& v : x.data) v = rng.normal();
        track("mlp chain", check_gradients(
                               [&](Graph<double>& g) {
                                   Var xv = g.input(x);
                                   Var h = g.rmsnorm(xv, g.param(*gn));
                                   Var gate = g.linear(h, g.param(*w1));
                                   Var up = g.linear(h, g.param(*w2));
                                   Var out = g.linear(g.silu_gate(gate, up), g.param(*w3));
                                   return g.mean(out);
                               },
                               ps));
    }
    {  // attention with rotary, causal
        ParamStore<double> ps;
        auto* wq = ps.add("wq", normal_init<double>({8, 8}, rng, 0.4));
        auto* wk = ps.add("wk", normal_init<double>({8, 8}, rng, 0.4));
        auto* wv = ps.add("wv", normal_init<double>({8, 8}, rng, 0.4));
        Tensor<double> x({5, 8});
        for (auto& v : x.data) v = rng.normal();
        std::vector<std::pair<int, int>> coords = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}};
        auto rot = token_rot_table<double>(coords, 4);
        auto ranges = query_key_ranges(AttentionMask::causal(), 5, 5);
        track("attention", check_gradients(
                               [&](Graph<double>& g) {
                                   Var xv = g.input(x);
                                   Var q = g.rotary(g.linear(xv, g.param(*wq)), rot, 2);
                                   Var k = g.rotary(g.linear(xv, g.param(*wk)), rot, 2);
                                   Var v = g.linear(xv, g.param(*wv));
                                   return g.mean(g.attention(q, k, v, ranges, 2));
                               },
                               ps));
    }
    {  // cross entropy + embedding + segment ops
        ParamStore<double> ps;
        auto* emb = ps.add("emb", normal_init<double>({7, 6}, rng, 0.5));
        auto* w = ps.add("w", normal_init<double>({7, 6}, rng, 0.5));
        std::vector<int32_t> ids = {1, 4, 2, 6, 0};
        std::vector<int32_t> targets = {4, 2, 6, 0, 3};
        std::vector<KeyRange> spans = {{0, 1}, {2, 4}};
        track("ce chain", check_gradients(
                              [&](Graph<double>& g) {
                                  Var x = g.embedding(g.param(*emb), ids);
                                  Var pooled = g.segment_mean(x, spans);
                                  Var back = g.gather_rows(pooled, {0, 0, 1, 1, 1});
                                  Var logits = g.linear(g.add(x, back), g.param(*w));
                                  return g.sum(g.cross_entropy(logits, targets));
                              },
                              ps));
    }
    {  // full transformer block
        ParamStore<double> ps;
        Rng brng(seed + 1);
        auto blk = make_block_params<double>(ps, "blk", 8, brng);
        Tensor<double> x({4, 8});
        for (auto& v : x.data) v = rng.normal();
        std::vector<std::pair<int, int>> coords = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        auto rot = token_rot_table<double>(coords, 4);
        auto ranges = query_key_ranges(AttentionMask::causal(), 4, 4);
        track("transformer block",
              check_gradients(
                  [&](Graph<double>& g) {
                      Var xv = g.input(x);
                      return g.mean(transformer_block(g, xv, blk, ranges, rot, 2));
                  },
                  ps, 1e-5, 24));
    }
    if (worst >= 1e-3)
        return {"kernel gradients", false, worst_name + " rel err " + std::to_string(worst)};
    return {"kernel gradients", true, "max rel err " + std::to_string(worst)};
}

inline CheckResult check_model_gradients(uint64_t seed = 37) {
    ModelConfig cfg;
    cfg.encoder_layers = 1;
    cfg.global_layers = 1;
    cfg.decoder_layers = 1;
    cfg.hidden = 16;
    cfg.heads = 1;
    cfg.vocab_size = 5;
    cfg.num_classes = 2;
    cfg.patchifier.row_width = 3;
    cfg.patchifier.entropy_threshold = 1.0;
    cfg.patchifier.max_patch_len = 2;
    auto model = DparModel<double>::init(cfg, seed);

    SyntheticSpec spec{2, 3, 5, 2, 0.3, 2};
    auto sample = generate_synthetic_grid(spec, seed);
    Rng rng(seed);
    EntropySequence ent = random_entropy_sequence(rng, sample.grid.size(), 2.0);

    const double err = check_gradients(
        [&](Graph<double>& g) {
            auto fwd = training_forward(g, model, sample, ent, false);
            return fwd.loss;
        },
        model.params, 1e-5, 8);
    if (err >= 1e-3)
        return {"full model gradients", false, "rel err " + std::to_string(err)};
    return {"full model gradients", true, "rel err " + std::to_string(err)};
}

// ---------------------------------------------------------------------------
// End-to-end causality (leak test)
// ---------------------------------------------------------------------------

inline ModelConfig random_tiny_config(Rng& rng) {
    ModelConfig cfg;
    cfg.encoder_layers = 1 + static_cast<int>(rng.below(2));
    cfg.global_layers = 1 + static_cast<int>(rng.below(2));
    cfg.decoder_layers = 1 + static_cast<int>(rng.below(2));
    cfg.heads = 1 + static_cast<int>(rng.below(2));
    cfg.hidden = 16 * cfg.heads;
    cfg.vocab_size = 4 + static_cast<int>(rng.below(8));
    cfg.num_classes = 2 + static_cast<int>(rng.below(3));
    cfg.patchifier.row_width = 2 + static_cast<int>(rng.below(4));
    cfg.patchifier.entropy_threshold = 0.3 + rng.real01();
    cfg.patchifier.max_patch_len = 1 + static_cast<int>(rng.below(4));
    const auto variants = {EmbeddingVariant::dynamic, EmbeddingVariant::dynamic_no_redundancy,
                           EmbeddingVariant::plain_2d};
    cfg.embedding_variant = *(variants.begin() + rng.below(3));
    return cfg;
}

// Max abs probability change at positions < t when tokens at positions >= t
// are replaced. Entropies for the perturbed sample are recomputed with the
// entropy model, exactly as the pipeline would.
inline CheckResult check_causality_leak(int trials = 50, uint64_t seed = 41,
                                        double tolerance = 1e-5) {
    Rng rng(seed);
    double worst = 0;
    for (int c = 0; c < trials; ++c) {
        auto cfg = random_tiny_config(rng);
        const int height = 2 + static_cast<int>(rng.below(3));
        auto model = DparModel<double>::init(cfg, rng.next_u64());
        EntropyModelConfig ecfg;
        ecfg.layers = 1;
        ecfg.hidden = 16;
        ecfg.heads = 1;
        ecfg.vocab_size = cfg.vocab_size;
        auto emodel = EntropyModel<double>::init(ecfg, rng.next_u64());

        SyntheticSpec spec{height, cfg.patchifier.row_width, cfg.vocab_size, 2, 0.5,
                           cfg.num_classes};
        auto sample = generate_synthetic_grid(spec, rng.next_u64());
        const int64_t total = sample.grid.size();

        auto probs_for = [&](const LabeledSample& s) {
            auto ent = entropy_map(emodel, raster_flatten(s.grid));
            Graph<double> g;
            auto fwd = training_forward(g, model, s, ent, false);
            return softmax_rows(g.value(fwd.logits));
        };

        const auto base = probs_for(sample);
        const int64_t t = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(total - 1)));
        LabeledSample perturbed = sample;
        for (int64_t i = t; i < total; ++i)
            perturbed.grid.tokens[static_cast<size_t>(i)] =
                static_cast<int32_t>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
        const auto mod = probs_for(perturbed);

        for (int64_t i = 0; i <= t; ++i)
            for (int64_t j = 0; j < base.cols(); ++j)
                worst = std::max(worst, std::abs(base.data[i * base.cols() + j] -
                                                 mod.data[i * base.cols() + j]));
        if (worst >= tolerance)
            return {"causality leak", false,
                    "trial " + std::to_string(c) + " leak " + std::to_string(worst)};
    }
    return {"causality leak", true, "max deviation " + std::to_string(worst)};
}

// ---------------------------------------------------------------------------
// Packed vs unpacked equivalence
// ---------------------------------------------------------------------------

inline CheckResult check_packed_equivalence(int batches = 20, uint64_t seed = 43,
                                            double loss_tol = 1e-5, double grad_tol = 1e-4) {
    Rng rng(seed);
    double worst_loss = 0, worst_grad = 0;
    for (int c = 0; c < batches; ++c) {
        auto cfg = random_tiny_config(rng);
        auto model = DparModel<double>::init(cfg, rng.next_u64());
        const int batch = 2 + static_cast<int>(rng.below(4));
        std::vector<LabeledSample> samples;
        std::vector<EntropySequence> ents;
        std::vector<bool> drop;
        for (int b = 0; b < batch; ++b) {
            const int height = 1 + static_cast<int>(rng.below(4));
            SyntheticSpec spec{height, cfg.patchifier.row_width, cfg.vocab_size, 1, 1.0,
                               cfg.num_classes};
            samples.push_back(generate_synthetic_grid(spec, rng.next_u64()));
            ents.push_back(random_entropy_sequence(rng, samples.back().grid.size(), 2.0));
            drop.push_back(rng.bernoulli(0.2));
        }

        // packed pass
        auto packed = pack_batch(cfg, samples, ents, drop);
        model.params.zero_grads();
        Graph<double> pg;
        auto pfwd = packed_training_forward(pg, model, packed);
        pg.backward(pfwd.mean_loss);
        std::vector<double> packed_losses;
        for (double v : pg.value(pfwd.per_sample_losses).data) packed_losses.push_back(v);
        std::vector<std::vector<double>> packed_grads;
        for (size_t i = 0; i < model.params.size(); ++i)
            packed_grads.emplace_back(model.params.at(i).grad.data.begin(),
                                      model.params.at(i).grad.data.end());

        // individual passes, gradients accumulated with the same 1/total scale
        int64_t total_tokens = 0;
        for (const auto& s : samples) total_tokens += s.grid.size();
        model.params.zero_grads();
        std::vector<double> single_losses;
        for (int b = 0; b < batch; ++b) {
            Graph<double> g;
            auto fwd = training_forward(g, model, samples[static_cast<size_t>(b)],
                                        ents[static_cast<size_t>(b)],
                                        drop[static_cast<size_t>(b)]);
            single_losses.push_back(g.value(fwd.loss).data[0]);
            Var scaled = g.scale(fwd.loss, 1.0 / static_cast<double>(total_tokens));
            g.backward(scaled);
        }

        for (int b = 0; b < batch; ++b) {
            const double rel = std::abs(packed_losses[b] - single_losses[b]) /
                               (std::abs(single_losses[b]) + 1e-12);
            worst_loss = std::max(worst_loss, rel);
        }
        for (size_t i = 0; i < model.params.size(); ++i) {
            const auto& g = model.params.at(i).grad.data;
            double num = 0, den = 0;
            for (size_t j = 0; j < g.size(); ++j) {
                num += std::abs(packed_grads[i][j] - g[j]);
                den += std::abs(g[j]);
            }
            worst_grad = std::max(worst_grad, num / (den + 1e-12));
        }
        if (worst_loss >= loss_tol || worst_grad >= grad_tol)
            return {"packed equivalence", false,
                    "batch " + std::to_string(c) + " loss rel " + std::to_string(worst_loss) +
                        " grad rel " + std::to_string(worst_grad)};
    }
    std::ostringstream os;
    os << "loss rel " << worst_loss << ", grad rel " << worst_grad;
    return {"packed equivalence", true, os.str()};
}

// ---------------------------------------------------------------------------
// FLOPs estimator shape
// ---------------------------------------------------------------------------

inline CheckResult check_flops_monotonicity() {
    ModelConfig cfg;
    cfg.encoder_layers = 1;
    cfg.global_layers = 8;
    cfg.decoder_layers = 3;
    cfg.hidden = 768;
    cfg.heads = 12;
    cfg.vocab_size = 16384;
    double prev = std::numeric_limits<double>::infinity();
    for (double p = 1.0; p <= 4.01; p += 0.25) {
        const double total = estimate_flops(cfg, 256, p).forward_total();
        if (total >= prev)
            return {"flops monotonicity", false, "not decreasing at p_avg " + std::to_string(p)};
        prev = total;
    }
    // strictly increasing in T, layers, hidden
    const double base = estimate_flops(cfg, 256, 1.81).forward_total();
    if (estimate_flops(cfg, 512, 1.81).forward_total() <= base)
        return {"flops monotonicity", false, "not increasing in T"};
    ModelConfig deeper = cfg;
    deeper.global_layers += 1;
    if (estimate_flops(deeper, 256, 1.81).forward_total() <= base)
        return {"flops monotonicity", false, "not increasing in layers"};
    ModelConfig wider = cfg;
    wider.hidden += 64;
    if (estimate_flops(wider, 256, 1.81).forward_total() <= base)
        return {"flops monotonicity", false, "not increasing in hidden"};
    return {"flops monotonicity", true, "decreasing in P_avg, increasing in T/layers/hidden"};
}

}  // namespace dpar
