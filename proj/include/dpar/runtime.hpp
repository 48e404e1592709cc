#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dpar/checkpoint.hpp"
#include "dpar/entropy.hpp"
#include "dpar/model.hpp"

namespace dpar {

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int64_t steps = 2000;
    int batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double clip_norm = 1.0;
    double cfg_drop = 0.1;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only

    void validate() const {
        require(steps >= 1 && batch_size >= 1, "steps/batch must be positive");
        require(lr > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                "optimizer rates out of range");
        require(weight_decay >= 0, "weight decay must be non-negative");
        require(cfg_drop >= 0 && cfg_drop <= 1, "cfg drop probability out of range");
    }

    AdamWConfig adamw() const {
        return {lr, weight_decay, beta1, beta2, 1e-8, clip_norm};
    }
};

struct TrainResult {
    std::vector<std::pair<int64_t, double>> loss_curve;  // (step, mean loss per token)
    double final_loss = 0;
    int64_t samples_seen = 0;
    int64_t cfg_drops = 0;  // null-condition substitutions among samples_seen
};

// Hook invoked after every optimizer step; used for periodic checkpoints,
// progress output and early stopping. Returning false ends training.
using StepHook = std::function<bool(int64_t step, double loss)>;

template <typename T>
TrainResult train_dpar(DparModel<T>& model, const std::vector<LabeledSample>& samples,
                       const std::vector<EntropySequence>& entropies, const TrainConfig& cfg,
                       const StepHook& hook = {}) {
    cfg.validate();
    require(!samples.empty(), "empty corpus");
    require(samples.size() == entropies.size(), "corpus/cache size mismatch");
    Rng rng(derive_seed(cfg.seed, 0x7e41));
    AdamW<T> opt(cfg.adamw());
    TrainResult result;
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<LabeledSample> batch;
        std::vector<EntropySequence> ents;
        std::vector<bool> drop;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = static_cast<size_t>(rng.below(samples.size()));
            batch.push_back(samples[idx]);
            ents.push_back(entropies[idx]);
            drop.push_back(rng.bernoulli(cfg.cfg_drop));
            ++result.samples_seen;
            result.cfg_drops += drop.back();
        }
        auto packed = pack_batch(model.config, batch, ents, drop);
        Graph<T> g;
        auto fwd = packed_training_forward(g, model, packed);
        const double loss = static_cast<double>(g.value(fwd.mean_loss).data[0]);
        if (!std::isfinite(loss)) throw NumericError("non-finite training loss at step " +
                                                     std::to_string(step));
        g.backward(fwd.mean_loss);
        opt.step(model.params);
        result.loss_curve.emplace_back(step, loss);
        result.final_loss = loss;
        if (hook && !hook(step, loss)) break;
    }
    return result;
}

// Entropy model training: plain next-token prediction over raw tokens,
// packed without padding.
template <typename T>
TrainResult train_entropy_model(EntropyModel<T>& model, const std::vector<LabeledSample>& samples,
                                const TrainConfig& cfg, const StepHook& hook = {}) {
    cfg.validate();
    require(!samples.empty(), "empty corpus");
    Rng rng(derive_seed(cfg.seed, 0xe41));
    AdamW<T> opt(cfg.adamw());
    TrainResult result;
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<int32_t> ids;
        std::vector<std::pair<int, int>> coords;
        std::vector<int32_t> targets;
        std::vector<KeyRange> blocks;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& sample = samples[rng.below(samples.size())];
            require(sample.grid.vocab_size == model.config.vocab_size,
                    "corpus vocab does not match entropy model");
            const auto seq = raster_flatten(sample.grid);
            const int64_t total = static_cast<int64_t>(seq.tokens.size());
            require(total >= 2, "entropy model training needs at least two tokens per sample");
            const int32_t off = static_cast<int32_t>(ids.size());
            for (int64_t i = 0; i + 1 < total; ++i) {
                ids.push_back(seq.tokens[i]);
                coords.push_back(seq.coords[i]);
                targets.push_back(seq.tokens[i + 1]);
            }
            blocks.emplace_back(off, static_cast<int32_t>(ids.size()) - 1);
        }
        auto ranges = query_key_ranges(AttentionMask::block_diagonal_causal(blocks),
                                       static_cast<int>(ids.size()),
                                       static_cast<int>(ids.size()));
        Graph<T> g;
        Var logits = entropy_lm_logits(g, model, ids, coords, &ranges);
        Var loss = g.mean(g.cross_entropy(logits, targets));
        const double lv = static_cast<double>(g.value(loss).data[0]);
        if (!std::isfinite(lv)) throw NumericError("non-finite entropy-model loss at step " +
                                                   std::to_string(step));
        g.backward(loss);
        opt.step(model.params);
        result.loss_curve.emplace_back(step, lv);
        result.final_loss = lv;
        if (hook && !hook(step, lv)) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Teacher-forced evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double ce_per_token = 0;  // nats
    double accuracy = 0;      // argmax next-token accuracy
};

template <typename T>
EvalResult evaluate_teacher_forced(const DparModel<T>& model,
                                   const std::vector<LabeledSample>& samples,
                                   const std::vector<EntropySequence>& entropies,
                                   const PatchifierConfig* pcfg_override = nullptr) {
    require(samples.size() == entropies.size() && !samples.empty(),
            "corpus/cache size mismatch");
    double ce = 0;
    int64_t correct = 0, total = 0;
    for (size_t s = 0; s < samples.size(); ++s) {
        Graph<T> g;
        auto fwd = training_forward(g, model, samples[s], entropies[s], /*cfg_drop=*/false,
                                    pcfg_override);
        ce += static_cast<double>(g.value(fwd.loss).data[0]);
        const auto& logits = g.value(fwd.logits);
        const auto seq = raster_flatten(samples[s].grid);
        const int64_t V = logits.cols();
        for (int64_t i = 0; i < logits.rows(); ++i) {
            const T* row = logits.ptr() + i * V;
            int64_t best = 0;
            for (int64_t j = 1; j < V; ++j)
                if (row[j] > row[best]) best = j;
            correct += (best == seq.tokens[static_cast<size_t>(i)]);
            ++total;
        }
    }
    return {ce / static_cast<double>(total), static_cast<double>(correct) / total};
}

// ---------------------------------------------------------------------------
// Sampling (incremental patch-skipping inference)
// ---------------------------------------------------------------------------

struct SamplingConfig {
    int top_k = 0;            // 0 disables
    double top_p = 1.0;       // 1.0 disables
    double temperature = 1.0;
    double cfg_scale = 1.0;   // 1.0 = conditional pass only
    std::optional<double> entropy_threshold;  // inference-time E_Th override

    void validate() const {
        require(top_k >= 0, "top_k must be >= 0");
        require(top_p > 0 && top_p <= 1.0, "top_p must lie in (0,1]");
        require(temperature > 0, "temperature must be positive");
        require(cfg_scale >= 0, "cfg_scale must be >= 0");
    }
};

// uncond + s * (cond - uncond)
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double scale) {
    require(cond.shape == uncond.shape, "cfg_combine shape mismatch");
    Tensor<T> out(cond.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>(uncond.data[i] +
                                     scale * (cond.data[i] - uncond.data[i]));
    return out;
}

// temperature -> top-k -> top-p -> renormalize -> sample
template <typename T>
int32_t sample_from_logits(const Tensor<T>& logits_row, const SamplingConfig& cfg, Rng& rng) {
    const int64_t V = logits_row.numel();
    std::vector<double> scaled(V);
    for (int64_t j = 0; j < V; ++j)
        scaled[j] = static_cast<double>(logits_row.data[j]) / cfg.temperature;
    std::vector<int32_t> order(V);
    for (int64_t j = 0; j < V; ++j) order[j] = static_cast<int32_t>(j);
    std::sort(order.begin(), order.end(),
              [&](int32_t a, int32_t b) { return scaled[a] > scaled[b]; });
    int64_t keep = (cfg.top_k > 0) ? std::min<int64_t>(cfg.top_k, V) : V;

    const double maxv = scaled[order[0]];
    std::vector<double> probs(static_cast<size_t>(keep));
    double z = 0;
    for (int64_t j = 0; j < keep; ++j) {
        probs[j] = std::exp(scaled[order[j]] - maxv);
        z += probs[j];
    }
    if (cfg.top_p < 1.0) {
        double cum = 0;
        int64_t cut = keep;
        for (int64_t j = 0; j < keep; ++j) {
            cum += probs[j] / z;
            if (cum >= cfg.top_p) {
                cut = j + 1;
                break;
            }
        }
        keep = cut;
        z = 0;
        for (int64_t j = 0; j < keep; ++j) z += probs[j];
    }
    double r = rng.real01() * z;
    for (int64_t j = 0; j < keep; ++j) {
        r -= probs[j];
        if (r < 0) return order[j];
    }
    return order[keep - 1];
}

struct SampleResult {
    TokenGrid grid;
    int label = 0;
    PatchPartition partition;  // over the generated tokens (BOS patch dropped)
    int64_t global_calls = 0;  // conditional-stream patch transformer runs
    std::vector<Tensor<float>> step_probs;  // recorded pre-sampling distributions
};

// Incremental generator. Per step it patchifies the prefix, asks the entropy
// model for e_t, and either extends the open patch (encoder + decoder only,
// reusing the cached global output) or finalizes it and runs the patch
// transformer once to serve the new patch. Correctness-first: token states
// are recomputed from the full prefix each step.
template <typename T>
class Sampler {
public:
    Sampler(const DparModel<T>& model, const EntropyModel<T>& entropy_model, SamplingConfig cfg)
        : model_(model), entropy_model_(entropy_model), cfg_(cfg) {
        cfg_.validate();
        require(entropy_model.config.vocab_size == model.config.vocab_size,
                "entropy model vocabulary does not match the checkpoint");
        pcfg_ = model.config.patchifier;
        if (cfg_.entropy_threshold) pcfg_.entropy_threshold = *cfg_.entropy_threshold;
    }

    SampleResult generate(int label, int height, int width, Rng& rng,
                          const std::vector<int32_t>* forced_tokens = nullptr,
                          bool record_probs = false) {
        const auto& mc = model_.config;
        require(label >= 0 && label < mc.num_classes, "label out of range");
        require(width == pcfg_.row_width,
                "grid width must match the patchifier row width");
        const int64_t total = static_cast<int64_t>(height) * width;
        if (forced_tokens)
            require(static_cast<int64_t>(forced_tokens->size()) == total,
                    "forced token count mismatch");

        const bool use_cfg = cfg_.cfg_scale != 1.0;
        SampleResult res;
        res.label = label;

        // BOS-extended state
        std::vector<int32_t> ids = {mc.bos_id()};
        std::vector<std::pair<int, int>> coords = {kBosCoord};
        PatchPartition partition;
        partition.covered_len = 1;
        partition.spans = {{0, 0}};
        int open_len = 1;  // length of the last span

        std::vector<int32_t> tokens;  // generated raster tokens
        Tensor<T> h_hat_cond, h_hat_null;

        for (int64_t t = 0; t < total; ++t) {
            const double e_t = (t == 0) ? std::numeric_limits<double>::infinity()
                                        : prefix_entropy(tokens, width);
            const Decision d = (t == 0) ? Decision::new_patch
                                        : incremental_decision(e_t, open_len, t, pcfg_);

            Graph<T> g;
            auto enc = encode(g, model_, ids, coords, partition);
            if (d == Decision::new_patch) {
                h_hat_cond = g.value(global_forward(g, model_, label, enc.h_patch, partition));
                ++res.global_calls;
                if (use_cfg)
                    h_hat_null = g.value(
                        global_forward(g, model_, mc.null_class_id(), enc.h_patch, partition));
            }
            Tensor<float> logits_row = last_logits(g, enc.h_tok, h_hat_cond, coords, partition);
            if (use_cfg) {
                Tensor<float> null_row =
                    last_logits(g, enc.h_tok, h_hat_null, coords, partition);
                logits_row = cfg_combine(logits_row, null_row, cfg_.cfg_scale);
            }
            if (record_probs) res.step_probs.push_back(softmax_rows(logits_row));

            const int32_t x_t = forced_tokens ? (*forced_tokens)[static_cast<size_t>(t)]
                                              : sample_from_logits(logits_row, cfg_, rng);
            require(x_t >= 0 && x_t < mc.vocab_size, "sampled token out of vocabulary");
            tokens.push_back(x_t);

            // position t+1 joins or opens a patch
            if (d == Decision::extend) {
                partition.spans.back().second = static_cast<int32_t>(t + 1);
                ++open_len;
            } else {
                partition.spans.emplace_back(static_cast<int32_t>(t + 1),
                                             static_cast<int32_t>(t + 1));
                open_len = 1;
            }
            partition.covered_len = t + 2;
            ids.push_back(x_t);
            coords.emplace_back(static_cast<int>(t / width), static_cast<int>(t % width));
        }

        res.grid.height = height;
        res.grid.width = width;
        res.grid.vocab_size = mc.vocab_size;
        res.grid.tokens = std::move(tokens);
        // partition over the generated tokens: drop the BOS patch, shift by -1
        res.partition.covered_len = total;
        for (size_t m = 1; m < partition.spans.size(); ++m)
            res.partition.spans.emplace_back(partition.spans[m].first - 1,
                                             partition.spans[m].second - 1);
        return res;
    }

private:
    double prefix_entropy(const std::vector<int32_t>& tokens, int width) const {
        std::vector<std::pair<int, int>> coords;
        coords.reserve(tokens.size());
        for (size_t i = 0; i < tokens.size(); ++i)
            coords.emplace_back(static_cast<int>(i) / width, static_cast<int>(i) % width);
        return next_token_entropy(entropy_model_, tokens, coords);
    }

    // Decoder pass over the current prefix; returns the last row's logits.
    Tensor<float> last_logits(Graph<T>& g, Var h_tok, const Tensor<T>& h_hat,
                              const std::vector<std::pair<int, int>>& coords,
                              const PatchPartition& partition) {
        Var h_hat_var = g.input(h_hat);
        Var logits = decode(g, model_, h_tok, h_hat_var, coords, partition);
        const auto& lv = g.value(logits);
        Tensor<float> row({1, lv.cols()});
        const T* src = lv.ptr() + (lv.rows() - 1) * lv.cols();
        for (int64_t j = 0; j < lv.cols(); ++j) row.data[j] = static_cast<float>(src[j]);
        return row;
    }

    const DparModel<T>& model_;
    const EntropyModel<T>& entropy_model_;
    SamplingConfig cfg_;
    PatchifierConfig pcfg_;
};

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double threshold = 0;
    double p_avg = 0;
    double mean_patches = 0;
    double ce_per_token = 0;
};

template <typename T>
std::vector<SweepRow> threshold_sweep(const DparModel<T>& model,
                                      const std::vector<LabeledSample>& samples,
                                      const std::vector<EntropySequence>& entropies,
                                      const std::vector<double>& thresholds) {
    require(!thresholds.empty(), "no thresholds given");
    std::vector<SweepRow> rows;
    for (double th : thresholds) {
        require(th > 0 && th < std::log(static_cast<double>(model.config.vocab_size)) + 1e-9,
                "threshold outside (0, ln V)");
        PatchifierConfig pcfg = model.config.patchifier;
        pcfg.entropy_threshold = th;
        std::vector<PatchPartition> parts;
        for (const auto& e : entropies) {
            EntropySequence seq = e;
            auto p = patchify(seq, pcfg);
            p.validate(pcfg);
            parts.push_back(std::move(p));
        }
        const auto stats = partition_stats(parts);
        const auto eval = evaluate_teacher_forced(model, samples, entropies, &pcfg);
        rows.push_back({th, stats.avg_patch_len, stats.generation_steps, eval.ce_per_token});
    }
    return rows;
}

// Loss-curve / sweep CSV helpers.
inline void write_loss_csv(const std::vector<std::pair<int64_t, double>>& curve,
                           const std::string& path) {
    std::ofstream os(path);
    require(static_cast<bool>(os), "cannot open for writing: " + path);
    os << "step,loss\n";
    for (const auto& [step, loss] : curve) os << step << "," << loss << "\n";
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream os(path);
    require(static_cast<bool>(os), "cannot open for writing: " + path);
    os << "threshold,p_avg,mean_patches,ce_per_token\n";
    for (const auto& r : rows)
        os << r.threshold << "," << r.p_avg << "," << r.mean_patches << "," << r.ce_per_token
           << "\n";
}

}  // namespace dpar
