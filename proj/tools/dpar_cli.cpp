// Command-line entry point: corpus generation, entropy-model training,
// entropy caching, DPAR training, sampling, patchification analysis, FLOPs
// reports, threshold sweeps and the invariant suite.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "dpar/checkpoint.hpp"
#include "dpar/config_json.hpp"
#include "dpar/flops.hpp"
#include "dpar/manifest.hpp"
#include "dpar/runtime.hpp"
#include "dpar/verify.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw dpar::ValidationError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& ex) {
        throw dpar::ValidationError("config parse error in " + path + ": " + ex.what());
    }
    return j;
}

std::vector<double> parse_threshold_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

// checkpoint <-> typed model helpers --------------------------------------

dpar::Checkpoint make_checkpoint(const std::string& config_json_str,
                                 const dpar::ParamStore<float>& params) {
    dpar::Checkpoint ckpt;
    ckpt.config_json = config_json_str;
    ckpt.config_digest = dpar::fnv1a64(config_json_str);
    dpar::store_to_checkpoint(params, ckpt);
    return ckpt;
}

dpar::DparModel<float> load_dpar_model(const std::string& path) {
    auto ckpt = dpar::load_checkpoint(path);
    json j = json::parse(ckpt.config_json);
    dpar::require(j.value("kind", "") == "dpar", path + " is not a DPAR checkpoint");
    dpar::ModelConfig cfg = j;
    auto model = dpar::DparModel<float>::init(cfg, 0);
    dpar::checkpoint_to_store(ckpt, model.params);
    return model;
}

dpar::EntropyModel<float> load_entropy_model(const std::string& path) {
    auto ckpt = dpar::load_checkpoint(path);
    json j = json::parse(ckpt.config_json);
    dpar::require(j.value("kind", "") == "entropy",
                  path + " is not an entropy-model checkpoint");
    dpar::EntropyModelConfig cfg = j;
    auto model = dpar::EntropyModel<float>::init(cfg, 0);
    dpar::checkpoint_to_store(ckpt, model.params);
    return model;
}

uint64_t entropy_model_digest(const dpar::EntropyModel<float>& m) {
    return dpar::params_digest(m.params, dpar::config_digest(m.config));
}

// Splits `items` across `threads` workers.
void parallel_for(size_t items, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1) {
        for (size_t i = 0; i < items; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&]() {
            for (size_t i = next.fetch_add(1); i < items; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// subcommand state ----------------------------------------------------------

struct Args {
    // shared
    std::string config_path, spec_path, corpus_path, cache_path, checkpoint_path,
        entropy_model_path, out_path, loss_csv, dump_path, pgm_prefix, thresholds;
    uint64_t seed = 0;
    int threads = 1;
    int count = 0;
    int64_t steps = -1;
    int batch = -1;
    double lr = -1, weight_decay = -1, cfg_drop = -1;
    int64_t checkpoint_every = 0;
    double eth = std::numeric_limits<double>::quiet_NaN();
    int pmax = -1;
    int row_width = -1;
    int layers = -1, hidden = -1, heads = -1;
    bool stats = false;
    bool save_optimizer = false;
    int label = -1;
    int height = -1, width = -1;
    double temperature = 1.0, top_p = 1.0, cfg_scale = 1.0;
    int top_k = 0;
    int64_t tokens = 256;
    double pavg = 1.81;
    int baseline_layers = 0;
    int static_len = 0;
};

void apply_train_overrides(dpar::TrainConfig& tc, const Args& a) {
    if (a.steps >= 0) tc.steps = a.steps;
    if (a.batch >= 0) tc.batch_size = a.batch;
    if (a.lr >= 0) tc.lr = a.lr;
    if (a.weight_decay >= 0) tc.weight_decay = a.weight_decay;
    if (a.cfg_drop >= 0) tc.cfg_drop = a.cfg_drop;
    tc.seed = a.seed;
    tc.checkpoint_every = a.checkpoint_every;
}

int cmd_gen_corpus(const Args& a) {
    dpar::SyntheticSpec spec;
    int count = 64;
    json cfg_json = json::object();
    if (!a.spec_path.empty()) {
        cfg_json = load_json_file(a.spec_path);
        spec = cfg_json;
        count = cfg_json.value("count", count);
    }
    if (a.count > 0) count = a.count;
    spec.validate();

    std::vector<dpar::LabeledSample> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i)
        samples.push_back(dpar::generate_synthetic_grid(spec, a.seed + static_cast<uint64_t>(i)));
    dpar::write_token_file(samples, spec.num_classes, a.out_path);

    json resolved = spec;
    resolved["count"] = count;
    dpar::RunManifest m;
    m.command = "gen-corpus";
    m.config_json = resolved.dump();
    m.config_digest = dpar::fnv1a64(m.config_json);
    m.seed = a.seed;
    if (!a.spec_path.empty()) m.inputs.emplace_back("spec", a.spec_path);
    m.outputs.emplace_back("corpus", a.out_path);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    std::cout << "wrote " << count << " samples (" << spec.height << "x" << spec.width
              << ", V=" << spec.vocab_size << ") to " << a.out_path << "\n";
    return 0;
}

int cmd_train_entropy(const Args& a) {
    auto corpus = dpar::read_token_file(a.corpus_path);
    dpar::require(!corpus.samples.empty(), "corpus is empty");

    dpar::EntropyModelConfig ecfg;
    if (!a.config_path.empty()) ecfg = load_json_file(a.config_path);
    ecfg.vocab_size = corpus.samples[0].grid.vocab_size;
    if (a.layers > 0) ecfg.layers = a.layers;
    if (a.hidden > 0) ecfg.hidden = a.hidden;
    if (a.heads > 0) ecfg.heads = a.heads;
    ecfg.validate();

    dpar::TrainConfig tc;
    tc.steps = 1000;
    tc.cfg_drop = 0.0;
    apply_train_overrides(tc, a);

    auto model = dpar::EntropyModel<float>::init(ecfg, a.seed);
    auto result = dpar::train_entropy_model(model, corpus.samples, tc,
                                            [](int64_t step, double loss) {
                                                if (step % 100 == 0)
                                                    std::cout << "step " << step << " loss "
                                                              << loss << "\n";
                                                return true;
                                            });
    const std::string cfg_str = dpar::canonical_config_json(ecfg);
    auto ckpt = make_checkpoint(cfg_str, model.params);
    dpar::save_checkpoint(ckpt, a.out_path);
    if (!a.loss_csv.empty()) dpar::write_loss_csv(result.loss_curve, a.loss_csv);

    dpar::RunManifest m;
    m.command = "train-entropy";
    m.config_json = cfg_str;
    m.config_digest = dpar::fnv1a64(cfg_str);
    m.seed = a.seed;
    m.inputs.emplace_back("corpus", a.corpus_path);
    m.outputs.emplace_back("checkpoint", a.out_path);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    std::cout << "final loss " << result.final_loss << ", digest "
              << entropy_model_digest(model) << "\n";
    return 0;
}

int cmd_build_cache(const Args& a) {
    auto corpus = dpar::read_token_file(a.corpus_path);
    auto model = load_entropy_model(a.entropy_model_path);
    dpar::require(!corpus.samples.empty(), "corpus is empty");
    dpar::require(corpus.samples[0].grid.vocab_size == model.config.vocab_size,
                  "corpus vocabulary does not match the entropy model");

    std::vector<dpar::EntropySequence> sequences(corpus.samples.size());
    parallel_for(corpus.samples.size(), a.threads, [&](size_t i) {
        sequences[i] = dpar::entropy_map(model, dpar::raster_flatten(corpus.samples[i].grid));
    });
    const uint64_t digest = entropy_model_digest(model);
    dpar::write_entropy_cache(sequences, digest, a.out_path);

    dpar::RunManifest m;
    m.command = "build-cache";
    m.config_json = dpar::canonical_config_json(model.config);
    m.config_digest = digest;
    m.seed = a.seed;
    m.inputs.emplace_back("corpus", a.corpus_path);
    m.inputs.emplace_back("entropy_model", a.entropy_model_path);
    m.outputs.emplace_back("cache", a.out_path);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    std::cout << "cached " << sequences.size() << " entropy sequences to " << a.out_path << "\n";
    return 0;
}

int cmd_train(const Args& a) {
    auto corpus = dpar::read_token_file(a.corpus_path);
    dpar::require(!corpus.samples.empty(), "corpus is empty");
    auto cache = dpar::load_entropy_cache(a.cache_path);
    dpar::require(cache.sequences.size() == corpus.samples.size(),
                  "cache sample count does not match the corpus");
    dpar::require(static_cast<int64_t>(cache.sequences[0].size()) ==
                      corpus.samples[0].grid.size(),
                  "cache sequence length does not match the corpus grids");

    dpar::ModelConfig cfg;
    if (!a.config_path.empty()) cfg = load_json_file(a.config_path);
    cfg.vocab_size = corpus.samples[0].grid.vocab_size;
    cfg.num_classes = corpus.num_classes;
    cfg.patchifier.row_width = corpus.samples[0].grid.width;
    if (!std::isnan(a.eth)) cfg.patchifier.entropy_threshold = a.eth;
    if (a.pmax > 0) cfg.patchifier.max_patch_len = a.pmax;
    cfg.validate();

    dpar::TrainConfig tc;
    apply_train_overrides(tc, a);

    auto model = dpar::DparModel<float>::init(cfg, a.seed);
    const std::string cfg_str = dpar::canonical_config_json(cfg);
    const auto save = [&](const std::string& path, const dpar::AdamW<float>* opt) {
        auto ckpt = make_checkpoint(cfg_str, model.params);
        if (opt && a.save_optimizer) {
            dpar::Checkpoint& c = ckpt;
            c.has_optimizer = true;
            c.opt_step = opt->step_count();
        }
        dpar::save_checkpoint(ckpt, path);
    };

    auto result = dpar::train_dpar(model, corpus.samples, cache.sequences, tc,
                                   [&](int64_t step, double loss) {
                                       if (step % 100 == 0)
                                           std::cout << "step " << step << " loss " << loss
                                                     << "\n";
                                       if (tc.checkpoint_every > 0 &&
                                           step % tc.checkpoint_every == 0 && step < tc.steps)
                                           save(a.out_path + ".step" + std::to_string(step),
                                                nullptr);
                                       return true;
                                   });
    save(a.out_path, nullptr);
    if (!a.loss_csv.empty()) dpar::write_loss_csv(result.loss_curve, a.loss_csv);

    dpar::RunManifest m;
    m.command = "train";
    m.config_json = cfg_str;
    m.config_digest = dpar::fnv1a64(cfg_str);
    m.seed = a.seed;
    m.inputs.emplace_back("corpus", a.corpus_path);
    m.inputs.emplace_back("cache", a.cache_path);
    m.outputs.emplace_back("checkpoint", a.out_path);
    if (!a.loss_csv.empty()) m.outputs.emplace_back("loss_csv", a.loss_csv);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    std::cout << "final loss " << result.final_loss << "\n";
    return 0;
}

int cmd_sample(const Args& a) {
    auto model = load_dpar_model(a.checkpoint_path);
    auto emodel = load_entropy_model(a.entropy_model_path);
    const int count = a.count > 0 ? a.count : 1;
    const int width = a.width > 0 ? a.width : model.config.patchifier.row_width;
    const int height = a.height > 0 ? a.height : width;

    dpar::SamplingConfig sc;
    sc.temperature = a.temperature;
    sc.top_k = a.top_k;
    sc.top_p = a.top_p;
    sc.cfg_scale = a.cfg_scale;
    if (!std::isnan(a.eth)) sc.entropy_threshold = a.eth;

    sc.validate();
    std::vector<dpar::LabeledSample> grids(static_cast<size_t>(count));
    std::vector<dpar::SampleResult> results(static_cast<size_t>(count));
    parallel_for(static_cast<size_t>(count), a.threads, [&](size_t i) {
        dpar::Rng rng(dpar::derive_seed(a.seed, i));
        const int label = a.label >= 0
                              ? a.label
                              : static_cast<int>(rng.below(
                                    static_cast<uint64_t>(model.config.num_classes)));
        dpar::Sampler<float> local(model, emodel, sc);
        results[i] = local.generate(label, height, width, rng);
        grids[i] = {results[i].grid, results[i].label};
    });
    dpar::write_token_file(grids, model.config.num_classes, a.out_path);

    if (!a.pgm_prefix.empty()) {
        for (size_t i = 0; i < results.size(); ++i) {
            auto ent = dpar::entropy_map(emodel, dpar::raster_flatten(results[i].grid));
            dpar::write_patch_overlay_pgm(ent, results[i].partition, height, width,
                                          a.pgm_prefix + std::to_string(i) + ".pgm");
        }
    }

    double mean_calls = 0;
    for (const auto& r : results) mean_calls += static_cast<double>(r.global_calls);
    mean_calls /= static_cast<double>(count);

    json cfg_json = {{"temperature", sc.temperature},
                     {"top_k", sc.top_k},
                     {"top_p", sc.top_p},
                     {"cfg_scale", sc.cfg_scale},
                     {"height", height},
                     {"width", width},
                     {"count", count}};
    if (sc.entropy_threshold) cfg_json["entropy_threshold"] = *sc.entropy_threshold;
    dpar::RunManifest m;
    m.command = "sample";
    m.config_json = cfg_json.dump();
    m.config_digest = dpar::fnv1a64(m.config_json);
    m.seed = a.seed;
    m.inputs.emplace_back("checkpoint", a.checkpoint_path);
    m.inputs.emplace_back("entropy_model", a.entropy_model_path);
    m.outputs.emplace_back("grids", a.out_path);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    std::cout << "generated " << count << " grids, mean patch-transformer calls " << mean_calls
              << "\n";
    return 0;
}

int cmd_patchify(const Args& a) {
    auto corpus = dpar::read_token_file(a.corpus_path);
    auto cache = dpar::load_entropy_cache(a.cache_path);
    dpar::require(cache.sequences.size() == corpus.samples.size(),
                  "cache sample count does not match the corpus");
    dpar::PatchifierConfig cfg;
    cfg.row_width = a.row_width > 0 ? a.row_width : corpus.samples[0].grid.width;
    if (!std::isnan(a.eth)) cfg.entropy_threshold = a.eth;
    if (a.pmax > 0) cfg.max_patch_len = a.pmax;
    cfg.validate();

    std::vector<dpar::PatchPartition> parts;
    parts.reserve(cache.sequences.size());
    for (const auto& e : cache.sequences) {
        auto p = a.static_len > 0
                     ? dpar::static_patchify(static_cast<int64_t>(e.size()), a.static_len, cfg)
                     : dpar::patchify(e, cfg);
        p.validate(cfg);
        parts.push_back(std::move(p));
    }

    std::ostream* out = &std::cout;
    std::ofstream dump;
    if (!a.dump_path.empty()) {
        dump.open(a.dump_path);
        dpar::require(static_cast<bool>(dump), "cannot open dump file");
        out = &dump;
    }
    for (const auto& p : parts) {
        for (size_t m = 0; m < p.spans.size(); ++m)
            (*out) << (m ? " " : "") << p.spans[m].first << ":" << p.spans[m].second;
        (*out) << "\n";
    }

    if (a.stats) {
        const auto stats = dpar::partition_stats(parts);
        std::cout << "samples " << parts.size() << "\n";
        std::cout << "total patches " << stats.num_patches << "\n";
        std::cout << "p_avg " << stats.avg_patch_len << "\n";
        std::cout << "mean steps " << stats.generation_steps << "\n";
        std::cout << "length histogram:";
        for (size_t len = 1; len < stats.length_histogram.size(); ++len)
            std::cout << " " << len << ":" << stats.length_histogram[len];
        std::cout << "\n";
    }
    if (!a.pgm_prefix.empty()) {
        const int h = corpus.samples[0].grid.height, w = corpus.samples[0].grid.width;
        for (size_t i = 0; i < parts.size(); ++i)
            dpar::write_patch_overlay_pgm(cache.sequences[i], parts[i], h, w,
                                          a.pgm_prefix + std::to_string(i) + ".pgm");
    }
    return 0;
}

int cmd_flops(const Args& a) {
    dpar::ModelConfig cfg;
    if (!a.config_path.empty()) cfg = load_json_file(a.config_path);
    const auto report = dpar::estimate_flops(cfg, a.tokens, a.pavg);
    std::cout << "stage,gflops\n";
    std::cout << "encoder," << report.encoder / 1e9 << "\n";
    std::cout << "global," << report.global / 1e9 << "\n";
    std::cout << "decoder," << report.decoder / 1e9 << "\n";
    std::cout << "head," << report.head / 1e9 << "\n";
    std::cout << "forward_total," << report.forward_total() / 1e9 << "\n";
    std::cout << "training_total," << report.training_total() / 1e9 << "\n";
    if (a.baseline_layers > 0) {
        const auto base = dpar::estimate_flops_token_baseline(a.baseline_layers, cfg.hidden,
                                                              cfg.heads, cfg.vocab_size, a.tokens);
        std::cout << "baseline_forward_total," << base.forward_total() / 1e9 << "\n";
        std::cout << "ratio," << report.forward_total() / base.forward_total() << "\n";
    }
    return 0;
}

int cmd_sweep(const Args& a) {
    auto model = load_dpar_model(a.checkpoint_path);
    auto corpus = dpar::read_token_file(a.corpus_path);
    auto cache = dpar::load_entropy_cache(a.cache_path);
    dpar::require(cache.sequences.size() == corpus.samples.size(),
                  "cache sample count does not match the corpus");
    const auto thresholds = parse_threshold_list(a.thresholds);
    dpar::require(!thresholds.empty(), "no thresholds given");

    auto rows = dpar::threshold_sweep(model, corpus.samples, cache.sequences, thresholds);
    dpar::write_sweep_csv(rows, a.out_path);
    for (const auto& r : rows)
        std::cout << "eth " << r.threshold << " p_avg " << r.p_avg << " ce " << r.ce_per_token
                  << "\n";

    json cfg_json = {{"thresholds", thresholds}};
    dpar::RunManifest m;
    m.command = "sweep-threshold";
    m.config_json = cfg_json.dump();
    m.config_digest = dpar::fnv1a64(m.config_json);
    m.seed = a.seed;
    m.inputs.emplace_back("checkpoint", a.checkpoint_path);
    m.inputs.emplace_back("corpus", a.corpus_path);
    m.inputs.emplace_back("cache", a.cache_path);
    m.outputs.emplace_back("sweep_csv", a.out_path);
    dpar::write_manifest(m, dpar::manifest_path_for(a.out_path));
    return 0;
}

int cmd_verify() {
    const bool f64 = []() {
        const char* v = std::getenv("DPAR_VERIFY_F64");
        return v && std::string(v) == "1";
    }();
    std::vector<dpar::CheckResult> results;
    results.push_back(dpar::check_patchifier_invariants());
    results.push_back(dpar::check_rope_properties());
    results.push_back(dpar::check_kernel_gradients());
    results.push_back(dpar::check_model_gradients());
    results.push_back(dpar::check_causality_leak(f64 ? 20 : 8));
    results.push_back(dpar::check_packed_equivalence(f64 ? 10 : 4));
    results.push_back(dpar::check_flops_monotonicity());

    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.name << " (" << r.detail << ")\n";
        all = all && r.pass;
    }
    return all ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DPAR: entropy-gated dynamic patchification for token-grid generation"};
    app.require_subcommand(1);
    Args a;
    app.add_option("--threads", a.threads, "worker threads (default 1 for determinism)");

    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic token-grid corpus");
    gen->add_option("--spec", a.spec_path, "spec config file (json)");
    gen->add_option("--out", a.out_path, "output token file")->required();
    gen->add_option("--seed", a.seed, "base seed");
    gen->add_option("--count", a.count, "sample count (overrides spec)");

    auto* te = app.add_subcommand("train-entropy", "train the unconditional entropy model");
    te->add_option("--corpus", a.corpus_path)->required();
    te->add_option("--out", a.out_path)->required();
    te->add_option("--config", a.config_path, "entropy model config (json)");
    te->add_option("--layers", a.layers);
    te->add_option("--hidden", a.hidden);
    te->add_option("--heads", a.heads);
    te->add_option("--steps", a.steps);
    te->add_option("--batch", a.batch);
    te->add_option("--lr", a.lr);
    te->add_option("--seed", a.seed);
    te->add_option("--loss-csv", a.loss_csv);

    auto* bc = app.add_subcommand("build-cache", "precompute per-sample entropies");
    bc->add_option("--corpus", a.corpus_path)->required();
    bc->add_option("--model", a.entropy_model_path, "entropy model checkpoint")->required();
    bc->add_option("--out", a.out_path)->required();

    auto* tr = app.add_subcommand("train", "train a DPAR model");
    tr->add_option("--corpus", a.corpus_path)->required();
    tr->add_option("--cache", a.cache_path)->required();
    tr->add_option("--out", a.out_path)->required();
    tr->add_option("--config", a.config_path, "model config (json)");
    tr->add_option("--steps", a.steps);
    tr->add_option("--batch", a.batch);
    tr->add_option("--lr", a.lr);
    tr->add_option("--weight-decay", a.weight_decay);
    tr->add_option("--cfg-drop", a.cfg_drop);
    tr->add_option("--eth", a.eth, "patchifier entropy threshold");
    tr->add_option("--pmax", a.pmax, "max patch length");
    tr->add_option("--seed", a.seed);
    tr->add_option("--checkpoint-every", a.checkpoint_every);
    tr->add_option("--loss-csv", a.loss_csv);
    tr->add_flag("--save-optimizer", a.save_optimizer);

    auto* sa = app.add_subcommand("sample", "generate token grids from a checkpoint");
    sa->add_option("--checkpoint", a.checkpoint_path)->required();
    sa->add_option("--entropy-model", a.entropy_model_path)->required();
    sa->add_option("--out", a.out_path)->required();
    sa->add_option("--count", a.count);
    sa->add_option("--label", a.label, "class label (-1 = random per sample)");
    sa->add_option("--height", a.height);
    sa->add_option("--width", a.width);
    sa->add_option("--seed", a.seed);
    sa->add_option("--temperature", a.temperature);
    sa->add_option("--top-k", a.top_k);
    sa->add_option("--top-p", a.top_p);
    sa->add_option("--cfg-scale", a.cfg_scale);
    sa->add_option("--eth", a.eth, "inference-time entropy threshold override");
    sa->add_option("--pgm-prefix", a.pgm_prefix, "write per-sample boundary overlays");

    auto* pa = app.add_subcommand("patchify", "partition a corpus and report statistics");
    pa->add_option("--corpus", a.corpus_path)->required();
    pa->add_option("--cache", a.cache_path)->required();
    pa->add_option("--eth", a.eth);
    pa->add_option("--pmax", a.pmax);
    pa->add_option("--row-width", a.row_width);
    pa->add_option("--static-len", a.static_len, "use static packing with this length");
    pa->add_flag("--stats", a.stats);
    pa->add_option("--dump", a.dump_path, "write span lines here instead of stdout");
    pa->add_option("--pgm-prefix", a.pgm_prefix);

    auto* fl = app.add_subcommand("flops", "analytic compute report");
    fl->add_option("--config", a.config_path, "model config (json)");
    fl->add_option("--tokens", a.tokens);
    fl->add_option("--pavg", a.pavg);
    fl->add_option("--baseline-layers", a.baseline_layers,
                   "also report a token-level baseline with this many layers");

    auto* sw = app.add_subcommand("sweep-threshold", "inference-time threshold adaptation");
    sw->add_option("--checkpoint", a.checkpoint_path)->required();
    sw->add_option("--corpus", a.corpus_path)->required();
    sw->add_option("--cache", a.cache_path)->required();
    sw->add_option("--thresholds", a.thresholds, "comma-separated E_Th list")->required();
    sw->add_option("--out", a.out_path)->required();

    app.add_subcommand("verify", "run the invariant suite (DPAR_VERIFY_F64=1 for 64-bit)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("gen-corpus")) return cmd_gen_corpus(a);
        if (app.got_subcommand("train-entropy")) return cmd_train_entropy(a);
        if (app.got_subcommand("build-cache")) return cmd_build_cache(a);
        if (app.got_subcommand("train")) return cmd_train(a);
        if (app.got_subcommand("sample")) return cmd_sample(a);
        if (app.got_subcommand("patchify")) return cmd_patchify(a);
        if (app.got_subcommand("flops")) return cmd_flops(a);
        if (app.got_subcommand("sweep-threshold")) return cmd_sweep(a);
        if (app.got_subcommand("verify")) return cmd_verify();
        std::cerr << "unknown subcommand\n";
        return 1;
    } catch (const dpar::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const dpar::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const dpar::ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
