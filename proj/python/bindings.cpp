// Python bindings for the main operations: corpus generation, patchification,
// rotary tables, entropy maps, FLOPs accounting, training and sampling.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dpar/checkpoint.hpp"
#include "dpar/config_json.hpp"
#include "dpar/flops.hpp"
#include "dpar/runtime.hpp"
#include "dpar/verify.hpp"

namespace py = pybind11;
using namespace dpar;

namespace {

EntropySequence make_entropy_sequence(const std::vector<float>& values) {
    EntropySequence e;
    e.values = values;
    e.validate();
    return e;
}

void register_exceptions(py::module_& m) {
    py::register_exception<ValidationError>(m, "ValidationError");
    py::register_exception<NumericError>(m, "NumericFailure");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Dynamic entropy-gated patchification for token-grid generation";
    register_exceptions(m);

    // ---- corpus ----
    py::class_<TokenGrid>(m, "TokenGrid")
        .def(py::init<>())
        .def_readwrite("height", &TokenGrid::height)
        .def_readwrite("width", &TokenGrid::width)
        .def_readwrite("vocab_size", &TokenGrid::vocab_size)
        .def_readwrite("tokens", &TokenGrid::tokens)
        .def("validate", &TokenGrid::validate);

    py::class_<RasterSequence>(m, "RasterSequence")
        .def_readonly("tokens", &RasterSequence::tokens)
        .def_readonly("coords", &RasterSequence::coords);

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("height", &SyntheticSpec::height)
        .def_readwrite("width", &SyntheticSpec::width)
        .def_readwrite("vocab_size", &SyntheticSpec::vocab_size)
        .def_readwrite("num_regions", &SyntheticSpec::num_regions)
        .def_readwrite("noise_rate", &SyntheticSpec::noise_rate)
        .def_readwrite("num_classes", &SyntheticSpec::num_classes);

    py::class_<LabeledSample>(m, "LabeledSample")
        .def_readwrite("grid", &LabeledSample::grid)
        .def_readwrite("label", &LabeledSample::label);

    py::class_<SyntheticSample>(m, "SyntheticSample")
        .def_readonly("sample", &SyntheticSample::sample)
        .def_readonly("region_ids", &SyntheticSample::region_ids)
        .def_readonly("region_tokens", &SyntheticSample::region_tokens);

    m.def("generate_synthetic_grid", &generate_synthetic_grid, py::arg("spec"), py::arg("seed"));
    m.def("generate_synthetic_detailed", &generate_synthetic_detailed, py::arg("spec"),
          py::arg("seed"));
    m.def("raster_flatten", &raster_flatten, py::arg("grid"));
    m.def(
        "write_token_file",
        [](const std::vector<LabeledSample>& samples, int num_classes, const std::string& path) {
            write_token_file(samples, num_classes, path);
        },
        py::arg("samples"), py::arg("num_classes"), py::arg("path"));
    m.def(
        "read_token_file",
        [](const std::string& path) {
            auto f = read_token_file(path);
            return py::make_tuple(f.samples, f.num_classes);
        },
        py::arg("path"));

    // ---- patchifier ----
    py::class_<PatchifierConfig>(m, "PatchifierConfig")
        .def(py::init<>())
        .def_readwrite("entropy_threshold", &PatchifierConfig::entropy_threshold)
        .def_readwrite("max_patch_len", &PatchifierConfig::max_patch_len)
        .def_readwrite("row_width", &PatchifierConfig::row_width)
        .def_readwrite("use_entropy_gate", &PatchifierConfig::use_entropy_gate)
        .def_readwrite("use_max_len", &PatchifierConfig::use_max_len)
        .def_readwrite("use_row_resets", &PatchifierConfig::use_row_resets);

    py::class_<PatchPartition>(m, "PatchPartition")
        .def_readonly("spans", &PatchPartition::spans)
        .def_readonly("covered_len", &PatchPartition::covered_len)
        .def_property_readonly("num_patches", &PatchPartition::num_patches)
        .def("validate", &PatchPartition::validate, py::arg("cfg"), py::arg("index_offset") = 0);

    py::class_<PartitionStats>(m, "PartitionStats")
        .def_readonly("num_patches", &PartitionStats::num_patches)
        .def_readonly("avg_patch_len", &PartitionStats::avg_patch_len)
        .def_readonly("length_histogram", &PartitionStats::length_histogram)
        .def_readonly("generation_steps", &PartitionStats::generation_steps);

    py::enum_<Decision>(m, "Decision")
        .value("extend", Decision::extend)
        .value("new_patch", Decision::new_patch);

    m.def(
        "patchify",
        [](const std::vector<float>& entropies, const PatchifierConfig& cfg) {
            return patchify(make_entropy_sequence(entropies), cfg);
        },
        py::arg("entropies"), py::arg("cfg"));
    m.def("incremental_decision", &incremental_decision, py::arg("entropy"),
          py::arg("current_patch_len"), py::arg("t"), py::arg("cfg"));
    m.def("static_patchify", &static_patchify, py::arg("total_len"), py::arg("fixed_len"),
          py::arg("cfg"));
    m.def("partition_stats", &partition_stats, py::arg("partitions"));

    // ---- positional ----
    py::class_<AngleTable>(m, "AngleTable")
        .def_readonly("head_dim", &AngleTable::head_dim)
        .def_readonly("angles", &AngleTable::angles);

    py::class_<PatchSpanCoord>(m, "PatchSpanCoord")
        .def(py::init([](int x, int y_s, int y_e) {
                 return PatchSpanCoord{x, y_s, y_e};
             }),
             py::arg("x"), py::arg("y_s"), py::arg("y_e"))
        .def_readwrite("x", &PatchSpanCoord::x)
        .def_readwrite("y_s", &PatchSpanCoord::y_s)
        .def_readwrite("y_e", &PatchSpanCoord::y_e);

    py::enum_<EmbeddingVariant>(m, "EmbeddingVariant")
        .value("dynamic", EmbeddingVariant::dynamic)
        .value("dynamic_no_redundancy", EmbeddingVariant::dynamic_no_redundancy)
        .value("plain_2d", EmbeddingVariant::plain_2d);

    m.def("rope2d_angles", &rope2d_angles, py::arg("x"), py::arg("y"), py::arg("head_dim"));
    m.def("dynamic_rope_angles", &dynamic_rope_angles, py::arg("span"), py::arg("head_dim"),
          py::arg("variant") = EmbeddingVariant::dynamic);
    m.def("apply_rotary", &apply_rotary, py::arg("v"), py::arg("table"));

    // ---- flops ----
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("encoder_layers", &ModelConfig::encoder_layers)
        .def_readwrite("global_layers", &ModelConfig::global_layers)
        .def_readwrite("decoder_layers", &ModelConfig::decoder_layers)
        .def_readwrite("hidden", &ModelConfig::hidden)
        .def_readwrite("heads", &ModelConfig::heads)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("num_classes", &ModelConfig::num_classes)
        .def_readwrite("patchifier", &ModelConfig::patchifier)
        .def_readwrite("embedding_variant", &ModelConfig::embedding_variant);

    py::class_<FlopsReport>(m, "FlopsReport")
        .def_readonly("encoder", &FlopsReport::encoder)
        .def_readonly("global_stage", &FlopsReport::global)
        .def_readonly("decoder", &FlopsReport::decoder)
        .def_readonly("head", &FlopsReport::head)
        .def_readonly("training_multiplier", &FlopsReport::training_multiplier)
        .def_property_readonly("forward_total", &FlopsReport::forward_total)
        .def_property_readonly("training_total", &FlopsReport::training_total);

    m.def("estimate_flops", &estimate_flops, py::arg("config"), py::arg("tokens"),
          py::arg("avg_patch_len"));
    m.def("estimate_flops_token_baseline", &estimate_flops_token_baseline, py::arg("layers"),
          py::arg("hidden"), py::arg("heads"), py::arg("vocab"), py::arg("tokens"));

    // ---- kernels exposed for oracle-style checks ----
    m.def(
        "masked_attention_causal",
        [](const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& k,
           const std::vector<std::vector<double>>& v, int heads) {
            const int64_t L = static_cast<int64_t>(q.size());
            const int64_t d = L ? static_cast<int64_t>(q[0].size()) : 0;
            auto pack = [&](const std::vector<std::vector<double>>& rows) {
                Tensor<double> t({L, d});
                for (int64_t i = 0; i < L; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        t.data[static_cast<size_t>(i * d + j)] =
                            rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
                return t;
            };
            auto out = masked_attention(pack(q), pack(k), pack(v), AttentionMask::causal(), heads);
            std::vector<std::vector<double>> res(static_cast<size_t>(L));
            for (int64_t i = 0; i < L; ++i)
                res[static_cast<size_t>(i)] =
                    std::vector<double>(out.ptr() + i * d, out.ptr() + (i + 1) * d);
            return res;
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 1);

    m.def(
        "cfg_combine",
        [](const std::vector<double>& cond, const std::vector<double>& uncond, double scale) {
            Tensor<double> c({static_cast<int64_t>(cond.size())}, std::vector<double>(cond));
            Tensor<double> u({static_cast<int64_t>(uncond.size())}, std::vector<double>(uncond));
            auto out = cfg_combine(c, u, scale);
            return out.data;
        },
        py::arg("cond"), py::arg("uncond"), py::arg("scale"));

    // ---- entropy ----
    m.def(
        "load_entropy_cache",
        [](const std::string& path) {
            auto cache = load_entropy_cache(path);
            std::vector<std::vector<float>> out;
            for (auto& s : cache.sequences) out.push_back(std::move(s.values));
            return py::make_tuple(out, cache.model_digest);
        },
        py::arg("path"));

    // ---- pipeline (float precision, mirrors the CLI) ----
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("cfg_drop", &TrainConfig::cfg_drop)
        .def_readwrite("seed", &TrainConfig::seed);

    py::class_<SamplingConfig>(m, "SamplingConfig")
        .def(py::init<>())
        .def_readwrite("top_k", &SamplingConfig::top_k)
        .def_readwrite("top_p", &SamplingConfig::top_p)
        .def_readwrite("temperature", &SamplingConfig::temperature)
        .def_readwrite("cfg_scale", &SamplingConfig::cfg_scale)
        .def_readwrite("entropy_threshold", &SamplingConfig::entropy_threshold);

    py::class_<EntropyModelConfig>(m, "EntropyModelConfig")
        .def(py::init<>())
        .def_readwrite("layers", &EntropyModelConfig::layers)
        .def_readwrite("hidden", &EntropyModelConfig::hidden)
        .def_readwrite("heads", &EntropyModelConfig::heads)
        .def_readwrite("vocab_size", &EntropyModelConfig::vocab_size);

    py::class_<EntropyModel<float>>(m, "EntropyModel")
        .def_static("init", &EntropyModel<float>::init, py::arg("config"), py::arg("seed"))
        .def_readonly("config", &EntropyModel<float>::config);

    py::class_<DparModel<float>>(m, "DparModel")
        .def_static("init", &DparModel<float>::init, py::arg("config"), py::arg("seed"))
        .def_readonly("config", &DparModel<float>::config);

    m.def(
        "entropy_map",
        [](const EntropyModel<float>& model, const TokenGrid& grid) {
            return entropy_map(model, raster_flatten(grid)).values;
        },
        py::arg("model"), py::arg("grid"));

    m.def(
        "train_entropy_model",
        [](EntropyModel<float>& model, const std::vector<LabeledSample>& samples,
           const TrainConfig& cfg) {
            return train_entropy_model(model, samples, cfg).final_loss;
        },
        py::arg("model"), py::arg("samples"), py::arg("config"));

    m.def(
        "train_dpar",
        [](DparModel<float>& model, const std::vector<LabeledSample>& samples,
           const std::vector<std::vector<float>>& entropies, const TrainConfig& cfg) {
            std::vector<EntropySequence> seqs;
            seqs.reserve(entropies.size());
            for (const auto& e : entropies) seqs.push_back(make_entropy_sequence(e));
            return train_dpar(model, samples, seqs, cfg).final_loss;
        },
        py::arg("model"), py::arg("samples"), py::arg("entropies"), py::arg("config"));

    m.def(
        "sample_grid",
        [](const DparModel<float>& model, const EntropyModel<float>& emodel, int label,
           int height, int width, uint64_t seed, const SamplingConfig& cfg) {
            Sampler<float> sampler(model, emodel, cfg);
            Rng rng(seed);
            auto res = sampler.generate(label, height, width, rng);
            return py::make_tuple(res.grid, res.partition, res.global_calls);
        },
        py::arg("model"), py::arg("entropy_model"), py::arg("label"), py::arg("height"),
        py::arg("width"), py::arg("seed"), py::arg("config") = SamplingConfig{});

    m.def(
        "teacher_forced_eval",
        [](const DparModel<float>& model, const std::vector<LabeledSample>& samples,
           const std::vector<std::vector<float>>& entropies) {
            std::vector<EntropySequence> seqs;
            for (const auto& e : entropies) seqs.push_back(make_entropy_sequence(e));
            auto r = evaluate_teacher_forced(model, samples, seqs);
            return py::make_tuple(r.ce_per_token, r.accuracy);
        },
        py::arg("model"), py::arg("samples"), py::arg("entropies"));

    m.attr("__version__") = kVersion;
}
