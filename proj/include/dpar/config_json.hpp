#pragma once

#include <json.hpp>

#include "dpar/corpus.hpp"
#include "dpar/entropy.hpp"
#include "dpar/model.hpp"

namespace dpar {

// JSON round trips for every on-disk config. Keys are emitted sorted, so
// dump() is canonical and digestable.

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = {{"height", s.height},           {"width", s.width},
         {"vocab_size", s.vocab_size},   {"num_regions", s.num_regions},
         {"noise_rate", s.noise_rate},   {"num_classes", s.num_classes}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.num_regions = j.value("num_regions", s.num_regions);
    s.noise_rate = j.value("noise_rate", s.noise_rate);
    s.num_classes = j.value("num_classes", s.num_classes);
}

inline void to_json(nlohmann::json& j, const PatchifierConfig& c) {
    j = {{"entropy_threshold", c.entropy_threshold},
         {"max_patch_len", c.max_patch_len},
         {"row_width", c.row_width},
         {"use_entropy_gate", c.use_entropy_gate},
         {"use_max_len", c.use_max_len},
         {"use_row_resets", c.use_row_resets}};
}

inline void from_json(const nlohmann::json& j, PatchifierConfig& c) {
    c.entropy_threshold = j.value("entropy_threshold", c.entropy_threshold);
    c.max_patch_len = j.value("max_patch_len", c.max_patch_len);
    c.row_width = j.value("row_width", c.row_width);
    c.use_entropy_gate = j.value("use_entropy_gate", c.use_entropy_gate);
    c.use_max_len = j.value("use_max_len", c.use_max_len);
    c.use_row_resets = j.value("use_row_resets", c.use_row_resets);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"kind", "dpar"},
         {"encoder_layers", c.encoder_layers},
         {"global_layers", c.global_layers},
         {"decoder_layers", c.decoder_layers},
         {"hidden", c.hidden},
         {"heads", c.heads},
         {"vocab_size", c.vocab_size},
         {"num_classes", c.num_classes},
         {"patchifier", c.patchifier},
         {"embedding_variant", to_string(c.embedding_variant)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.global_layers = j.value("global_layers", c.global_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.num_classes = j.value("num_classes", c.num_classes);
    if (j.contains("patchifier")) j.at("patchifier").get_to(c.patchifier);
    if (j.contains("embedding_variant"))
        c.embedding_variant = embedding_variant_from_string(j.at("embedding_variant"));
}

inline void to_json(nlohmann::json& j, const EntropyModelConfig& c) {
    j = {{"kind", "entropy"},
         {"layers", c.layers},
         {"hidden", c.hidden},
         {"heads", c.heads},
         {"vocab_size", c.vocab_size}};
}

inline void from_json(const nlohmann::json& j, EntropyModelConfig& c) {
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
}

template <typename Config>
std::string canonical_config_json(const Config& c) {
    nlohmann::json j = c;
    return j.dump();
}

template <typename Config>
uint64_t config_digest(const Config& c) {
    return fnv1a64(canonical_config_json(c));
}

}  // namespace dpar
