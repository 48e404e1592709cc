#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpar/autodiff.hpp"

namespace dpar {

// Checkpoint: magic "DPCK" | version u16 | config digest u64 | config json
// (u32 length + bytes) | param count u32 | per param: name (u16 length +
// bytes), rank u8, dims u32 each, raw little-endian f32 data | optimizer flag
// u8 | optional optimizer state (step u64, then per param first and second
// moments as f32).

struct CheckpointEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string config_json;
    uint64_t config_digest = 0;
    std::vector<CheckpointEntry> params;
    bool has_optimizer = false;
    int64_t opt_step = 0;
    std::vector<std::vector<float>> opt_m;
    std::vector<std::vector<float>> opt_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Digest over parameter names, shapes and f32 contents, chained onto a seed
// (normally the config digest). Identifies a trained model.
template <typename T>
uint64_t params_digest(const ParamStore<T>& store, uint64_t seed) {
    uint64_t h = seed;
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        h = fnv1a64(p.name, h);
        for (int64_t d : p.value.shape) h = fnv1a64(&d, sizeof(d), h);
        for (const T& v : p.value.data) {
            const float f = static_cast<float>(v);
            h = fnv1a64(&f, sizeof(f), h);
        }
    }
    return h;
}

template <typename T>
void store_to_checkpoint(const ParamStore<T>& store, Checkpoint& ckpt) {
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        CheckpointEntry e;
        e.name = p.name;
        e.shape = p.value.shape;
        e.data.reserve(p.value.data.size());
        for (const T& v : p.value.data) e.data.push_back(static_cast<float>(v));
        ckpt.params.push_back(std::move(e));
    }
}

template <typename T>
void checkpoint_to_store(const Checkpoint& ckpt, ParamStore<T>& store) {
    require(ckpt.params.size() == store.size(), "checkpoint parameter count mismatch");
    for (size_t i = 0; i < store.size(); ++i) {
        auto& p = store.at(i);
        const auto& e = ckpt.params[i];
        require(e.name == p.name, "checkpoint parameter name mismatch: " + e.name);
        require(e.shape == p.value.shape, "checkpoint parameter shape mismatch: " + e.name);
        for (size_t j = 0; j < e.data.size(); ++j) p.value.data[j] = static_cast<T>(e.data[j]);
    }
}

}  // namespace dpar
