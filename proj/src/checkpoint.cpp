#include "dpar/checkpoint.hpp"

#include "dpar/binio.hpp"

namespace dpar {

namespace {
constexpr char kCkptMagic[4] = {'D', 'P', 'C', 'K'};
constexpr uint16_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    auto os = open_output(path);
    write_bytes(os, kCkptMagic, 4);
    write_le<uint16_t>(os, kCkptVersion);
    write_le<uint64_t>(os, ckpt.config_digest);
    write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.config_json.size()));
    write_bytes(os, ckpt.config_json.data(), ckpt.config_json.size());
    write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.params.size()));
    for (const auto& e : ckpt.params) {
        write_le<uint16_t>(os, static_cast<uint16_t>(e.name.size()));
        write_bytes(os, e.name.data(), e.name.size());
        write_le<uint8_t>(os, static_cast<uint8_t>(e.shape.size()));
        for (int64_t d : e.shape) write_le<uint32_t>(os, static_cast<uint32_t>(d));
        for (float v : e.data) write_f32(os, v);
    }
    write_le<uint8_t>(os, ckpt.has_optimizer ? 1 : 0);
    if (ckpt.has_optimizer) {
        require(ckpt.opt_m.size() == ckpt.params.size() &&
                    ckpt.opt_v.size() == ckpt.params.size(),
                "optimizer state size mismatch");
        write_le<uint64_t>(os, static_cast<uint64_t>(ckpt.opt_step));
        for (size_t i = 0; i < ckpt.params.size(); ++i) {
            for (float v : ckpt.opt_m[i]) write_f32(os, v);
            for (float v : ckpt.opt_v[i]) write_f32(os, v);
        }
    }
    if (!os) throw ValidationError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    auto is = open_input(path);
    expect_magic(is, kCkptMagic, "checkpoint");
    const uint16_t version = read_le<uint16_t>(is, "checkpoint version");
    require(version == kCkptVersion, "unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.config_digest = read_le<uint64_t>(is, "config digest");
    const uint32_t json_len = read_le<uint32_t>(is, "config length");
    ckpt.config_json.resize(json_len);
    read_bytes(is, ckpt.config_json.data(), json_len, "config json");
    require(fnv1a64(ckpt.config_json) == ckpt.config_digest,
            "checkpoint config digest mismatch");
    const uint32_t count = read_le<uint32_t>(is, "param count");
    ckpt.params.resize(count);
    for (auto& e : ckpt.params) {
        const uint16_t name_len = read_le<uint16_t>(is, "param name length");
        e.name.resize(name_len);
        read_bytes(is, e.name.data(), name_len, "param name");
        const uint8_t rank = read_le<uint8_t>(is, "param rank");
        int64_t numel = 1;
        e.shape.resize(rank);
        for (auto& d : e.shape) {
            d = read_le<uint32_t>(is, "param dim");
            numel *= d;
        }
        e.data.resize(static_cast<size_t>(numel));
        for (auto& v : e.data) v = read_f32(is, "param data");
    }
    const uint8_t flag = read_le<uint8_t>(is, "optimizer flag");
    if (flag) {
        ckpt.has_optimizer = true;
        ckpt.opt_step = static_cast<int64_t>(read_le<uint64_t>(is, "optimizer step"));
        ckpt.opt_m.resize(count);
        ckpt.opt_v.resize(count);
        for (uint32_t i = 0; i < count; ++i) {
            ckpt.opt_m[i].resize(ckpt.params[i].data.size());
            for (auto& v : ckpt.opt_m[i]) v = read_f32(is, "first moment");
            ckpt.opt_v[i].resize(ckpt.params[i].data.size());
            for (auto& v : ckpt.opt_v[i]) v = read_f32(is, "second moment");
        }
    }
    return ckpt;
}

}  // namespace dpar
