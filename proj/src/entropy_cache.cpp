#include "dpar/binio.hpp"
#include "dpar/entropy.hpp"

namespace dpar {

namespace {
constexpr char kCacheMagic[4] = {'D', 'P', 'E', 'N'};
constexpr uint16_t kCacheVersion = 1;
}  // namespace

void write_entropy_cache(const std::vector<EntropySequence>& sequences, uint64_t model_digest,
                         const std::string& path) {
    const size_t length = sequences.empty() ? 0 : sequences[0].size();
    for (const auto& s : sequences) {
        s.validate();
        require(s.size() == length, "cache sequences must share length");
    }
    auto os = open_output(path);
    write_bytes(os, kCacheMagic, 4);
    write_le<uint16_t>(os, kCacheVersion);
    write_le<uint64_t>(os, model_digest);
    write_le<uint32_t>(os, static_cast<uint32_t>(sequences.size()));
    write_le<uint32_t>(os, static_cast<uint32_t>(length));
    for (const auto& s : sequences)
        for (float v : s.values) write_f32(os, v);
    if (!os) throw ValidationError("write failed: " + path);
}

EntropyCache load_entropy_cache(const std::string& path,
                                std::optional<uint64_t> expected_digest) {
    auto is = open_input(path);
    expect_magic(is, kCacheMagic, "entropy cache");
    const uint16_t version = read_le<uint16_t>(is, "cache version");
    require(version == kCacheVersion, "unsupported entropy cache version");
    EntropyCache cache;
    cache.model_digest = read_le<uint64_t>(is, "model digest");
    if (expected_digest && *expected_digest != cache.model_digest)
        throw ValidationError("entropy cache model digest mismatch");
    const uint32_t count = read_le<uint32_t>(is, "count");
    const uint32_t length = read_le<uint32_t>(is, "length");
    cache.sequences.resize(count);
    for (auto& s : cache.sequences) {
        s.values.resize(length);
        for (auto& v : s.values) v = read_f32(is, "entropy value");
        s.validate();
    }
    return cache;
}

}  // namespace dpar
