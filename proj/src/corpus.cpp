#include "dpar/corpus.hpp"

#include <algorithm>

#include "dpar/binio.hpp"
#include "dpar/rng.hpp"

namespace dpar {

void TokenGrid::validate() const {
    require(height >= 1 && width >= 1, "grid dims must be positive");
    require(vocab_size >= 1, "vocab size must be positive");
    require(static_cast<int64_t>(tokens.size()) == size(), "token count != height*width");
    for (int32_t t : tokens) require(t >= 0 && t < vocab_size, "token index out of vocabulary");
}

void SyntheticSpec::validate() const {
    require(height >= 1 && width >= 1, "grid dims must be positive");
    require(vocab_size >= 1, "vocab size must be positive");
    require(num_regions >= 1, "num_regions must be >= 1");
    require(num_regions <= height * width, "num_regions exceeds height*width");
    require(noise_rate >= 0.0 && noise_rate <= 1.0, "noise_rate outside [0,1]");
    require(num_classes >= 1, "num_classes must be >= 1");
}

namespace {

struct Rect {
    int r0, c0, r1, c1;  // half-open [r0,r1) x [c0,c1)
    int area() const { return (r1 - r0) * (c1 - c0); }
};

}  // namespace

SyntheticSample generate_synthetic_detailed(const SyntheticSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, 0x5ca1ab1e));

    // Guillotine split of the grid into num_regions rectangles.
    std::vector<Rect> rects = {{0, 0, spec.height, spec.width}};
    while (static_cast<int>(rects.size()) < spec.num_regions) {
        std::vector<size_t> splittable;
        for (size_t i = 0; i < rects.size(); ++i)
            if (rects[i].area() >= 2) splittable.push_back(i);
        const size_t victim = splittable[rng.below(splittable.size())];
        const Rect r = rects[victim];
        const int rh = r.r1 - r.r0, rw = r.c1 - r.c0;
        bool split_rows;
        if (rh > 1 && rw > 1)
            split_rows = rng.below(2) == 0;
        else
            split_rows = rh > 1;
        Rect a = r, b = r;
        if (split_rows) {
            const int cut = r.r0 + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(rh - 1)));
            a.r1 = cut;
            b.r0 = cut;
        } else {
            const int cut = r.c0 + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(rw - 1)));
            a.c1 = cut;
            b.c0 = cut;
        }
        rects[victim] = a;
        rects.push_back(b);
    }

    SyntheticSample out;
    out.region_tokens.resize(rects.size());
    for (auto& t : out.region_tokens)
        t = static_cast<int32_t>(rng.below(static_cast<uint64_t>(spec.vocab_size)));

    TokenGrid grid;
    grid.height = spec.height;
    grid.width = spec.width;
    grid.vocab_size = spec.vocab_size;
    grid.tokens.assign(static_cast<size_t>(grid.size()), 0);
    out.region_ids.assign(grid.tokens.size(), 0);
    for (size_t ri = 0; ri < rects.size(); ++ri) {
        const Rect& r = rects[ri];
        for (int row = r.r0; row < r.r1; ++row)
            for (int col = r.c0; col < r.c1; ++col) {
                const size_t idx = static_cast<size_t>(row) * spec.width + col;
                out.region_ids[idx] = static_cast<int32_t>(ri);
                grid.tokens[idx] = out.region_tokens[ri];
            }
    }

    // Label from the sorted region-token multiset, so classes correlate with
    // content.
    std::vector<int32_t> sorted = out.region_tokens;
    std::sort(sorted.begin(), sorted.end());
    const uint64_t h = fnv1a64(sorted.data(), sorted.size() * sizeof(int32_t));
    out.sample.label = static_cast<int>(h % static_cast<uint64_t>(spec.num_classes));

    for (auto& t : grid.tokens) {
        if (rng.bernoulli(spec.noise_rate))
            t = static_cast<int32_t>(rng.below(static_cast<uint64_t>(spec.vocab_size)));
    }
    out.sample.grid = std::move(grid);
    return out;
}

LabeledSample generate_synthetic_grid(const SyntheticSpec& spec, uint64_t seed) {
    return generate_synthetic_detailed(spec, seed).sample;
}

RasterSequence raster_flatten(const TokenGrid& grid) {
    grid.validate();
    RasterSequence seq;
    seq.tokens = grid.tokens;
    seq.coords.reserve(seq.tokens.size());
    for (int64_t i = 0; i < grid.size(); ++i)
        seq.coords.emplace_back(static_cast<int>(i / grid.width),
                                static_cast<int>(i % grid.width));
    return seq;
}

namespace {
constexpr char kTokenMagic[4] = {'D', 'P', 'T', 'K'};
constexpr uint16_t kTokenVersion = 1;
}  // namespace

void write_token_file(const std::vector<LabeledSample>& samples, int num_classes,
                      const std::string& path) {
    int height = 0, width = 0, vocab = 0;
    if (!samples.empty()) {
        height = samples[0].grid.height;
        width = samples[0].grid.width;
        vocab = samples[0].grid.vocab_size;
    }
    require(vocab <= 0xFFFF + 1, "vocab too large for 16-bit token storage");
    for (const auto& s : samples) {
        s.grid.validate();
        require(s.grid.height == height && s.grid.width == width && s.grid.vocab_size == vocab,
                "samples must share dims and vocab");
        require(s.label >= 0 && s.label < num_classes, "label out of range");
    }
    auto os = open_output(path);
    write_bytes(os, kTokenMagic, 4);
    write_le<uint16_t>(os, kTokenVersion);
    write_le<uint16_t>(os, static_cast<uint16_t>(height));
    write_le<uint16_t>(os, static_cast<uint16_t>(width));
    write_le<uint32_t>(os, static_cast<uint32_t>(vocab));
    write_le<uint16_t>(os, static_cast<uint16_t>(num_classes));
    write_le<uint32_t>(os, static_cast<uint32_t>(samples.size()));
    for (const auto& s : samples) {
        write_le<uint16_t>(os, static_cast<uint16_t>(s.label));
        for (int32_t t : s.grid.tokens) write_le<uint16_t>(os, static_cast<uint16_t>(t));
    }
    if (!os) throw ValidationError("write failed: " + path);
}

TokenFile read_token_file(const std::string& path) {
    auto is = open_input(path);
    expect_magic(is, kTokenMagic, "token");
    const uint16_t version = read_le<uint16_t>(is, "token version");
    require(version == kTokenVersion, "unsupported token file version");
    const int height = read_le<uint16_t>(is, "height");
    const int width = read_le<uint16_t>(is, "width");
    const int vocab = static_cast<int>(read_le<uint32_t>(is, "vocab"));
    const int num_classes = read_le<uint16_t>(is, "num_classes");
    const uint32_t count = read_le<uint32_t>(is, "count");

    TokenFile f;
    f.num_classes = num_classes;
    f.samples.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        LabeledSample s;
        s.label = read_le<uint16_t>(is, "label");
        require(s.label < num_classes || num_classes == 0, "label out of range on read");
        s.grid.height = height;
        s.grid.width = width;
        s.grid.vocab_size = vocab;
        s.grid.tokens.resize(static_cast<size_t>(height) * width);
        for (auto& t : s.grid.tokens) {
            t = read_le<uint16_t>(is, "token");
            require(t < vocab, "token >= vocab_size on read");
        }
        f.samples.push_back(std::move(s));
    }
    return f;
}

}  // namespace dpar
