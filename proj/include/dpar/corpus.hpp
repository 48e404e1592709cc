#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpar/common.hpp"

namespace dpar {

// 2D grid of discrete vocabulary indices.
struct TokenGrid {
    int height = 0;
    int width = 0;
    int vocab_size = 0;
    std::vector<int32_t> tokens;  // row-major, length height*width

    int64_t size() const { return static_cast<int64_t>(height) * width; }
    void validate() const;
};

// Raster-order view: index i maps to (i / width, i % width).
struct RasterSequence {
    std::vector<int32_t> tokens;
    std::vector<std::pair<int, int>> coords;  // (row, col) per token
};

struct SyntheticSpec {
    int height = 8;
    int width = 8;
    int vocab_size = 32;
    int num_regions = 4;
    double noise_rate = 0.0;
    int num_classes = 4;

    void validate() const;
};

struct LabeledSample {
    TokenGrid grid;
    int label = 0;
};

// Generation detail kept for analysis: which region each cell belongs to and
// each region's fill token (pre-noise).
struct SyntheticSample {
    LabeledSample sample;
    std::vector<int32_t> region_ids;
    std::vector<int32_t> region_tokens;
};

SyntheticSample generate_synthetic_detailed(const SyntheticSpec& spec, uint64_t seed);
LabeledSample generate_synthetic_grid(const SyntheticSpec& spec, uint64_t seed);

RasterSequence raster_flatten(const TokenGrid& grid);

// Token file: magic "DPTK" | version u16 | height u16 | width u16 | vocab u32
// | num_classes u16 | count u32 | per sample: label u16 then height*width
// tokens as u16; all little-endian.
struct TokenFile {
    int num_classes = 0;
    std::vector<LabeledSample> samples;
};

void write_token_file(const std::vector<LabeledSample>& samples, int num_classes,
                      const std::string& path);
TokenFile read_token_file(const std::string& path);

}  // namespace dpar
