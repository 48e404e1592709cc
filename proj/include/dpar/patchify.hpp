#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpar/entropy_sequence.hpp"
#include "dpar/rope.hpp"

namespace dpar {

struct PatchifierConfig {
    double entropy_threshold = 7.8;  // E_Th, nats
    int max_patch_len = 4;           // P_max
    int row_width = 16;
    // Ablation switches. With the entropy gate off, patchification degenerates
    // to the static packing (no forced singleton first patch).
    bool use_entropy_gate = true;
    bool use_max_len = true;
    bool use_row_resets = true;

    void validate() const {
        require(max_patch_len >= 1, "max_patch_len must be >= 1");
        require(row_width >= 1, "row_width must be >= 1");
    }
};

// Ordered, contiguous, non-overlapping inclusive spans of token indices.
struct PatchPartition {
    std::vector<std::pair<int32_t, int32_t>> spans;
    int64_t covered_len = 0;

    int64_t num_patches() const { return static_cast<int64_t>(spans.size()); }

    // Checks the partition invariants. index_offset shifts positions before
    // the row test; BOS-extended partitions pass -1 so the row geometry of the
    // underlying tokens is used.
    void validate(const PatchifierConfig& cfg, int index_offset = 0) const;
};

struct PartitionStats {
    int64_t num_patches = 0;          // total patches across samples
    double avg_patch_len = 0.0;       // mean over samples of T/M
    std::vector<int64_t> length_histogram;  // index = span length
    double generation_steps = 0.0;    // mean M
};

enum class Decision { extend, new_patch };

// Single-step gate used both by patchify and by incremental inference:
// extend iff e_t <= E_Th and the open patch is shorter than P_max and t does
// not start a new grid row. Disabled switches make their condition pass.
Decision incremental_decision(double e_t, int current_patch_len, int64_t t,
                              const PatchifierConfig& cfg);

// Entropy-gated partition of a token sequence. Patch 0 is the forced
// singleton first token and the second token always opens patch 1; later
// tokens join while the gate allows. With the entropy gate disabled this is
// the static packing with fixed length P_max.
PatchPartition patchify(const EntropySequence& entropies, const PatchifierConfig& cfg);

// Partition of the BOS-extended prefix [BOS, x_0 .. x_{k-1}]. Position 0 is
// the forced BOS singleton; position j >= 1 carries token x_{j-1}, so gating
// uses that token's entropy and row geometry. This is the partition the model
// trains and generates against.
PatchPartition patchify_with_bos(std::span<const float> token_entropies,
                                 const PatchifierConfig& cfg);

// Consecutive fixed-length spans, last span of a row possibly shorter.
PatchPartition static_patchify(int64_t total_len, int fixed_len, const PatchifierConfig& cfg);

PartitionStats partition_stats(const std::vector<PatchPartition>& partitions);

// Patch index of every covered position.
std::vector<int32_t> position_to_patch(const PatchPartition& partition);

// Grid-span coordinates for spans of real tokens; token index = position +
// index_offset must land on a single row.
std::vector<PatchSpanCoord> span_grid_coords(const PatchPartition& partition, int row_width,
                                             int index_offset = 0, size_t first_span = 0);

// Entropy heatmap with patch boundaries outlined, as a binary PGM.
void write_patch_overlay_pgm(const EntropySequence& entropies, const PatchPartition& partition,
                             int height, int width, const std::string& path, int cell_px = 16);

}  // namespace dpar
