#include "dpar/patchify.hpp"

#include <algorithm>
#include <fstream>

#include "dpar/binio.hpp"

namespace dpar {

namespace {

int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

void PatchPartition::validate(const PatchifierConfig& cfg, int index_offset) const {
    require(covered_len >= 1, "partition covers nothing");
    require(!spans.empty(), "partition has no spans");
    require(num_patches() <= covered_len, "more patches than tokens");
    int64_t expect = 0;
    for (const auto& [s, e] : spans) {
        require(s == expect, "spans must be contiguous and non-overlapping");
        require(e >= s, "span end before start");
        if (cfg.use_max_len)
            require(e - s + 1 <= cfg.max_patch_len, "span exceeds max patch length");
        if (cfg.use_row_resets)
            require(floor_div(s + index_offset, cfg.row_width) ==
                        floor_div(e + index_offset, cfg.row_width),
                    "span crosses a row boundary");
        expect = e + 1;
    }
    require(expect == covered_len, "spans do not cover the sequence");
}

Decision incremental_decision(double e_t, int current_patch_len, int64_t t,
                              const PatchifierConfig& cfg) {
    const bool entropy_ok = !cfg.use_entropy_gate || e_t <= cfg.entropy_threshold;
    const bool len_ok = !cfg.use_max_len || current_patch_len < cfg.max_patch_len;
    const bool row_ok = !cfg.use_row_resets || (t % cfg.row_width != 0);
    return (entropy_ok && len_ok && row_ok) ? Decision::extend : Decision::new_patch;
}

PatchPartition patchify(const EntropySequence& entropies, const PatchifierConfig& cfg) {
    cfg.validate();
    entropies.validate();
    const int64_t total = static_cast<int64_t>(entropies.size());

    if (!cfg.use_entropy_gate)
        return static_patchify(total, cfg.use_max_len ? cfg.max_patch_len : static_cast<int>(total),
                               cfg);

    PatchPartition part;
    part.covered_len = total;
    part.spans.emplace_back(0, 0);
    if (total == 1) return part;

    int32_t cur_start = 1;
    int cur_len = 1;
    for (int64_t i = 2; i < total; ++i) {
        if (incremental_decision(entropies.values[i], cur_len, i, cfg) == Decision::extend) {
            ++cur_len;
        } else {
            part.spans.emplace_back(cur_start, static_cast<int32_t>(i - 1));
            cur_start = static_cast<int32_t>(i);
            cur_len = 1;
        }
    }
    part.spans.emplace_back(cur_start, static_cast<int32_t>(total - 1));
    return part;
}

PatchPartition patchify_with_bos(std::span<const float> token_entropies,
                                 const PatchifierConfig& cfg) {
    cfg.validate();
    const int64_t k = static_cast<int64_t>(token_entropies.size());
    PatchPartition part;
    part.covered_len = k + 1;
    part.spans.emplace_back(0, 0);  // BOS
    if (k == 0) return part;

    int32_t cur_start = 1;
    int cur_len = 1;
    for (int64_t j = 2; j <= k; ++j) {
        // position j holds token j-1
        const int64_t t = j - 1;
        if (incremental_decision(token_entropies[t], cur_len, t, cfg) == Decision::extend) {
            ++cur_len;
        } else {
            part.spans.emplace_back(cur_start, static_cast<int32_t>(j - 1));
            cur_start = static_cast<int32_t>(j);
            cur_len = 1;
        }
    }
    part.spans.emplace_back(cur_start, static_cast<int32_t>(k));
    return part;
}

PatchPartition static_patchify(int64_t total_len, int fixed_len, const PatchifierConfig& cfg) {
    require(total_len >= 1, "static_patchify needs at least one token");
    require(fixed_len >= 1, "fixed_len must be >= 1");
    PatchPartition part;
    part.covered_len = total_len;
    int64_t pos = 0;
    while (pos < total_len) {
        int64_t end = pos + fixed_len - 1;
        if (cfg.use_row_resets) {
            const int64_t row_end = (pos / cfg.row_width) * cfg.row_width + cfg.row_width - 1;
            end = std::min(end, row_end);
        }
        end = std::min(end, total_len - 1);
        part.spans.emplace_back(static_cast<int32_t>(pos), static_cast<int32_t>(end));
        pos = end + 1;
    }
    return part;
}

PartitionStats partition_stats(const std::vector<PatchPartition>& partitions) {
    require(!partitions.empty(), "partition_stats needs at least one partition");
    PartitionStats stats;
    double ratio_sum = 0, m_sum = 0;
    for (const auto& p : partitions) {
        stats.num_patches += p.num_patches();
        ratio_sum += static_cast<double>(p.covered_len) / static_cast<double>(p.num_patches());
        m_sum += static_cast<double>(p.num_patches());
        for (const auto& [s, e] : p.spans) {
            const size_t len = static_cast<size_t>(e - s + 1);
            if (stats.length_histogram.size() <= len) stats.length_histogram.resize(len + 1, 0);
            ++stats.length_histogram[len];
        }
    }
    stats.avg_patch_len = ratio_sum / static_cast<double>(partitions.size());
    stats.generation_steps = m_sum / static_cast<double>(partitions.size());
    return stats;
}

std::vector<int32_t> position_to_patch(const PatchPartition& partition) {
    std::vector<int32_t> map(static_cast<size_t>(partition.covered_len), -1);
    for (size_t m = 0; m < partition.spans.size(); ++m) {
        const auto& [s, e] = partition.spans[m];
        for (int32_t i = s; i <= e; ++i) map[static_cast<size_t>(i)] = static_cast<int32_t>(m);
    }
    return map;
}

std::vector<PatchSpanCoord> span_grid_coords(const PatchPartition& partition, int row_width,
                                             int index_offset, size_t first_span) {
    std::vector<PatchSpanCoord> coords;
    coords.reserve(partition.spans.size() - first_span);
    for (size_t m = first_span; m < partition.spans.size(); ++m) {
        const auto& [s, e] = partition.spans[m];
        const int64_t ts = s + index_offset;
        const int64_t te = e + index_offset;
        PatchSpanCoord c;
        c.x = static_cast<int>(ts / row_width);
        c.y_s = static_cast<int>(ts % row_width);
        c.y_e = static_cast<int>(te % row_width);
        require(te / row_width == c.x, "patch crosses a grid row");
        coords.push_back(c);
    }
    return coords;
}

void write_patch_overlay_pgm(const EntropySequence& entropies, const PatchPartition& partition,
                             int height, int width, const std::string& path, int cell_px) {
    require(static_cast<int64_t>(entropies.size()) == static_cast<int64_t>(height) * width,
            "entropy length != height*width");
    require(partition.covered_len == static_cast<int64_t>(entropies.size()),
            "partition does not cover the grid");
    float max_e = 1e-6f;
    for (size_t i = 1; i < entropies.size(); ++i) max_e = std::max(max_e, entropies.values[i]);

    const int W = width * cell_px, H = height * cell_px;
    std::vector<unsigned char> img(static_cast<size_t>(W) * H, 255);
    for (int64_t i = 0; i < partition.covered_len; ++i) {
        const int r = static_cast<int>(i) / width, c = static_cast<int>(i) % width;
        const float e = entropies.values[static_cast<size_t>(i)];
        const float norm = std::isfinite(e) ? e / max_e : 1.0f;
        const auto gray = static_cast<unsigned char>(32 + 223 * std::clamp(norm, 0.0f, 1.0f));
        for (int y = r * cell_px; y < (r + 1) * cell_px; ++y)
            for (int x = c * cell_px; x < (c + 1) * cell_px; ++x)
                img[static_cast<size_t>(y) * W + x] = gray;
    }
    // black outline per patch; spans that cross rows (ablation modes) are
    // outlined one row segment at a time
    for (const auto& [s, e] : partition.spans) {
        for (int32_t seg = s; seg <= e;) {
            const int r = seg / width;
            const int32_t seg_end = std::min<int32_t>(e, (r + 1) * width - 1);
            const int c0 = seg % width, c1 = seg_end % width;
            const int x0 = c0 * cell_px, x1 = (c1 + 1) * cell_px - 1;
            const int y0 = r * cell_px, y1 = (r + 1) * cell_px - 1;
            for (int x = x0; x <= x1; ++x) {
                img[static_cast<size_t>(y0) * W + x] = 0;
                img[static_cast<size_t>(y1) * W + x] = 0;
            }
            for (int y = y0; y <= y1; ++y) {
                img[static_cast<size_t>(y) * W + x0] = 0;
                img[static_cast<size_t>(y) * W + x1] = 0;
            }
            seg = seg_end + 1;
        }
    }

    auto os = open_output(path);
    os << "P5\n" << W << " " << H << "\n255\n";
    write_bytes(os, img.data(), img.size());
    if (!os) throw ValidationError("write failed: " + path);
}

}  // namespace dpar
