#include "dpar/model.hpp"

namespace dpar {

void PackedBatch::validate() const {
    require(batch >= 1, "packed batch is empty");
    require(static_cast<int>(token_spans.size()) == batch &&
                static_cast<int>(patch_spans.size()) == batch &&
                static_cast<int>(cond_ids.size()) == batch &&
                static_cast<int>(partitions.size()) == batch,
            "per-sample arrays out of sync");

    const int64_t total_tokens = static_cast<int64_t>(ids.size());
    require(coords.size() == ids.size() && targets.size() == ids.size() &&
                copy_map.size() == ids.size() && token_ranges.size() == ids.size(),
            "per-position arrays out of sync");

    int64_t expect_tok = 0, expect_patch = 0, expect_global = 0;
    for (int b = 0; b < batch; ++b) {
        const auto& ts = token_spans[b];
        const auto& ps = patch_spans[b];
        require(ts.first == expect_tok && ts.second >= ts.first,
                "token offsets must be strictly increasing and contiguous");
        require(ps.first == expect_patch && ps.second >= ps.first,
                "patch offsets must be strictly increasing and contiguous");
        const int64_t m = ps.second - ps.first + 1;
        const int64_t seg_start = expect_global;
        const int64_t seg_end = seg_start + m;  // cond + m patches
        // token attention must stay inside the sample block
        for (int32_t i = ts.first; i <= ts.second; ++i) {
            const auto& r = token_ranges[static_cast<size_t>(i)];
            require(r.first >= ts.first && r.second <= ts.second && r.second <= i,
                    "token mask allows cross-sample or acausal attention");
            const int32_t row = copy_map[static_cast<size_t>(i)];
            require(row >= seg_start && row <= seg_end, "copy row outside the sample's segment");
        }
        for (int32_t p = ps.first; p <= ps.second; ++p) {
            const auto& r = cross_ranges[static_cast<size_t>(p)];
            require(r.first >= ts.first && r.second <= ts.second,
                    "cross-attention leaves the sample block");
        }
        for (int64_t row = seg_start; row <= seg_end; ++row) {
            const auto& r = global_ranges[static_cast<size_t>(row)];
            require(r.first == seg_start && r.second <= row,
                    "global mask allows cross-sample or acausal attention");
        }
        expect_tok = ts.second + 1;
        expect_patch = ps.second + 1;
        expect_global = seg_end + 1;
    }
    require(expect_tok == total_tokens, "token spans do not cover the batch");
    require(expect_patch == static_cast<int64_t>(cross_ranges.size()),
            "patch spans do not cover the batch");
    require(expect_global == static_cast<int64_t>(global_order.size()) &&
                global_order.size() == global_coords.size() &&
                global_order.size() == global_ranges.size(),
            "global rows out of sync");
}

PackedBatch pack_batch(const ModelConfig& cfg, std::span<const LabeledSample> samples,
                       std::span<const EntropySequence> entropies,
                       const std::vector<bool>& cfg_drop,
                       const PatchifierConfig* pcfg_override) {
    cfg.validate();
    require(!samples.empty(), "pack_batch needs at least one sample");
    require(samples.size() == entropies.size() && samples.size() == cfg_drop.size(),
            "samples/entropies/drop flags length mismatch");
    const PatchifierConfig& pcfg = pcfg_override ? *pcfg_override : cfg.patchifier;

    PackedBatch b;
    b.batch = static_cast<int>(samples.size());

    // first pass: partitions
    for (size_t s = 0; s < samples.size(); ++s) {
        const int64_t total = samples[s].grid.size();
        require(static_cast<int64_t>(entropies[s].size()) == total,
                "entropy/sample length mismatch");
        require(samples[s].grid.width == pcfg.row_width,
                "grid width must match the patchifier row width");
        b.partitions.push_back(patchify_with_bos(
            std::span<const float>(entropies[s].values.data(), static_cast<size_t>(total - 1)),
            pcfg));
    }

    int32_t tok_off = 0, patch_off = 0, global_off = 0;
    for (size_t s = 0; s < samples.size(); ++s) {
        const auto& sample = samples[s];
        const auto& partition = b.partitions[s];
        auto ext = bos_extend(cfg, sample.grid);
        const int32_t total = static_cast<int32_t>(ext.ids.size());
        const int32_t m = static_cast<int32_t>(partition.num_patches());

        b.ids.insert(b.ids.end(), ext.ids.begin(), ext.ids.end());
        b.coords.insert(b.coords.end(), ext.coords.begin(), ext.coords.end());
        b.targets.insert(b.targets.end(), ext.targets.begin(), ext.targets.end());
        b.token_spans.emplace_back(tok_off, tok_off + total - 1);
        b.patch_spans.emplace_back(patch_off, patch_off + m - 1);
        require(sample.label >= 0 && sample.label < cfg.num_classes, "label out of range");
        b.cond_ids.push_back(cfg_drop[s] ? cfg.null_class_id() : sample.label);

        for (int32_t i = 0; i < total; ++i) b.token_ranges.emplace_back(tok_off, tok_off + i);
        for (const auto& [ps, pe] : partition.spans)
            b.cross_ranges.emplace_back(tok_off + ps, tok_off + pe);

        // global segment [cond, patch_0 .. patch_{m-1}]
        b.global_order.push_back(static_cast<int32_t>(s));  // cond row
        for (int32_t p = 0; p < m; ++p)
            b.global_order.push_back(static_cast<int32_t>(b.batch + patch_off + p));
        auto coords = global_span_coords(partition, cfg.patchifier.row_width);
        require(static_cast<int32_t>(coords.size()) == m + 1, "global coords length mismatch");
        b.global_coords.insert(b.global_coords.end(), coords.begin(), coords.end());
        for (int32_t row = 0; row <= m; ++row)
            b.global_ranges.emplace_back(global_off, global_off + row);

        const auto pos2patch = position_to_patch(partition);
        for (int32_t i = 0; i < total; ++i) b.copy_map.push_back(global_off + pos2patch[i]);

        tok_off += total;
        patch_off += m;
        global_off += m + 1;
    }
    b.validate();
    return b;
}

}  // namespace dpar
