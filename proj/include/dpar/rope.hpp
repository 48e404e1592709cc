#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dpar/common.hpp"
#include "dpar/tensor.hpp"

namespace dpar {

// One position's rotation schedule: head_dim/2 angles, angle k rotating the
// component pair (2k, 2k+1).
struct AngleTable {
    int head_dim = 0;
    std::vector<double> angles;
};

// Patch span coordinate: grid row x, first-token column y_s, last-token
// column y_e. Patches never cross rows, so a single row index suffices.
struct PatchSpanCoord {
    int x = 0;
    int y_s = 0;
    int y_e = 0;
};

enum class EmbeddingVariant {
    dynamic,                // [P_x, P_ys, P_ye, P_ye, P_ys]
    dynamic_no_redundancy,  // [P_x, P_ys, P_ye]
    plain_2d,               // 2D table at the span's starting coordinate
};

std::string to_string(EmbeddingVariant v);
EmbeddingVariant embedding_variant_from_string(const std::string& s);

// Token-level 2D schedule: d/4 frequencies on the row coordinate followed by
// d/4 on the column coordinate, omega_i = 10000^(-4(i-1)/d).
AngleTable rope2d_angles(int x, int y, int head_dim);

// Patch-level schedule for the chosen variant. The dynamic layout encodes the
// row with the token frequencies and the span columns twice each with
// alpha_i = 10000^(-16(i-1)/d).
AngleTable dynamic_rope_angles(const PatchSpanCoord& span, int head_dim,
                               EmbeddingVariant variant = EmbeddingVariant::dynamic);

// Rotates consecutive component pairs; an isometry.
std::vector<double> apply_rotary(const std::vector<double>& v, const AngleTable& table);

// Precomputed per-position sin/cos rows for query/key rotation inside
// attention. Shared read-only across a forward pass.
template <typename T>
struct RotTable {
    int head_dim = 0;
    int positions = 0;
    std::vector<T> sin;  // positions x head_dim/2
    std::vector<T> cos;

    void add(const AngleTable& t) {
        if (head_dim == 0) head_dim = t.head_dim;
        require(t.head_dim == head_dim, "mixed head dims in rotation table");
        for (double a : t.angles) {
            sin.push_back(static_cast<T>(std::sin(a)));
            cos.push_back(static_cast<T>(std::cos(a)));
        }
        ++positions;
    }
};

template <typename T>
using RotTablePtr = std::shared_ptr<const RotTable<T>>;

// Table over token positions given per-token (row, col) coordinates.
template <typename T>
RotTablePtr<T> token_rot_table(const std::vector<std::pair<int, int>>& coords, int head_dim) {
    auto table = std::make_shared<RotTable<T>>();
    for (const auto& [x, y] : coords) table->add(rope2d_angles(x, y, head_dim));
    return table;
}

// Table over patch-sequence positions given per-position span coordinates.
template <typename T>
RotTablePtr<T> patch_rot_table(const std::vector<PatchSpanCoord>& spans, int head_dim,
                               EmbeddingVariant variant) {
    auto table = std::make_shared<RotTable<T>>();
    for (const auto& s : spans) table->add(dynamic_rope_angles(s, head_dim, variant));
    return table;
}

}  // namespace dpar
