#include "dpar/rope.hpp"

namespace dpar {

std::string to_string(EmbeddingVariant v) {
    switch (v) {
        case EmbeddingVariant::dynamic: return "dynamic";
        case EmbeddingVariant::dynamic_no_redundancy: return "dynamic-no-redundancy";
        case EmbeddingVariant::plain_2d: return "plain-2d";
    }
    return "dynamic";
}

EmbeddingVariant embedding_variant_from_string(const std::string& s) {
    if (s == "dynamic") return EmbeddingVariant::dynamic;
    if (s == "dynamic-no-redundancy") return EmbeddingVariant::dynamic_no_redundancy;
    if (s == "plain-2d") return EmbeddingVariant::plain_2d;
    throw ValidationError("unknown embedding variant: " + s);
}

namespace {

// freq_i = 10000^(-rate*(i-1)/d), i = 1..count
void push_group(std::vector<double>& out, double coord, int count, double rate, int d) {
    for (int i = 1; i <= count; ++i) {
        double freq = std::pow(10000.0, -rate * (i - 1) / d);
        out.push_back(freq * coord);
    }
}

}  // namespace

AngleTable rope2d_angles(int x, int y, int head_dim) {
    require(head_dim > 0 && head_dim % 4 == 0, "2D RoPE needs head_dim divisible by 4");
    AngleTable t;
    t.head_dim = head_dim;
    t.angles.reserve(head_dim / 2);
    push_group(t.angles, x, head_dim / 4, 4.0, head_dim);
    push_group(t.angles, y, head_dim / 4, 4.0, head_dim);
    return t;
}

AngleTable dynamic_rope_angles(const PatchSpanCoord& span, int head_dim, EmbeddingVariant variant) {
    require(span.y_s <= span.y_e, "patch span has y_s > y_e");
    if (variant == EmbeddingVariant::plain_2d) return rope2d_angles(span.x, span.y_s, head_dim);

    require(head_dim > 0 && head_dim % 16 == 0, "Dynamic RoPE needs head_dim divisible by 16");
    AngleTable t;
    t.head_dim = head_dim;
    t.angles.reserve(head_dim / 2);
    push_group(t.angles, span.x, head_dim / 4, 4.0, head_dim);
    if (variant == EmbeddingVariant::dynamic) {
        push_group(t.angles, span.y_s, head_dim / 16, 16.0, head_dim);
        push_group(t.angles, span.y_e, head_dim / 16, 16.0, head_dim);
        push_group(t.angles, span.y_e, head_dim / 16, 16.0, head_dim);
        push_group(t.angles, span.y_s, head_dim / 16, 16.0, head_dim);
    } else {
        push_group(t.angles, span.y_s, head_dim / 8, 8.0, head_dim);
        push_group(t.angles, span.y_e, head_dim / 8, 8.0, head_dim);
    }
    return t;
}

std::vector<double> apply_rotary(const std::vector<double>& v, const AngleTable& table) {
    require(static_cast<int>(v.size()) == table.head_dim, "vector dim does not match angle table");
    std::vector<double> out(v.size());
    for (size_t k = 0; k < table.angles.size(); ++k) {
        double c = std::cos(table.angles[k]);
        double s = std::sin(table.angles[k]);
        double a = v[2 * k], b = v[2 * k + 1];
        out[2 * k] = a * c - b * s;
        out[2 * k + 1] = a * s + b * c;
    }
    return out;
}

}  // namespace dpar
