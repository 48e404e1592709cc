#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpar/common.hpp"
#include "dpar/rope.hpp"
#include "dpar/tensor.hpp"

namespace dpar {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
EMap<T> as_mat(Tensor<T>& t) {
    return EMap<T>(t.ptr(), t.rows(), t.cols());
}
template <typename T>
ECMap<T> as_mat(const Tensor<T>& t) {
    return ECMap<T>(t.ptr(), t.rows(), t.cols());
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Param<T>* add(std::string name, Tensor<T> init) {
        auto p = std::make_unique<Param<T>>();
        p->name = std::move(name);
        p->grad = Tensor<T>(init.shape);
        p->value = std::move(init);
        params_.push_back(std::move(p));
        return params_.back().get();
    }

    Param<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    size_t size() const { return params_.size(); }
    Param<T>& at(size_t i) { return *params_[i]; }
    const Param<T>& at(size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->grad.zero();
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
};

// ---------------------------------------------------------------------------
// Attention masks
// ---------------------------------------------------------------------------

// Inclusive key range [first, second] a query may attend to. Every mask this
// model needs is contiguous per query.
using KeyRange = std::pair<int32_t, int32_t>;

struct AttentionMask {
    enum class Kind { causal, block_diagonal_causal, block_span };
    Kind kind = Kind::causal;
    // block_diagonal_causal: per-sample blocks over the packed sequence.
    // block_span: one allowed range per query.
    std::vector<KeyRange> spans;

    static AttentionMask causal() { return {Kind::causal, {}}; }
    static AttentionMask block_diagonal_causal(std::vector<KeyRange> blocks) {
        return {Kind::block_diagonal_causal, std::move(blocks)};
    }
    static AttentionMask block_span(std::vector<KeyRange> s) {
        return {Kind::block_span, std::move(s)};
    }
};

inline std::vector<KeyRange> query_key_ranges(const AttentionMask& m, int num_queries,
                                              int num_keys) {
    std::vector<KeyRange> ranges(num_queries);
    switch (m.kind) {
        case AttentionMask::Kind::causal:
            require(num_queries == num_keys, "causal mask needs equal query/key counts");
            for (int i = 0; i < num_queries; ++i) ranges[i] = {0, i};
            break;
        case AttentionMask::Kind::block_diagonal_causal: {
            require(num_queries == num_keys, "block mask needs equal query/key counts");
            int32_t prev_end = -1;
            for (const auto& b : m.spans) {
                require(b.first == prev_end + 1 && b.second >= b.first,
                        "blocks must be sorted, contiguous, non-overlapping");
                for (int32_t i = b.first; i <= b.second; ++i) ranges[i] = {b.first, i};
                prev_end = b.second;
            }
            require(prev_end == num_queries - 1, "blocks must cover the sequence");
            break;
        }
        case AttentionMask::Kind::block_span:
            require(static_cast<int>(m.spans.size()) == num_queries,
                    "block-span mask needs one span per query");
            for (int i = 0; i < num_queries; ++i) {
                const auto& s = m.spans[i];
                require(s.first >= 0 && s.second < num_keys && s.first <= s.second,
                        "empty or out-of-range key span");
                ranges[i] = s;
            }
            break;
    }
    return ranges;
}

// ---------------------------------------------------------------------------
// Attention forward core (shared by the eval entry point and the graph op)
// ---------------------------------------------------------------------------

template <typename T>
void attention_forward_core(const T* q, const T* k, const T* v, int lq, int lk, int dim, int heads,
                            const std::vector<KeyRange>& ranges, T* out, T* weights,
                            const std::vector<int64_t>& woff) {
    const int dh = dim / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<T> scores;
    for (int i = 0; i < lq; ++i) {
        const auto [a, b] = ranges[i];
        require(a >= 0 && b < lk && a <= b, "query has an empty allowed key set");
        const int len = b - a + 1;
        scores.resize(len);
        for (int h = 0; h < heads; ++h) {
            const T* qrow = q + static_cast<int64_t>(i) * dim + h * dh;
            T maxs = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < len; ++j) {
                const T* krow = k + static_cast<int64_t>(a + j) * dim + h * dh;
                T s = 0;
                for (int c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                s *= scale;
                scores[j] = s;
                if (s > maxs) maxs = s;
            }
            T z = 0;
            for (int j = 0; j < len; ++j) {
                scores[j] = std::exp(scores[j] - maxs);
                z += scores[j];
            }
            T* orow = out + static_cast<int64_t>(i) * dim + h * dh;
            for (int c = 0; c < dh; ++c) orow[c] = 0;
            T* wrow = weights ? weights + woff[i] + static_cast<int64_t>(h) * len : nullptr;
            for (int j = 0; j < len; ++j) {
                const T w = scores[j] / z;
                if (wrow) wrow[j] = w;
                const T* vrow = v + static_cast<int64_t>(a + j) * dim + h * dh;
                for (int c = 0; c < dh; ++c) orow[c] += w * vrow[c];
            }
        }
    }
}

// Plain evaluation of masked scaled-dot-product attention; heads share the
// trailing dimension. Disallowed keys get exactly zero weight by construction.
template <typename T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const AttentionMask& mask, int heads = 1) {
    require(q.cols() == k.cols() && k.cols() == v.cols(), "q/k/v width mismatch");
    require(k.rows() == v.rows(), "k/v length mismatch");
    require(q.cols() % heads == 0, "width not divisible by heads");
    auto ranges = query_key_ranges(mask, static_cast<int>(q.rows()), static_cast<int>(k.rows()));
    Tensor<T> out(q.shape);
    std::vector<int64_t> woff;
    attention_forward_core(q.ptr(), k.ptr(), v.ptr(), static_cast<int>(q.rows()),
                           static_cast<int>(k.rows()), static_cast<int>(q.cols()), heads, ranges,
                           out.ptr(), static_cast<T*>(nullptr), woff);
    return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode graph
// ---------------------------------------------------------------------------

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Tape of tensor ops. Construction order is topological, so backward is a
// single reverse sweep. Parameter leaves accumulate into their Param's grad.
template <typename T>
class Graph {
public:
    Var input(Tensor<T> value, bool needs_grad = false) {
        return make_node(std::move(value), needs_grad, nullptr);
    }

    Var param(Param<T>& p) {
        Tensor<T> copy = p.value;
        return make_node(std::move(copy), true, &p);
    }

    const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }
    const Tensor<T>& grad(Var v) const { return nodes_[check(v)].grad; }

    // -- elementwise ---------------------------------------------------------

    Var add(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        require(av.shape == bv.shape, "add: shape mismatch");
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
        Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, a, b, r]() {
                const auto& g = node(r).grad;
                if (needs(a))
                    for (int64_t i = 0; i < g.numel(); ++i) node(a).grad.data[i] += g.data[i];
                if (needs(b))
                    for (int64_t i = 0; i < g.numel(); ++i) node(b).grad.data[i] += g.data[i];
            };
        }
        return r;
    }

    Var scale(Var a, double c) {
        Tensor<T> out = value(a);
        for (auto& x : out.data) x = static_cast<T>(x * c);
        Var r = make_node(std::move(out), needs(a), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, a, r, c]() {
                const auto& g = node(r).grad;
                for (int64_t i = 0; i < g.numel(); ++i)
                    node(a).grad.data[i] += static_cast<T>(g.data[i] * c);
            };
        }
        return r;
    }

    // silu(gate) * up, both [L, f]
    Var silu_gate(Var gate, Var up) {
        const auto& gv = value(gate);
        const auto& uv = value(up);
        require(gv.shape == uv.shape, "silu_gate: shape mismatch");
        Tensor<T> out(gv.shape);
        for (int64_t i = 0; i < out.numel(); ++i) {
            T x = gv.data[i];
            T sig = T(1) / (T(1) + std::exp(-x));
            out.data[i] = x * sig * uv.data[i];
        }
        Var r = make_node(std::move(out), needs(gate) || needs(up), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, gate, up, r]() {
                const auto& g = node(r).grad;
                const auto& gv = node(gate).value;
                const auto& uv = node(up).value;
                for (int64_t i = 0; i < g.numel(); ++i) {
                    T x = gv.data[i];
                    T sig = T(1) / (T(1) + std::exp(-x));
                    T silu = x * sig;
                    if (needs(up)) node(up).grad.data[i] += g.data[i] * silu;
                    if (needs(gate)) {
                        T dsilu = sig * (T(1) + x * (T(1) - sig));
                        node(gate).grad.data[i] += g.data[i] * uv.data[i] * dsilu;
                    }
                }
            };
        }
        return r;
    }

    // -- linear algebra -------------------------------------------------------

    // y = x . w^T with w stored [out_dim, in_dim]
    Var linear(Var x, Var w) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        require(xv.cols() == wv.cols(), "linear: inner dimension mismatch");
        Tensor<T> out({xv.rows(), wv.rows()});
        as_mat(out).noalias() = as_mat(xv) * as_mat(wv).transpose();
        Var r = make_node(std::move(out), needs(x) || needs(w), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, w, r]() {
                const auto& g = node(r).grad;
                if (needs(x)) as_mat(node(x).grad).noalias() += as_mat(g) * as_mat(node(w).value);
                if (needs(w))
                    as_mat(node(w).grad).noalias() +=
                        as_mat(g).transpose() * as_mat(node(x).value);
            };
        }
        return r;
    }

    // Root-mean-square normalization with learned per-channel scale.
    Var rmsnorm(Var x, Var gain, double eps = 1e-5) {
        const auto& xv = value(x);
        const auto& gv = value(gain);
        require(gv.numel() == xv.cols(), "rmsnorm: gain width mismatch");
        const int64_t L = xv.rows(), d = xv.cols();
        Tensor<T> out(xv.shape);
        auto rstd = std::make_shared<std::vector<T>>(L);
        for (int64_t i = 0; i < L; ++i) {
            const T* row = xv.ptr() + i * d;
            double ss = 0;
            for (int64_t j = 0; j < d; ++j) ss += static_cast<double>(row[j]) * row[j];
            T inv = static_cast<T>(1.0 / std::sqrt(ss / d + eps));
            (*rstd)[i] = inv;
            T* orow = out.ptr() + i * d;
            for (int64_t j = 0; j < d; ++j) orow[j] = row[j] * inv * gv.data[j];
        }
        Var r = make_node(std::move(out), needs(x) || needs(gain), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, gain, r, rstd]() {
                const auto& g = node(r).grad;
                const auto& xv = node(x).value;
                const auto& gv = node(gain).value;
                const int64_t L = xv.rows(), d = xv.cols();
                for (int64_t i = 0; i < L; ++i) {
                    const T inv = (*rstd)[i];
                    const T* xrow = xv.ptr() + i * d;
                    const T* grow = g.ptr() + i * d;
                    if (needs(gain)) {
                        T* gg = node(gain).grad.ptr();
                        for (int64_t j = 0; j < d; ++j) gg[j] += grow[j] * xrow[j] * inv;
                    }
                    if (needs(x)) {
                        double dot = 0;
                        for (int64_t j = 0; j < d; ++j)
                            dot += static_cast<double>(grow[j]) * gv.data[j] * xrow[j];
                        const T coef = static_cast<T>(dot / d) * inv * inv * inv;
                        T* xg = node(x).grad.ptr() + i * d;
                        for (int64_t j = 0; j < d; ++j)
                            xg[j] += grow[j] * gv.data[j] * inv - coef * xrow[j];
                    }
                }
            };
        }
        return r;
    }

    // -- lookups and reshuffles ----------------------------------------------

    Var embedding(Var table, std::vector<int32_t> ids) {
        const auto& tv = value(table);
        const int64_t d = tv.cols();
        Tensor<T> out({static_cast<int64_t>(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            require(ids[i] >= 0 && ids[i] < tv.rows(), "embedding id out of range");
            std::copy_n(tv.ptr() + static_cast<int64_t>(ids[i]) * d, d, out.ptr() + i * d);
        }
        Var r = make_node(std::move(out), needs(table), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, table, r, ids = std::move(ids)]() {
                const auto& g = node(r).grad;
                const int64_t d = g.cols();
                T* tg = node(table).grad.ptr();
                for (size_t i = 0; i < ids.size(); ++i) {
                    const T* grow = g.ptr() + static_cast<int64_t>(i) * d;
                    T* trow = tg + static_cast<int64_t>(ids[i]) * d;
                    for (int64_t j = 0; j < d; ++j) trow[j] += grow[j];
                }
            };
        }
        return r;
    }

    Var gather_rows(Var x, std::vector<int32_t> idx) {
        const auto& xv = value(x);
        const int64_t d = xv.cols();
        Tensor<T> out({static_cast<int64_t>(idx.size()), d});
        for (size_t i = 0; i < idx.size(); ++i) {
            require(idx[i] >= 0 && idx[i] < xv.rows(), "gather index out of range");
            std::copy_n(xv.ptr() + static_cast<int64_t>(idx[i]) * d, d, out.ptr() + i * d);
        }
        Var r = make_node(std::move(out), needs(x), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, r, idx = std::move(idx)]() {
                const auto& g = node(r).grad;
                const int64_t d = g.cols();
                T* xg = node(x).grad.ptr();
                for (size_t i = 0; i < idx.size(); ++i) {
                    const T* grow = g.ptr() + static_cast<int64_t>(i) * d;
                    T* xrow = xg + static_cast<int64_t>(idx[i]) * d;
                    for (int64_t j = 0; j < d; ++j) xrow[j] += grow[j];
                }
            };
        }
        return r;
    }

    Var concat_rows(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        require(av.cols() == bv.cols(), "concat_rows: width mismatch");
        Tensor<T> out({av.rows() + bv.rows(), av.cols()});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
        Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, a, b, r]() {
                const auto& g = node(r).grad;
                const int64_t na = node(a).value.numel();
                if (needs(a))
                    for (int64_t i = 0; i < na; ++i) node(a).grad.data[i] += g.data[i];
                if (needs(b))
                    for (int64_t i = na; i < g.numel(); ++i)
                        node(b).grad.data[i - na] += g.data[i];
            };
        }
        return r;
    }

    // Mean of each inclusive row span.
    Var segment_mean(Var x, std::vector<KeyRange> spans) {
        const auto& xv = value(x);
        const int64_t d = xv.cols();
        Tensor<T> out({static_cast<int64_t>(spans.size()), d});
        for (size_t m = 0; m < spans.size(); ++m) {
            const auto [s, e] = spans[m];
            require(s >= 0 && e < xv.rows() && s <= e, "segment_mean: bad span");
            T* orow = out.ptr() + static_cast<int64_t>(m) * d;
            for (int32_t i = s; i <= e; ++i) {
                const T* row = xv.ptr() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) orow[j] += row[j];
            }
            const T inv = T(1) / static_cast<T>(e - s + 1);
            for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
        }
        Var r = make_node(std::move(out), needs(x), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, r, spans = std::move(spans)]() {
                const auto& g = node(r).grad;
                const int64_t d = g.cols();
                for (size_t m = 0; m < spans.size(); ++m) {
                    const auto [s, e] = spans[m];
                    const T inv = T(1) / static_cast<T>(e - s + 1);
                    const T* grow = g.ptr() + static_cast<int64_t>(m) * d;
                    for (int32_t i = s; i <= e; ++i) {
                        T* xrow = node(x).grad.ptr() + static_cast<int64_t>(i) * d;
                        for (int64_t j = 0; j < d; ++j) xrow[j] += grow[j] * inv;
                    }
                }
            };
        }
        return r;
    }

    // -- rotary ---------------------------------------------------------------

    // Rotates per-head component pairs by the per-position angle schedule.
    Var rotary(Var x, RotTablePtr<T> table, int heads) {
        const auto& xv = value(x);
        const int64_t L = xv.rows(), dim = xv.cols();
        const int dh = static_cast<int>(dim) / heads;
        require(dim % heads == 0, "rotary: width not divisible by heads");
        require(table->head_dim == dh, "rotary: table head_dim mismatch");
        require(table->positions == L, "rotary: table length mismatch");
        Tensor<T> out(xv.shape);
        rotate(xv, *table, heads, dh, out, false);
        Var r = make_node(std::move(out), needs(x), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, r, table, heads, dh]() {
                // inverse rotation of the upstream gradient
                Tensor<T> tmp(node(r).grad.shape);
                rotate(node(r).grad, *table, heads, dh, tmp, true);
                auto& xg = node(x).grad;
                for (int64_t i = 0; i < xg.numel(); ++i) xg.data[i] += tmp.data[i];
            };
        }
        return r;
    }

    // -- attention ------------------------------------------------------------

    Var attention(Var q, Var k, Var v, const std::vector<KeyRange>& ranges, int heads) {
        const auto& qv = value(q);
        const auto& kv = value(k);
        const auto& vv = value(v);
        require(qv.cols() == kv.cols() && kv.cols() == vv.cols(), "attention: width mismatch");
        require(kv.rows() == vv.rows(), "attention: key/value length mismatch");
        require(static_cast<int64_t>(ranges.size()) == qv.rows(),
                "attention: one key range per query required");
        const int lq = static_cast<int>(qv.rows());
        const int lk = static_cast<int>(kv.rows());
        const int dim = static_cast<int>(qv.cols());
        require(dim % heads == 0, "attention: width not divisible by heads");

        const bool grad_needed = needs(q) || needs(k) || needs(v);
        auto woff = std::make_shared<std::vector<int64_t>>(lq + 1);
        for (int i = 0; i < lq; ++i) {
            const auto [a, b] = ranges[i];
            require(a >= 0 && b < lk && a <= b, "attention: query has empty allowed key set");
            (*woff)[i + 1] = (*woff)[i] + static_cast<int64_t>(b - a + 1) * heads;
        }
        auto weights = std::make_shared<std::vector<T>>(grad_needed ? (*woff)[lq] : 0);
        Tensor<T> out(qv.shape);
        attention_forward_core(qv.ptr(), kv.ptr(), vv.ptr(), lq, lk, dim, heads, ranges, out.ptr(),
                               grad_needed ? weights->data() : nullptr, *woff);
        Var r = make_node(std::move(out), grad_needed, nullptr);
        if (node(r).needs_grad) {
            auto rng = std::make_shared<std::vector<KeyRange>>(ranges);
            node(r).backward = [this, q, k, v, r, rng, weights, woff, heads, dim]() {
                const int dh = dim / heads;
                const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
                const auto& g = node(r).grad;
                const auto& qv = node(q).value;
                const auto& kv = node(k).value;
                const auto& vv = node(v).value;
                auto& qg = node(q).grad;
                auto& kg = node(k).grad;
                auto& vg = node(v).grad;
                std::vector<T> ds;
                const int lq = static_cast<int>(qv.rows());
                for (int i = 0; i < lq; ++i) {
                    const auto [a, b] = (*rng)[i];
                    const int len = b - a + 1;
                    ds.resize(len);
                    for (int h = 0; h < heads; ++h) {
                        const T* grow = g.ptr() + static_cast<int64_t>(i) * dim + h * dh;
                        const T* w = weights->data() + (*woff)[i] + static_cast<int64_t>(h) * len;
                        T wsum = 0;
                        for (int j = 0; j < len; ++j) {
                            const T* vrow = vv.ptr() + static_cast<int64_t>(a + j) * dim + h * dh;
                            T d = 0;
                            for (int c = 0; c < dh; ++c) d += grow[c] * vrow[c];
                            ds[j] = d;
                            wsum += w[j] * d;
                            if (needs(v)) {
                                T* vgr = vg.ptr() + static_cast<int64_t>(a + j) * dim + h * dh;
                                for (int c = 0; c < dh; ++c) vgr[c] += w[j] * grow[c];
                            }
                        }
                        const T* qrow = qv.ptr() + static_cast<int64_t>(i) * dim + h * dh;
                        T* qgr = qg.ptr() + static_cast<int64_t>(i) * dim + h * dh;
                        for (int j = 0; j < len; ++j) {
                            const T dscore = w[j] * (ds[j] - wsum) * scale;
                            if (dscore == T(0)) continue;
                            const T* krow = kv.ptr() + static_cast<int64_t>(a + j) * dim + h * dh;
                            if (needs(q))
                                for (int c = 0; c < dh; ++c) qgr[c] += dscore * krow[c];
                            if (needs(k)) {
                                T* kgr = kg.ptr() + static_cast<int64_t>(a + j) * dim + h * dh;
                                for (int c = 0; c < dh; ++c) kgr[c] += dscore * qrow[c];
                            }
                        }
                    }
                }
            };
        }
        return r;
    }

    // -- losses and reductions -------------------------------------------------

    // Per-position negative log-likelihood of each target under softmax(logits).
    Var cross_entropy(Var logits, std::vector<int32_t> targets) {
        const auto& lv = value(logits);
        const int64_t L = lv.rows(), V = lv.cols();
        require(static_cast<int64_t>(targets.size()) == L, "cross_entropy: target count mismatch");
        auto probs = std::make_shared<Tensor<T>>(lv.shape);
        Tensor<T> out({L});
        for (int64_t i = 0; i < L; ++i) {
            require(targets[i] >= 0 && targets[i] < V, "cross_entropy: target out of vocabulary");
            const T* row = lv.ptr() + i * V;
            T maxv = row[0];
            for (int64_t j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
            double z = 0;
            T* prow = probs->ptr() + i * V;
            for (int64_t j = 0; j < V; ++j) {
                prow[j] = std::exp(row[j] - maxv);
                z += static_cast<double>(prow[j]);
            }
            const T invz = static_cast<T>(1.0 / z);
            for (int64_t j = 0; j < V; ++j) prow[j] *= invz;
            out.data[i] = static_cast<T>(std::log(z)) - (row[targets[i]] - maxv);
        }
        Var r = make_node(std::move(out), needs(logits), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, logits, r, probs, targets = std::move(targets)]() {
                const auto& g = node(r).grad;
                const int64_t L = probs->rows(), V = probs->cols();
                T* lg = node(logits).grad.ptr();
                for (int64_t i = 0; i < L; ++i) {
                    const T gi = g.data[i];
                    if (gi == T(0)) continue;
                    const T* prow = probs->ptr() + i * V;
                    T* grow = lg + i * V;
                    for (int64_t j = 0; j < V; ++j) grow[j] += gi * prow[j];
                    grow[targets[i]] -= gi;
                }
            };
        }
        return r;
    }

    // Sum of each inclusive span of a length-L vector.
    Var segment_sum(Var x, std::vector<KeyRange> spans) {
        const auto& xv = value(x);
        require(xv.cols() == 1 || xv.shape.size() == 1, "segment_sum: expects a vector");
        Tensor<T> out({static_cast<int64_t>(spans.size())});
        for (size_t m = 0; m < spans.size(); ++m) {
            const auto [s, e] = spans[m];
            require(s >= 0 && e < xv.numel() && s <= e, "segment_sum: bad span");
            T acc = 0;
            for (int32_t i = s; i <= e; ++i) acc += xv.data[i];
            out.data[m] = acc;
        }
        Var r = make_node(std::move(out), needs(x), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, r, spans = std::move(spans)]() {
                const auto& g = node(r).grad;
                for (size_t m = 0; m < spans.size(); ++m) {
                    const auto [s, e] = spans[m];
                    for (int32_t i = s; i <= e; ++i) node(x).grad.data[i] += g.data[m];
                }
            };
        }
        return r;
    }

    Var sum(Var x) {
        const auto& xv = value(x);
        Tensor<T> out({1});
        double acc = 0;
        for (const T& v : xv.data) acc += static_cast<double>(v);
        out.data[0] = static_cast<T>(acc);
        Var r = make_node(std::move(out), needs(x), nullptr);
        if (node(r).needs_grad) {
            node(r).backward = [this, x, r]() {
                const T g = node(r).grad.data[0];
                for (auto& v : node(x).grad.data) v += g;
            };
        }
        return r;
    }

    Var mean(Var x) {
        const int64_t n = value(x).numel();
        return scale(sum(x), 1.0 / static_cast<double>(n));
    }

    // -- backward ---------------------------------------------------------------

    void backward(Var loss) {
        auto& ln = node(loss);
        require(ln.value.numel() == 1, "backward: loss must be scalar");
        require(ln.needs_grad, "backward: loss does not depend on parameters");
        ln.grad.data[0] = T(1);
        for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
            if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward();
        }
        for (auto& n : nodes_) {
            if (n.bound) {
                for (int64_t i = 0; i < n.grad.numel(); ++i)
                    n.bound->grad.data[i] += n.grad.data[i];
            }
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        Param<T>* bound = nullptr;
        std::function<void()> backward;
    };

    static void rotate(const Tensor<T>& in, const RotTable<T>& table, int heads, int dh,
                       Tensor<T>& out, bool inverse) {
        const int64_t L = in.rows();
        const int64_t dim = in.cols();
        const int pairs = dh / 2;
        for (int64_t i = 0; i < L; ++i) {
            const T* srow = table.sin.data() + i * pairs;
            const T* crow = table.cos.data() + i * pairs;
            for (int h = 0; h < heads; ++h) {
                const T* x = in.ptr() + i * dim + h * dh;
                T* y = out.ptr() + i * dim + h * dh;
                for (int p = 0; p < pairs; ++p) {
                    const T c = crow[p];
                    const T s = inverse ? -srow[p] : srow[p];
                    const T a = x[2 * p], b = x[2 * p + 1];
                    y[2 * p] = a * c - b * s;
                    y[2 * p + 1] = a * s + b * c;
                }
            }
        }
    }

    int32_t check(Var v) const {
        require(v.id >= 0 && v.id < static_cast<int32_t>(nodes_.size()), "invalid graph var");
        return v.id;
    }

    Node& node(Var v) { return nodes_[check(v)]; }
    bool needs(Var v) { return node(v).needs_grad; }

    Var make_node(Tensor<T> value, bool needs_grad, Param<T>* bound) {
        Node n;
        if (needs_grad) n.grad = Tensor<T>(value.shape);
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.bound = bound;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
};

}  // namespace dpar
