#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpar/autodiff.hpp"
#include "dpar/rng.hpp"

namespace dpar {

// Intermediate width of the gated MLP: 8/3 * hidden, rounded to a multiple
// of 8.
inline int mlp_width(int hidden) {
    return 8 * static_cast<int>(std::lround(hidden / 3.0));
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

template <typename T>
struct BlockParams {
    Param<T>* attn_norm;
    Param<T>* wq;
    Param<T>* wk;
    Param<T>* wv;
    Param<T>* wo;
    Param<T>* mlp_norm;
    Param<T>* w_gate;
    Param<T>* w_up;
    Param<T>* w_down;
};

template <typename T>
Tensor<T> normal_init(std::vector<int64_t> shape, Rng& rng, double std_dev = 0.02) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, std_dev));
    return t;
}

template <typename T>
Tensor<T> ones_init(std::vector<int64_t> shape) {
    Tensor<T> t(std::move(shape));
    t.fill(T(1));
    return t;
}

template <typename T>
BlockParams<T> make_block_params(ParamStore<T>& store, const std::string& prefix, int hidden,
                                 Rng& rng) {
    const int f = mlp_width(hidden);
    BlockParams<T> b;
    b.attn_norm = store.add(prefix + ".attn_norm", ones_init<T>({hidden}));
    b.wq = store.add(prefix + ".wq", normal_init<T>({hidden, hidden}, rng));
    b.wk = store.add(prefix + ".wk", normal_init<T>({hidden, hidden}, rng));
    b.wv = store.add(prefix + ".wv", normal_init<T>({hidden, hidden}, rng));
    b.wo = store.add(prefix + ".wo", normal_init<T>({hidden, hidden}, rng));
    b.mlp_norm = store.add(prefix + ".mlp_norm", ones_init<T>({hidden}));
    b.w_gate = store.add(prefix + ".w_gate", normal_init<T>({f, hidden}, rng));
    b.w_up = store.add(prefix + ".w_up", normal_init<T>({f, hidden}, rng));
    b.w_down = store.add(prefix + ".w_down", normal_init<T>({hidden, f}, rng));
    return b;
}

template <typename T>
BlockParams<T> bind_block_params(ParamStore<T>& store, const std::string& prefix) {
    BlockParams<T> b;
    b.attn_norm = store.find(prefix + ".attn_norm");
    b.wq = store.find(prefix + ".wq");
    b.wk = store.find(prefix + ".wk");
    b.wv = store.find(prefix + ".wv");
    b.wo = store.find(prefix + ".wo");
    b.mlp_norm = store.find(prefix + ".mlp_norm");
    b.w_gate = store.find(prefix + ".w_gate");
    b.w_up = store.find(prefix + ".w_up");
    b.w_down = store.find(prefix + ".w_down");
    require(b.attn_norm && b.wq && b.wk && b.wv && b.wo && b.mlp_norm && b.w_gate && b.w_up &&
                b.w_down,
            "missing block parameters under prefix " + prefix);
    return b;
}

// Pre-normalized residual block: x + Attn(Norm(x)) followed by
// x + GatedMLP(Norm(x)). Rotary angles, when given, are applied to the query
// and key projections before scores.
template <typename T>
Var transformer_block(Graph<T>& g, Var x, const BlockParams<T>& p,
                      const std::vector<KeyRange>& ranges, const RotTablePtr<T>& rot, int heads) {
    Var h = g.rmsnorm(x, g.param(*p.attn_norm));
    Var q = g.linear(h, g.param(*p.wq));
    Var k = g.linear(h, g.param(*p.wk));
    Var v = g.linear(h, g.param(*p.wv));
    if (rot) {
        q = g.rotary(q, rot, heads);
        k = g.rotary(k, rot, heads);
    }
    Var attn = g.attention(q, k, v, ranges, heads);
    x = g.add(x, g.linear(attn, g.param(*p.wo)));
    Var h2 = g.rmsnorm(x, g.param(*p.mlp_norm));
    Var gate = g.linear(h2, g.param(*p.w_gate));
    Var up = g.linear(h2, g.param(*p.w_up));
    x = g.add(x, g.linear(g.silu_gate(gate, up), g.param(*p.w_down)));
    return x;
}

// Convenience wrapper used as an argument-level oracle in tests: sum of
// -log softmax(logits)[target] over positions; mean when requested.
template <typename T>
double cross_entropy_loss(const Tensor<T>& logits, const std::vector<int32_t>& targets,
                          bool mean_reduction = false) {
    Graph<T> g;
    Var l = g.input(logits);
    Var per = g.cross_entropy(l, targets);
    double acc = 0;
    for (const T& v : g.value(per).data) acc += static_cast<double>(v);
    if (mean_reduction && !targets.empty()) acc /= static_cast<double>(targets.size());
    return acc;
}

// ---------------------------------------------------------------------------
// AdamW with global-norm clipping
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Clips the global gradient norm, applies the decoupled-decay update with
    // bias correction, then zeroes the gradients.
    void step(ParamStore<T>& params) {
        ensure_state(params);
        double sq = 0;
        for (size_t i = 0; i < params.size(); ++i) {
            for (const T& gv : params.at(i).grad.data) {
                const double g = static_cast<double>(gv);
                if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + params.at(i).name);
                sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        const double clip_scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm)
                                      ? cfg_.clip_norm / norm
                                      : 1.0;
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params.at(i);
            auto& mt = m_[i];
            auto& vt = v_[i];
            for (int64_t j = 0; j < p.value.numel(); ++j) {
                const double g = static_cast<double>(p.grad.data[j]) * clip_scale;
                double m = cfg_.beta1 * static_cast<double>(mt.data[j]) + (1.0 - cfg_.beta1) * g;
                double v = cfg_.beta2 * static_cast<double>(vt.data[j]) + (1.0 - cfg_.beta2) * g * g;
                mt.data[j] = static_cast<T>(m);
                vt.data[j] = static_cast<T>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                upd += cfg_.lr * cfg_.weight_decay * static_cast<double>(p.value.data[j]);
                p.value.data[j] = static_cast<T>(static_cast<double>(p.value.data[j]) - upd);
            }
        }
        params.zero_grads();
    }

    int64_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_step_count(int64_t n) { step_count_ = n; }
    void ensure_state(ParamStore<T>& params) {
        if (!m_.empty()) return;
        for (size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params.at(i).value.shape);
            v_.emplace_back(params.at(i).value.shape);
        }
    }

private:
    AdamWConfig cfg_;
    int64_t step_count_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

// Compares the reverse-mode gradient of a scalar function of the stored
// parameters against central differences. Returns the maximum relative error.
// max_elements_per_param < 0 checks every element.
inline double check_gradients(const std::function<Var(Graph<double>&)>& build,
                              ParamStore<double>& params, double fd_step = 1e-5,
                              int64_t max_elements_per_param = -1) {
    const auto eval = [&]() {
        Graph<double> g;
        Var loss = build(g);
        return g.value(loss).data[0];
    };

    params.zero_grads();
    {
        Graph<double> g;
        Var loss = build(g);
        g.backward(loss);
    }

    double max_rel = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params.at(pi);
        const int64_t n = p.value.numel();
        const int64_t stride =
            (max_elements_per_param > 0 && n > max_elements_per_param)
                ? (n + max_elements_per_param - 1) / max_elements_per_param
                : 1;
        for (int64_t j = 0; j < n; j += stride) {
            const double orig = p.value.data[j];
            p.value.data[j] = orig + fd_step;
            const double fp = eval();
            p.value.data[j] = orig - fd_step;
            const double fm = eval();
            p.value.data[j] = orig;
            const double numeric = (fp - fm) / (2.0 * fd_step);
            const double analytic = p.grad.data[j];
            const double rel =
                std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-6);
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace dpar
