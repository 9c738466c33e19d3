#pragma once

// Neural-network substrate: dense layers, layer norm, multi-head
// self-attention encoder layers, softmax / cross-entropy, SGD and Adam,
// and a central finite-difference gradient checker.
//
// Forward passes record per-call caches that the matching backward pass
// consumes; parameter gradients accumulate into Param::g. Everything is
// double precision and single-threaded per model instance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msgblocks/mat.hpp"
#include "msgblocks/rng.hpp"

namespace msgblocks {

enum class Activation { none, relu };

// ---------------------------------------------------------------- softmax

inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    double mx = logits[0];
    for (double x : logits) {
        if (!std::isfinite(x)) throw std::invalid_argument("softmax: non-finite input");
        mx = std::max(mx, x);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

inline double cross_entropy(const std::vector<double>& probs, std::size_t label) {
    if (label >= probs.size()) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(probs.size()) + " classes");
    }
    return -std::log(std::max(probs[label], 1e-12));
}

// ------------------------------------------------------------ dense layer

struct DenseCache {
    Mat input;   // N x in
    Mat preact;  // N x out
    bool valid = false;
};

struct DenseLayer {
    Param weight;  // out x in
    Param bias;    // out x 1
    Activation activation = Activation::none;

    DenseLayer() = default;

    DenseLayer(const std::string& name, std::size_t out, std::size_t in, Activation act)
        : weight(name + ".w", out, in), bias(name + ".b", out, 1), activation(act) {}

    std::size_t in_dim() const { return weight.w.cols; }
    std::size_t out_dim() const { return weight.w.rows; }

    void init(Rng& rng) {
        const double std = 1.0 / std::sqrt(static_cast<double>(in_dim()));
        for (double& x : weight.w.v) x = rng.normal(0.0, std);
        bias.w.zero();
    }

    // rows of x are independent samples/positions
    Mat forward(const Mat& x, DenseCache* cache = nullptr) const {
        if (x.cols != in_dim()) {
            throw std::invalid_argument("dense '" + weight.name + "': input " + x.shape_str() +
                                        " does not match weights " + weight.w.shape_str());
        }
        Mat pre = matmul_a_bt(x, weight.w);
        for (std::size_t i = 0; i < pre.rows; ++i)
            for (std::size_t j = 0; j < pre.cols; ++j) pre.at(i, j) += bias.w.v[j];
        if (cache) {
            cache->input = x;
            cache->preact = pre;
            cache->valid = true;
        }
        if (activation == Activation::relu) {
            for (double& v : pre.v) v = std::max(0.0, v);
        }
        return pre;
    }

    // accumulates into weight.g / bias.g, returns dL/dx
    Mat backward(const Mat& dy, const DenseCache& cache) {
        if (!cache.valid) throw std::logic_error("dense '" + weight.name + "': backward before forward");
        Mat dpre = dy;
        if (activation == Activation::relu) {
            for (std::size_t i = 0; i < dpre.v.size(); ++i)
                if (cache.preact.v[i] <= 0.0) dpre.v[i] = 0.0;
        }
        add_inplace(weight.g, matmul_at_b(dpre, cache.input));
        for (std::size_t i = 0; i < dpre.rows; ++i)
            for (std::size_t j = 0; j < dpre.cols; ++j) bias.g.v[j] += dpre.at(i, j);
        return matmul(dpre, weight.w);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// single-vector convenience form
inline std::vector<double> dense_forward(const DenseLayer& layer, const std::vector<double>& input) {
    Mat x(1, input.size());
    x.v = input;
    Mat y = layer.forward(x);
    return y.v;
}

// -------------------------------------------------------------- layer norm

struct LayerNormCache {
    Mat xhat;
    std::vector<double> inv_std;  // one per row
    bool valid = false;
};

struct LayerNorm {
    Param gamma;  // 1 x d
    Param beta;   // 1 x d
    double eps = 1e-5;

    LayerNorm() = default;

    LayerNorm(const std::string& name, std::size_t d) : gamma(name + ".g", 1, d), beta(name + ".b", 1, d) {
        std::fill(gamma.w.v.begin(), gamma.w.v.end(), 1.0);
    }

    Mat forward(const Mat& x, LayerNormCache* cache = nullptr) const {
        const std::size_t d = gamma.w.cols;
        require_shape(x, x.rows, d, "layer_norm input");
        Mat y(x.rows, d);
        Mat xhat(x.rows, d);
        std::vector<double> inv_std(x.rows);
        for (std::size_t i = 0; i < x.rows; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
            mean /= d;
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = x.at(i, j) - mean;
                var += c * c;
            }
            var /= d;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[i] = is;
            for (std::size_t j = 0; j < d; ++j) {
                xhat.at(i, j) = (x.at(i, j) - mean) * is;
                y.at(i, j) = gamma.w.v[j] * xhat.at(i, j) + beta.w.v[j];
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
            cache->valid = true;
        }
        return y;
    }

    Mat backward(const Mat& dy, const LayerNormCache& cache) {
        if (!cache.valid) throw std::logic_error("layer_norm: backward before forward");
        const std::size_t d = gamma.w.cols;
        Mat dx(dy.rows, d);
        for (std::size_t i = 0; i < dy.rows; ++i) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = dy.at(i, j) * gamma.w.v[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * cache.xhat.at(i, j);
                gamma.g.v[j] += dy.at(i, j) * cache.xhat.at(i, j);
                beta.g.v[j] += dy.at(i, j);
            }
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = dy.at(i, j) * gamma.w.v[j];
                dx.at(i, j) = cache.inv_std[i] *
                              (dxh - sum_dxhat / d - cache.xhat.at(i, j) * sum_dxhat_xhat / d);
            }
        }
        return dx;
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// ----------------------------------------------------- scaled dot-product

// Single-head core: softmax(Q K^T / sqrt(d)) V with padded keys excluded.
// attn_out, when given, receives the T x T weight matrix.
inline Mat attention_core(const Mat& q, const Mat& k, const Mat& v,
                          const std::vector<bool>& key_pad, Mat* attn_out = nullptr) {
    if (q.cols != k.cols || k.rows != v.rows || key_pad.size() != k.rows) {
        throw std::invalid_argument("attention_core: inconsistent shapes");
    }
    bool any_live = false;
    for (std::size_t j = 0; j < key_pad.size(); ++j) any_live = any_live || !key_pad[j];
    if (!any_live) throw std::invalid_argument("attention_core: all key positions padded");

    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Mat scores = matmul_a_bt(q, k);
    for (std::size_t i = 0; i < scores.rows; ++i) {
        for (std::size_t j = 0; j < scores.cols; ++j) {
            scores.at(i, j) = key_pad[j] ? -1e30 : scores.at(i, j) * scale;
        }
    }
    Mat attn(scores.rows, scores.cols);
    for (std::size_t i = 0; i < scores.rows; ++i) {
        std::vector<double> row(scores.v.begin() + i * scores.cols,
                                scores.v.begin() + (i + 1) * scores.cols);
        std::vector<double> sm = softmax(row);
        std::copy(sm.begin(), sm.end(), attn.v.begin() + i * attn.cols);
    }
    if (attn_out) *attn_out = attn;
    return matmul(attn, v);
}

// ----------------------------------------------------------- encoder layer

struct AttentionCache {
    Mat input;                 // T x d
    Mat q, k, v;               // T x d
    std::vector<Mat> attn;     // per head, T x T
    Mat context;               // T x d (heads concatenated)
    LayerNormCache ln1, ln2;
    DenseCache ff1, ff2;
    std::vector<bool> pad;
    bool valid = false;
};

// Self-attention + position-wise feed-forward, residual and layer norm
// after each sublayer.
struct AttentionLayer {
    std::size_t d_model = 0;
    std::size_t n_heads = 1;
    Param wq, wk, wv, wo;  // d x d, applied as X * W
    LayerNorm ln1, ln2;
    DenseLayer ff1, ff2;

    AttentionLayer() = default;

    AttentionLayer(const std::string& name, std::size_t d, std::size_t heads, std::size_t d_ff)
        : d_model(d),
          n_heads(heads),
          wq(name + ".wq", d, d),
          wk(name + ".wk", d, d),
          wv(name + ".wv", d, d),
          wo(name + ".wo", d, d),
          ln1(name + ".ln1", d),
          ln2(name + ".ln2", d),
          ff1(name + ".ff1", d_ff, d, Activation::relu),
          ff2(name + ".ff2", d, d_ff, Activation::none) {
        if (d % heads != 0) {
            throw std::invalid_argument("attention: d_model " + std::to_string(d) +
                                        " not divisible by n_heads " + std::to_string(heads));
        }
    }

    std::size_t head_dim() const { return d_model / n_heads; }

    void init(Rng& rng) {
        const double std = 1.0 / std::sqrt(static_cast<double>(d_model));
        for (Param* p : {&wq, &wk, &wv, &wo})
            for (double& x : p->w.v) x = rng.normal(0.0, std);
        ff1.init(rng);
        ff2.init(rng);
    }

    Mat forward(const Mat& x, const std::vector<bool>& pad, AttentionCache* cache = nullptr) const {
        require_shape(x, x.rows, d_model, "attention input");
        if (pad.size() != x.rows) throw std::invalid_argument("attention: pad mask length mismatch");

        const std::size_t t = x.rows, dh = head_dim();
        Mat q = matmul(x, wq.w), k = matmul(x, wk.w), v = matmul(x, wv.w);

        std::vector<Mat> attn(n_heads);
        Mat context(t, d_model);
        for (std::size_t h = 0; h < n_heads; ++h) {
            Mat qh(t, dh), kh(t, dh), vh(t, dh);
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < dh; ++j) {
                    qh.at(i, j) = q.at(i, h * dh + j);
                    kh.at(i, j) = k.at(i, h * dh + j);
                    vh.at(i, j) = v.at(i, h * dh + j);
                }
            Mat ctx = attention_core(qh, kh, vh, pad, &attn[h]);
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < dh; ++j) context.at(i, h * dh + j) = ctx.at(i, j);
        }

        Mat r1 = matmul(context, wo.w);
        add_inplace(r1, x);

        AttentionCache local;
        AttentionCache* c = cache ? cache : &local;
        Mat n1 = ln1.forward(r1, &c->ln1);
        Mat f = ff2.forward(ff1.forward(n1, &c->ff1), &c->ff2);
        add_inplace(f, n1);
        Mat y = ln2.forward(f, &c->ln2);

        if (cache) {
            cache->input = x;
            cache->q = std::move(q);
            cache->k = std::move(k);
            cache->v = std::move(v);
            cache->attn = std::move(attn);
            cache->context = std::move(context);
            cache->pad = pad;
            cache->valid = true;
        }
        return y;
    }

    Mat backward(const Mat& dy, const AttentionCache& cache) {
        if (!cache.valid) throw std::logic_error("attention: backward before forward");
        const std::size_t t = cache.input.rows, dh = head_dim();

        Mat dr2 = ln2.backward(dy, cache.ln2);
        Mat dn1 = dr2;  // residual branch
        Mat df1 = ff2.backward(dr2, cache.ff2);
        add_inplace(dn1, ff1.backward(df1, cache.ff1));
        Mat dr1 = ln1.backward(dn1, cache.ln1);

        Mat dx = dr1;  // residual branch
        // output projection
        Mat dcontext = matmul_a_bt(dr1, wo.w);
        add_inplace(wo.g, matmul_at_b(cache.context, dr1));

        Mat dq(t, d_model), dk(t, d_model), dv(t, d_model);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t h = 0; h < n_heads; ++h) {
            Mat dctx(t, dh), qh(t, dh), kh(t, dh), vh(t, dh);
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < dh; ++j) {
                    dctx.at(i, j) = dcontext.at(i, h * dh + j);
                    qh.at(i, j) = cache.q.at(i, h * dh + j);
                    kh.at(i, j) = cache.k.at(i, h * dh + j);
                    vh.at(i, j) = cache.v.at(i, h * dh + j);
                }
            const Mat& a = cache.attn[h];
            Mat da = matmul_a_bt(dctx, vh);
            Mat dvh = matmul_at_b(a, dctx);
            // softmax rows: ds = a ⊙ (da − Σ_j da_j a_j); masked keys have a == 0
            Mat ds(t, t);
            for (std::size_t i = 0; i < t; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < t; ++j) dot += da.at(i, j) * a.at(i, j);
                for (std::size_t j = 0; j < t; ++j)
                    ds.at(i, j) = a.at(i, j) * (da.at(i, j) - dot) * scale;
            }
            Mat dqh = matmul(ds, kh);
            Mat dkh = matmul_at_b(ds, qh);  // dK = dS^T Q
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < dh; ++j) {
                    dq.at(i, h * dh + j) = dqh.at(i, j);
                    dk.at(i, h * dh + j) = dkh.at(i, j);
                    dv.at(i, h * dh + j) = dvh.at(i, j);
                }
        }
        add_inplace(dx, matmul_a_bt(dq, wq.w));
        add_inplace(dx, matmul_a_bt(dk, wk.w));
        add_inplace(dx, matmul_a_bt(dv, wv.w));
        add_inplace(wq.g, matmul_at_b(cache.input, dq));
        add_inplace(wk.g, matmul_at_b(cache.input, dk));
        add_inplace(wv.g, matmul_at_b(cache.input, dv));
        return dx;
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&wq, &wk, &wv, &wo}) out.push_back(p);
        ln1.collect(out);
        ff1.collect(out);
        ff2.collect(out);
        ln2.collect(out);
    }
};

inline Mat attention_forward(const AttentionLayer& layer, const Mat& seq, const std::vector<bool>& pad_mask) {
    return layer.forward(seq, pad_mask);
}

// ---------------------------------------------------------------- optimizer

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<Mat> m1, m2;  // adam moment buffers, one per parameter
    std::uint64_t step_count = 0;

    static OptimizerState sgd_with(double lr) {
        OptimizerState s;
        s.kind = OptimizerKind::sgd;
        s.lr = lr;
        return s;
    }

    static OptimizerState adam_with(double lr) {
        OptimizerState s;
        s.lr = lr;
        return s;
    }

    void step(const std::vector<Param*>& params) {
        for (const Param* p : params) {
            if (!all_finite(p->g)) {
                throw std::runtime_error("optimizer: non-finite gradient in '" + p->name + "'");
            }
        }
        if (kind == OptimizerKind::adam && m1.empty()) {
            for (const Param* p : params) {
                m1.emplace_back(p->g.rows, p->g.cols);
                m2.emplace_back(p->g.rows, p->g.cols);
            }
        }
        if (kind == OptimizerKind::adam && m1.size() != params.size()) {
            throw std::invalid_argument("optimizer: parameter set changed under adam state");
        }
        ++step_count;
        if (kind == OptimizerKind::sgd) {
            for (Param* p : params)
                for (std::size_t i = 0; i < p->w.v.size(); ++i) p->w.v[i] -= lr * p->g.v[i];
            return;
        }
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Param* p = params[pi];
            if (!m1[pi].same_shape(p->g)) {
                throw std::invalid_argument("optimizer: moment shape mismatch for '" + p->name + "'");
            }
            for (std::size_t i = 0; i < p->w.v.size(); ++i) {
                const double g = p->g.v[i];
                m1[pi].v[i] = beta1 * m1[pi].v[i] + (1.0 - beta1) * g;
                m2[pi].v[i] = beta2 * m2[pi].v[i] + (1.0 - beta2) * g * g;
                const double mhat = m1[pi].v[i] / bc1;
                const double vhat = m2[pi].v[i] / bc2;
                p->w.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

inline void optimizer_step(OptimizerState& state, const std::vector<Param*>& params) {
    state.step(params);
}

inline void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
}

inline double grad_global_norm(const std::vector<Param*>& params) {
    double s = 0.0;
    for (const Param* p : params)
        for (double g : p->g.v) s += g * g;
    return std::sqrt(s);
}

inline void clip_global_norm(const std::vector<Param*>& params, double max_norm) {
    const double n = grad_global_norm(params);
    if (n > max_norm && n > 0.0) {
        const double scale = max_norm / n;
        for (Param* p : params)
            for (double& g : p->g.v) g *= scale;
    }
}

// ------------------------------------------------------- gradient checking

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central finite differences against gradients already accumulated in
// params[i]->g. loss_fn must recompute the same scalar loss from the
// current parameter values. The relative-error denominator is floored at
// h so near-zero gradients are compared absolutely at the step scale.
template <typename LossFn>
GradCheckResult finite_diff_check(const std::vector<Param*>& params, LossFn&& loss_fn,
                                  double h = 1e-4) {
    GradCheckResult res;
    for (Param* p : params) {
        for (std::size_t i = 0; i < p->w.v.size(); ++i) {
            const double saved = p->w.v[i];
            p->w.v[i] = saved + h;
            const double lp = loss_fn();
            p->w.v[i] = saved - h;
            const double lm = loss_fn();
            p->w.v[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = p->g.v[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), h});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p->name;
                res.worst_index = i;
                res.analytic = analytic;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

} // namespace msgblocks
