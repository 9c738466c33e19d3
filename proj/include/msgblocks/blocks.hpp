#pragma once

// The block architecture: a trainable text-encoder block and a meta-data
// block whose outputs are combined (average or concat + trained head) into
// class logits, all parameters updated together in one optimizer loop.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msgblocks/corpus.hpp"
#include "msgblocks/featurizer.hpp"
#include "msgblocks/nn.hpp"
#include "msgblocks/vocab.hpp"

namespace msgblocks {

// ----------------------------------------------------------------- text block

struct TextBlockConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 0;  // 0 -> 4 * d_model
    std::size_t t_max = 64;

    std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d_model; }
};

struct TextBlockCache {
    TokenizedText toks;
    std::vector<AttentionCache> layers;
    Mat last;  // output of final encoder layer, t_max x d_model
    DenseCache head;
    bool valid = false;
};

struct TextBlock {
    TextBlockConfig cfg;
    std::size_t n_classes = 0;
    Param embedding;   // V x d_model
    Param positional;  // t_max x d_model
    std::vector<AttentionLayer> layers;
    DenseLayer head;   // n_classes x d_model

    TextBlock() = default;

    TextBlock(const TextBlockConfig& c, std::size_t vocab_size, std::size_t classes)
        : cfg(c),
          n_classes(classes),
          embedding("text.emb", vocab_size, c.d_model),
          positional("text.pos", c.t_max, c.d_model),
          head("text.head", classes, c.d_model, Activation::none) {
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            layers.emplace_back("text.enc" + std::to_string(l), c.d_model, c.n_heads, c.ff_dim());
        }
    }

    void init(Rng& rng) {
        for (double& x : embedding.w.v) x = rng.normal(0.0, 0.1);
        for (double& x : positional.w.v) x = rng.normal(0.0, 0.1);
        for (auto& l : layers) l.init(rng);
        head.init(rng);
    }

    Mat encode(const TokenizedText& toks, TextBlockCache* cache = nullptr) const {
        if (toks.ids.size() != cfg.t_max) {
            throw std::invalid_argument("text block: sequence length " +
                                        std::to_string(toks.ids.size()) + " != t_max " +
                                        std::to_string(cfg.t_max));
        }
        Mat x(cfg.t_max, cfg.d_model);
        for (std::size_t p = 0; p < cfg.t_max; ++p) {
            const std::size_t tok = static_cast<std::size_t>(toks.ids[p]);
            if (tok >= embedding.w.rows) throw std::invalid_argument("text block: token id out of range");
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                x.at(p, j) = embedding.w.at(tok, j) + positional.w.at(p, j);
            }
        }
        if (cache) {
            cache->toks = toks;
            cache->layers.resize(layers.size());
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
            x = layers[l].forward(x, toks.pad, cache ? &cache->layers[l] : nullptr);
        }
        if (cache) {
            cache->last = x;
            cache->valid = true;
        }
        return x;
    }

    // pooled CLS vector, the block's embedding of the message
    std::vector<double> pooled(const TokenizedText& toks) const {
        const Mat enc = encode(toks);
        return std::vector<double>(enc.v.begin(), enc.v.begin() + cfg.d_model);
    }

    std::vector<double> forward(const TokenizedText& toks, TextBlockCache* cache = nullptr) const {
        const Mat enc = encode(toks, cache);
        Mat cls(1, cfg.d_model);
        std::copy(enc.v.begin(), enc.v.begin() + cfg.d_model, cls.v.begin());
        const Mat logits = head.forward(cls, cache ? &cache->head : nullptr);
        return logits.v;
    }

    void backward(const std::vector<double>& dlogits, const TextBlockCache& cache) {
        if (!cache.valid) throw std::logic_error("text block: backward before forward");
        Mat dl(1, n_classes);
        dl.v = dlogits;
        const Mat dcls = head.backward(dl, cache.head);

        Mat dx(cfg.t_max, cfg.d_model);
        std::copy(dcls.v.begin(), dcls.v.end(), dx.v.begin());  // gradient enters at CLS row
        for (std::size_t l = layers.size(); l-- > 0;) {
            dx = layers[l].backward(dx, cache.layers[l]);
        }
        for (std::size_t p = 0; p < cfg.t_max; ++p) {
            const std::size_t tok = static_cast<std::size_t>(cache.toks.ids[p]);
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                embedding.g.at(tok, j) += dx.at(p, j);
                positional.g.at(p, j) += dx.at(p, j);
            }
        }
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&embedding);
        out.push_back(&positional);
        for (auto& l : layers) l.collect(out);
        head.collect(out);
    }
};

inline std::vector<double> text_block_forward(const TextBlock& block, const TokenizedText& toks) {
    return block.forward(toks);
}

// ----------------------------------------------------------------- meta block

struct MetaBlockCache {
    DenseCache c1, c2;
};

// Two fully-connected layers, both ReLU: feature_dim -> feature_dim -> C.
struct MetaBlock {
    DenseLayer layer1;
    DenseLayer layer2;

    MetaBlock() = default;

    MetaBlock(std::size_t feature_dim, std::size_t n_classes)
        : layer1("meta.fc1", feature_dim, feature_dim, Activation::relu),
          layer2("meta.fc2", n_classes, feature_dim, Activation::relu) {}

    void init(Rng& rng) {
        layer1.init(rng);
        layer2.init(rng);
    }

    std::vector<double> forward(const std::vector<double>& v, MetaBlockCache* cache = nullptr) const {
        Mat x(1, v.size());
        x.v = v;
        const Mat h = layer1.forward(x, cache ? &cache->c1 : nullptr);
        const Mat y = layer2.forward(h, cache ? &cache->c2 : nullptr);
        return y.v;
    }

    void backward(const std::vector<double>& dout, const MetaBlockCache& cache) {
        Mat d(1, dout.size());
        d.v = dout;
        layer1.backward(layer2.backward(d, cache.c2), cache.c1);
    }

    void collect(std::vector<Param*>& out) {
        layer1.collect(out);
        layer2.collect(out);
    }
};

inline std::vector<double> meta_block_forward(const MetaBlock& block, const FeatureVector& v) {
    return block.forward(v.values);
}

// ------------------------------------------------------------------- combine

enum class CombineKind { average, weighted_concat };

struct CombineCache {
    std::size_t n_blocks = 0;
    DenseCache hidden, head;
};

// average: elementwise mean of C-sized block outputs.
// weighted_concat: concatenate block outputs (text block first) and apply a
// trained dense head, optionally through a ReLU hidden layer.
struct Combine {
    CombineKind kind = CombineKind::weighted_concat;
    std::optional<DenseLayer> hidden;  // (hidden_dim x C*n_blocks), relu
    DenseLayer head;                   // C x (C*n_blocks or hidden_dim)

    Combine() = default;

    Combine(CombineKind k, std::size_t n_classes, std::size_t n_blocks, std::size_t hidden_dim = 0)
        : kind(k) {
        if (k == CombineKind::weighted_concat) {
            const std::size_t in = n_classes * n_blocks;
            if (hidden_dim > 0) {
                hidden.emplace("combine.hidden", hidden_dim, in, Activation::relu);
                head = DenseLayer("combine.head", n_classes, hidden_dim, Activation::none);
            } else {
                head = DenseLayer("combine.head", n_classes, in, Activation::none);
            }
        }
    }

    void init(Rng& rng) {
        if (kind != CombineKind::weighted_concat) return;
        if (hidden) hidden->init(rng);
        head.init(rng);
    }

    std::vector<double> forward(const std::vector<std::vector<double>>& outputs,
                                CombineCache* cache = nullptr) const {
        if (outputs.empty()) throw std::invalid_argument("combine: no block outputs");
        const std::size_t c = outputs[0].size();
        for (const auto& o : outputs) {
            if (o.size() != c) {
                throw std::invalid_argument("combine: block output sizes differ (" +
                                            std::to_string(o.size()) + " vs " + std::to_string(c) + ")");
            }
        }
        if (cache) cache->n_blocks = outputs.size();

        if (kind == CombineKind::average) {
            std::vector<double> mean(c, 0.0);
            for (const auto& o : outputs)
                for (std::size_t i = 0; i < c; ++i) mean[i] += o[i];
            for (double& x : mean) x /= static_cast<double>(outputs.size());
            return mean;
        }

        Mat cat(1, c * outputs.size());
        for (std::size_t b = 0; b < outputs.size(); ++b) {
            std::copy(outputs[b].begin(), outputs[b].end(), cat.v.begin() + b * c);
        }
        Mat h = hidden ? hidden->forward(cat, cache ? &cache->hidden : nullptr) : std::move(cat);
        return head.forward(h, cache ? &cache->head : nullptr).v;
    }

    std::vector<std::vector<double>> backward(const std::vector<double>& dlogits,
                                              const CombineCache& cache) {
        const std::size_t c = dlogits.size();
        if (kind == CombineKind::average) {
            std::vector<std::vector<double>> out(cache.n_blocks,
                                                 std::vector<double>(c, 0.0));
            for (std::size_t b = 0; b < cache.n_blocks; ++b)
                for (std::size_t i = 0; i < c; ++i)
                    out[b][i] = dlogits[i] / static_cast<double>(cache.n_blocks);
            return out;
        }
        Mat d(1, c);
        d.v = dlogits;
        Mat dcat = head.backward(d, cache.head);
        if (hidden) dcat = hidden->backward(dcat, cache.hidden);
        std::vector<std::vector<double>> out(cache.n_blocks);
        const std::size_t width = dcat.cols / cache.n_blocks;
        for (std::size_t b = 0; b < cache.n_blocks; ++b) {
            out[b].assign(dcat.v.begin() + b * width, dcat.v.begin() + (b + 1) * width);
        }
        return out;
    }

    void collect(std::vector<Param*>& out) {
        if (kind != CombineKind::weighted_concat) return;
        if (hidden) hidden->collect(out);
        head.collect(out);
    }
};

inline std::vector<double> combine(const std::vector<std::vector<double>>& outputs,
                                   const Combine& strategy) {
    return strategy.forward(outputs);
}

// ---------------------------------------------------------------- classifier

struct ClassifierConfig {
    TextBlockConfig text;
    std::size_t vocab_size = 8000;
    CombineKind combine = CombineKind::weighted_concat;
    std::size_t combine_hidden = 0;
};

struct ClassifierCache {
    TextBlockCache text;
    MetaBlockCache meta;
    CombineCache combine;
};

// The composed two-block model. All trainable parameters are reachable
// through parameters() in a stable order: text block, meta block, combine.
struct MessageClassifier {
    ClassifierConfig cfg;
    std::vector<std::string> classes;
    Vocab vocab;
    FeaturizerModel featurizer;
    TextBlock text_block;
    MetaBlock meta_block;
    Combine combine_strategy;

    static MessageClassifier build(const ClassifierConfig& cfg, const Dataset& train,
                                   const FeaturizerConfig& fcfg, std::uint64_t init_seed) {
        MessageClassifier m;
        m.cfg = cfg;
        m.classes = train.label_set;
        m.vocab = build_vocab(train, cfg.vocab_size);
        m.featurizer = FeaturizerModel::fit(train, fcfg);
        m.text_block = TextBlock(cfg.text, m.vocab.size(), m.classes.size());
        m.meta_block = MetaBlock(m.featurizer.feature_dim(), m.classes.size());
        m.combine_strategy = Combine(cfg.combine, m.classes.size(), 2, cfg.combine_hidden);
        Rng rng(init_seed);
        m.text_block.init(rng);
        m.meta_block.init(rng);
        m.combine_strategy.init(rng);
        return m;
    }

    std::vector<Param*> parameters() {
        std::vector<Param*> out;
        text_block.collect(out);
        meta_block.collect(out);
        combine_strategy.collect(out);
        return out;
    }

    std::vector<double> forward(const TokenizedText& toks, const std::vector<double>& features,
                                ClassifierCache* cache = nullptr) const {
        std::vector<std::vector<double>> outs;
        outs.push_back(text_block.forward(toks, cache ? &cache->text : nullptr));
        outs.push_back(meta_block.forward(features, cache ? &cache->meta : nullptr));
        return combine_strategy.forward(outs, cache ? &cache->combine : nullptr);
    }

    void backward(const std::vector<double>& dlogits, const ClassifierCache& cache) {
        const auto dblocks = combine_strategy.backward(dlogits, cache.combine);
        text_block.backward(dblocks[0], cache.text);
        meta_block.backward(dblocks[1], cache.meta);
    }

    std::vector<double> logits_for(const Message& m) const {
        return forward(tokenize(vocab, m.text, cfg.text.t_max), featurizer.transform(m).values);
    }

    // (class index, softmax probabilities); argmax ties go to the lowest index
    std::pair<std::size_t, std::vector<double>> predict(const Message& m) const {
        const std::vector<double> probs = softmax(logits_for(m));
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[best]) best = i;
        return {best, probs};
    }

    // pooled CLS vector of the text block
    std::vector<double> embed(const Message& m) const {
        return text_block.pooled(tokenize(vocab, m.text, cfg.text.t_max));
    }
};

// ------------------------------------------------------------------ training

struct TrainHyper {
    std::size_t epochs = 10;
    std::size_t batch = 32;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
};

namespace detail {

inline std::vector<Mat> snapshot_params(const std::vector<Param*>& params) {
    std::vector<Mat> snap;
    snap.reserve(params.size());
    for (const Param* p : params) snap.push_back(p->w);
    return snap;
}

inline void restore_params(const std::vector<Param*>& params, const std::vector<Mat>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->w = snap[i];
}

// Shared minibatch loop: shuffles per epoch, averages the loss gradient over
// each batch, clips, steps, and retains the best-validation parameters.
// step_fn(example_index, inv_batch) runs forward+backward for one example
// with the gradient scaled by inv_batch, returning the example loss.
inline TrainHistory run_training_loop(const std::vector<Param*>& params, std::size_t n_train,
                                      const TrainHyper& hyper,
                                      const std::function<double(std::size_t, double)>& step_fn,
                                      const std::function<double()>& val_accuracy_fn) {
    if (n_train == 0) throw std::invalid_argument("train: empty training set");
    if (hyper.batch == 0) throw std::invalid_argument("train: batch size must be positive");

    OptimizerState opt = hyper.optimizer == OptimizerKind::adam
                             ? OptimizerState::adam_with(hyper.lr)
                             : OptimizerState::sgd_with(hyper.lr);
    Rng rng(hyper.seed);
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    TrainHistory hist;
    hist.best_val_accuracy = -1.0;
    std::vector<Mat> best = snapshot_params(params);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += hyper.batch) {
            const std::size_t end = std::min(start + hyper.batch, n_train);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            zero_grads(params);
            for (std::size_t i = start; i < end; ++i) loss_sum += step_fn(order[i], inv_batch);
            clip_global_norm(params, hyper.clip_norm);
            opt.step(params);
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(n_train);
        stats.val_accuracy = val_accuracy_fn();
        hist.epochs.push_back(stats);
        if (stats.val_accuracy > hist.best_val_accuracy) {
            hist.best_val_accuracy = stats.val_accuracy;
            hist.best_epoch = epoch;
            best = snapshot_params(params);
        }
    }
    restore_params(params, best);
    return hist;
}

} // namespace detail

// Joint training: one optimizer loop updating text block, meta block and
// combine head from the shared loss every step.
inline TrainHistory train(MessageClassifier& model, const Dataset& train_ds, const Dataset& val_ds,
                          const TrainHyper& hyper) {
    const std::size_t t_max = model.cfg.text.t_max;

    std::vector<TokenizedText> toks;
    std::vector<std::vector<double>> feats;
    std::vector<std::size_t> labels;
    toks.reserve(train_ds.size());
    for (const auto& m : train_ds.messages) {
        toks.push_back(tokenize(model.vocab, m.text, t_max));
        feats.push_back(model.featurizer.transform(m).values);
        labels.push_back(train_ds.label_index(m.label));
    }
    std::vector<TokenizedText> val_toks;
    std::vector<std::vector<double>> val_feats;
    std::vector<std::size_t> val_labels;
    for (const auto& m : val_ds.messages) {
        val_toks.push_back(tokenize(model.vocab, m.text, t_max));
        val_feats.push_back(model.featurizer.transform(m).values);
        val_labels.push_back(val_ds.label_index(m.label));
    }

    const auto params = model.parameters();
    const auto step_fn = [&](std::size_t i, double inv_batch) {
        ClassifierCache cache;
        const std::vector<double> logits = model.forward(toks[i], feats[i], &cache);
        const std::vector<double> probs = softmax(logits);
        const double loss = cross_entropy(probs, labels[i]);
        std::vector<double> dlogits = probs;
        dlogits[labels[i]] -= 1.0;
        for (double& d : dlogits) d *= inv_batch;
        model.backward(dlogits, cache);
        return loss;
    };
    const auto val_fn = [&]() {
        if (val_labels.empty()) return 0.0;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_labels.size(); ++i) {
            const std::vector<double> logits = model.forward(val_toks[i], val_feats[i]);
            std::size_t best = 0;
            for (std::size_t k = 1; k < logits.size(); ++k)
                if (logits[k] > logits[best]) best = k;
            if (best == val_labels[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(val_labels.size());
    };
    return detail::run_training_loop(params, train_ds.size(), hyper, step_fn, val_fn);
}

// Text-only fine-tuning of a text block and its class head.
inline TrainHistory train_text_block(TextBlock& block, const Vocab& vocab, const Dataset& train_ds,
                                     const Dataset& val_ds, const TrainHyper& hyper) {
    std::vector<TokenizedText> toks;
    std::vector<std::size_t> labels;
    for (const auto& m : train_ds.messages) {
        toks.push_back(tokenize(vocab, m.text, block.cfg.t_max));
        labels.push_back(train_ds.label_index(m.label));
    }
    std::vector<TokenizedText> val_toks;
    std::vector<std::size_t> val_labels;
    for (const auto& m : val_ds.messages) {
        val_toks.push_back(tokenize(vocab, m.text, block.cfg.t_max));
        val_labels.push_back(val_ds.label_index(m.label));
    }

    std::vector<Param*> params;
    block.collect(params);
    const auto step_fn = [&](std::size_t i, double inv_batch) {
        TextBlockCache cache;
        const std::vector<double> logits = block.forward(toks[i], &cache);
        const std::vector<double> probs = softmax(logits);
        const double loss = cross_entropy(probs, labels[i]);
        std::vector<double> dlogits = probs;
        dlogits[labels[i]] -= 1.0;
        for (double& d : dlogits) d *= inv_batch;
        block.backward(dlogits, cache);
        return loss;
    };
    const auto val_fn = [&]() {
        if (val_labels.empty()) return 0.0;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_labels.size(); ++i) {
            const std::vector<double> logits = block.forward(val_toks[i]);
            std::size_t best = 0;
            for (std::size_t k = 1; k < logits.size(); ++k)
                if (logits[k] > logits[best]) best = k;
            if (best == val_labels[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(val_labels.size());
    };
    return detail::run_training_loop(params, train_ds.size(), hyper, step_fn, val_fn);
}

// Softmax classifier (one dense layer) over fixed feature vectors; used by
// the frozen-encoder and concat baselines.
inline TrainHistory train_dense_head(DenseLayer& head, const std::vector<std::vector<double>>& x,
                                     const std::vector<std::size_t>& y,
                                     const std::vector<std::vector<double>>& val_x,
                                     const std::vector<std::size_t>& val_y,
                                     const TrainHyper& hyper) {
    if (x.size() != y.size()) throw std::invalid_argument("train_dense_head: size mismatch");
    std::vector<Param*> params;
    head.collect(params);
    const auto step_fn = [&](std::size_t i, double inv_batch) {
        DenseCache cache;
        Mat in(1, x[i].size());
        in.v = x[i];
        const std::vector<double> probs = softmax(head.forward(in, &cache).v);
        const double loss = cross_entropy(probs, y[i]);
        Mat d(1, probs.size());
        d.v = probs;
        d.v[y[i]] -= 1.0;
        for (double& g : d.v) g *= inv_batch;
        head.backward(d, cache);
        return loss;
    };
    const auto val_fn = [&]() {
        if (val_y.empty()) return 0.0;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_y.size(); ++i) {
            Mat in(1, val_x[i].size());
            in.v = val_x[i];
            const std::vector<double> logits = head.forward(in).v;
            std::size_t best = 0;
            for (std::size_t k = 1; k < logits.size(); ++k)
                if (logits[k] > logits[best]) best = k;
            if (best == val_y[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(val_y.size());
    };
    return detail::run_training_loop(params, x.size(), hyper, step_fn, val_fn);
}

} // namespace msgblocks
