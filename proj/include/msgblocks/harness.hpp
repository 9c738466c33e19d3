#pragma once

// Experiment harness: the ten comparison methods, shared preprocessing,
// evaluation metrics, checkpointing and results reporting.
//
// Method grid:
//   1  frozen encoder                  + dense head
//   2  frozen encoder                  + random forest
//   3  frozen encoder  + metadata concat + dense head
//   4  frozen encoder  + metadata concat + random forest
//   5  fine-tuned encoder              + dense head (the encoder's own)
//   6  fine-tuned encoder              + random forest
//   7  fine-tuned encoder + metadata concat + dense head
//   8  fine-tuned encoder + metadata concat + random forest
//   9  joint two-block training, output averaging
//   10 joint two-block training, weighted concatenation
//
// "Frozen" means seeded random initialization that is never updated; there
// are no pretrained weights in this project. Methods 6-8 freeze the encoder
// fine-tuned by the method-5 objective before fitting their heads, so head
// training never propagates into the encoder.

#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgblocks/blocks.hpp"
#include "msgblocks/corpus.hpp"
#include "msgblocks/featurizer.hpp"
#include "msgblocks/forest.hpp"
#include "msgblocks/serialize.hpp"

namespace msgblocks {

// -------------------------------------------------------------- method grid

struct MethodSpec {
    enum class Encoder { frozen, finetuned, block };
    enum class Metadata { none, concat, block };
    enum class Head { dense, forest, average_combine, weighted_combine };

    int id = 0;
    Encoder encoder = Encoder::frozen;
    Metadata metadata = Metadata::none;
    Head head = Head::dense;

    std::string description() const {
        switch (id) {
            case 1: return "frozen encoder + dense head";
            case 2: return "frozen encoder + random forest";
            case 3: return "frozen encoder + metadata concat + dense head";
            case 4: return "frozen encoder + metadata concat + random forest";
            case 5: return "fine-tuned encoder + dense head";
            case 6: return "fine-tuned encoder + random forest";
            case 7: return "fine-tuned encoder + metadata concat + dense head";
            case 8: return "fine-tuned encoder + metadata concat + random forest";
            case 9: return "joint blocks + output averaging";
            case 10: return "joint blocks + weighted concatenation";
        }
        return "unknown";
    }
};

inline const std::array<MethodSpec, 10>& method_grid() {
    using E = MethodSpec::Encoder;
    using M = MethodSpec::Metadata;
    using H = MethodSpec::Head;
    static const std::array<MethodSpec, 10> grid = {{
        {1, E::frozen, M::none, H::dense},
        {2, E::frozen, M::none, H::forest},
        {3, E::frozen, M::concat, H::dense},
        {4, E::frozen, M::concat, H::forest},
        {5, E::finetuned, M::none, H::dense},
        {6, E::finetuned, M::none, H::forest},
        {7, E::finetuned, M::concat, H::dense},
        {8, E::finetuned, M::concat, H::forest},
        {9, E::block, M::block, H::average_combine},
        {10, E::block, M::block, H::weighted_combine},
    }};
    return grid;
}

inline const MethodSpec& method_spec(int id) {
    if (id < 1 || id > 10) throw std::invalid_argument("method id must be in 1..10");
    return method_grid()[static_cast<std::size_t>(id - 1)];
}

// --------------------------------------------------------------- evaluation

struct Evaluation {
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
    std::vector<double> precision, recall;
};

inline Evaluation evaluate(const std::vector<std::size_t>& predictions,
                           const std::vector<std::size_t>& gold, std::size_t n_classes) {
    if (predictions.size() != gold.size()) {
        throw std::invalid_argument("evaluate: predictions and gold differ in length");
    }
    Evaluation ev;
    ev.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++ev.confusion[gold[i]][predictions[i]];
        if (predictions[i] == gold[i]) ++correct;
    }
    ev.accuracy = gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
    ev.precision.assign(n_classes, 0.0);
    ev.recall.assign(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t col = 0, row = 0;
        for (std::size_t g = 0; g < n_classes; ++g) {
            col += ev.confusion[g][c];
            row += ev.confusion[c][g];
        }
        if (col > 0) ev.precision[c] = static_cast<double>(ev.confusion[c][c]) / static_cast<double>(col);
        if (row > 0) ev.recall[c] = static_cast<double>(ev.confusion[c][c]) / static_cast<double>(row);
    }
    return ev;
}

// ------------------------------------------------------------ configuration

struct DataPlan {
    std::size_t per_class_cap = 0;     // 0 disables preparation
    std::size_t keep_n_longest = 0;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
};

struct RunConfig {
    TextBlockConfig text;
    std::size_t vocab_size = 8000;
    std::size_t combine_hidden = 0;
    FeaturizerConfig featurizer;
    TrainHyper train;
    ForestParams forest;
    DataPlan data;
    std::uint64_t seed = 0;

    std::string echo() const {
        nlohmann::json j;
        j["text"] = {{"d_model", text.d_model}, {"n_heads", text.n_heads},
                     {"n_layers", text.n_layers}, {"d_ff", text.d_ff}, {"t_max", text.t_max}};
        j["vocab_size"] = vocab_size;
        j["combine_hidden"] = combine_hidden;
        j["train"] = {{"epochs", train.epochs}, {"batch", train.batch}, {"lr", train.lr},
                      {"optimizer", train.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                      {"clip_norm", train.clip_norm}};
        j["forest"] = {{"n_trees", forest.n_trees}, {"max_depth", forest.max_depth},
                       {"min_samples_leaf", forest.min_samples_leaf},
                       {"bootstrap", forest.bootstrap},
                       {"features_per_split",
                        forest.features_per_split == ForestParams::FeatureRule::all ? "all" : "sqrt"}};
        j["featurizer"] = {{"top_senders", featurizer.top_senders},
                           {"top_affiliations", featurizer.top_affiliations},
                           {"rush_bins", featurizer.rush_bins}};
        j["seed"] = seed;
        return j.dump();
    }
};

// fixed tags for deriving per-stage seeds from the base seed
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace seed_tag {
constexpr std::uint64_t frozen_init = 1;
constexpr std::uint64_t finetune = 2;
constexpr std::uint64_t joint_init = 5;
constexpr std::uint64_t joint_train = 6;
constexpr std::uint64_t data_split = 7;
constexpr std::uint64_t head_base = 300;
constexpr std::uint64_t forest_base = 400;
} // namespace seed_tag

inline Splits make_splits(const Dataset& raw, const DataPlan& plan, std::uint64_t base_seed) {
    const Dataset* src = &raw;
    Dataset prepared;
    if (plan.per_class_cap > 0) {
        prepared = prepare_subset(raw, plan.per_class_cap, plan.keep_n_longest);
        src = &prepared;
    }
    SplitSpec spec;
    spec.train_fraction = plan.train_fraction;
    spec.val_fraction = plan.val_fraction;
    spec.test_fraction = plan.test_fraction;
    spec.seed = derive_seed(base_seed, seed_tag::data_split);
    return split(*src, spec);
}

// ----------------------------------------------------------- shared context

// Preprocessing state shared by every method of one comparison run:
// one featurizer, one vocabulary, one frozen encoder snapshot, one
// fine-tuned encoder (trained on demand by the first method that needs it).
class ExperimentContext {
public:
    const Splits& splits;
    RunConfig cfg;
    FeaturizerModel featurizer;
    Vocab vocab;
    TextBlock frozen;

    ExperimentContext(const Splits& s, const RunConfig& config)
        : splits(s),
          cfg(config),
          featurizer(FeaturizerModel::fit(s.train, config.featurizer)),
          vocab(build_vocab(s.train, config.vocab_size)),
          frozen(config.text, vocab.size(), s.train.label_set.size()) {
        Rng rng(derive_seed(cfg.seed, seed_tag::frozen_init));
        frozen.init(rng);
        for (int part = 0; part < 3; ++part) {
            const Dataset& ds = dataset(part);
            auto& f = feats_[part];
            auto& y = labels_[part];
            for (const auto& m : ds.messages) {
                f.push_back(featurizer.transform(m).values);
                y.push_back(ds.label_index(m.label));
            }
        }
    }

    const Dataset& dataset(int part) const {
        return part == 0 ? splits.train : part == 1 ? splits.val : splits.test;
    }

    const std::vector<std::vector<double>>& features(int part) const { return feats_[part]; }
    const std::vector<std::size_t>& labels(int part) const { return labels_[part]; }

    const TextBlock& finetuned_block() {
        if (!finetuned_) {
            finetuned_ = frozen;  // same initialization, then trained
            TrainHyper hyper = cfg.train;
            hyper.seed = derive_seed(cfg.seed, seed_tag::finetune);
            finetune_history_ = train_text_block(*finetuned_, vocab, splits.train, splits.val, hyper);
        }
        return *finetuned_;
    }

    const TrainHistory& finetune_history() const { return finetune_history_; }

    const std::vector<std::vector<double>>& embeddings(bool use_finetuned, int part) {
        auto& slot = use_finetuned ? finetuned_emb_[part] : frozen_emb_[part];
        if (!slot) {
            const TextBlock& enc = use_finetuned ? finetuned_block() : frozen;
            std::vector<std::vector<double>> out;
            for (const auto& m : dataset(part).messages) {
                out.push_back(enc.pooled(tokenize(vocab, m.text, cfg.text.t_max)));
            }
            slot = std::move(out);
        }
        return *slot;
    }

private:
    std::array<std::vector<std::vector<double>>, 3> feats_;
    std::array<std::vector<std::size_t>, 3> labels_;
    std::optional<TextBlock> finetuned_;
    TrainHistory finetune_history_;
    std::array<std::optional<std::vector<std::vector<double>>>, 3> frozen_emb_, finetuned_emb_;
};

// -------------------------------------------------------------- method model

// A trained method ready for inference and checkpointing.
struct MethodModel {
    MethodSpec spec;
    RunConfig cfg;
    std::vector<std::string> classes;
    Vocab vocab;
    FeaturizerModel featurizer;
    std::string dataset_name;

    std::optional<MessageClassifier> joint;  // methods 9, 10
    std::optional<TextBlock> encoder;        // methods 1-8
    std::optional<DenseLayer> head;          // methods 1, 3, 7
    std::optional<Forest> forest;            // methods 2, 4, 6, 8

    std::vector<double> pipeline_features(const Message& m) const {
        std::vector<double> x = encoder->pooled(tokenize(vocab, m.text, cfg.text.t_max));
        if (spec.metadata == MethodSpec::Metadata::concat) {
            const FeatureVector fv = featurizer.transform(m);
            x.insert(x.end(), fv.values.begin(), fv.values.end());
        }
        return x;
    }

    // (class index, probability/vote vector)
    std::pair<std::size_t, std::vector<double>> predict(const Message& m) const {
        if (joint) return joint->predict(m);
        if (spec.id == 5) {
            const auto logits = encoder->forward(tokenize(vocab, m.text, cfg.text.t_max));
            const auto probs = softmax(logits);
            std::size_t best = 0;
            for (std::size_t i = 1; i < probs.size(); ++i)
                if (probs[i] > probs[best]) best = i;
            return {best, probs};
        }
        const std::vector<double> x = pipeline_features(m);
        if (forest) return predict_forest(*forest, x);
        const auto probs = softmax(dense_forward(*head, x));
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[best]) best = i;
        return {best, probs};
    }
};

// ---------------------------------------------------------------- run_method

struct RunResult {
    int method_id = 0;
    std::string description;
    std::string dataset_name;
    double test_accuracy = 0.0;
    std::vector<double> precision, recall;
    Evaluation evaluation;
    std::string config_echo;
    std::uint64_t seed = 0;
    double wall_clock_s = 0.0;
};

struct RunOutput {
    RunResult result;
    MethodModel model;
    TrainHistory history;
};

namespace detail {

inline std::vector<std::vector<double>> concat_features(
    const std::vector<std::vector<double>>& emb, const std::vector<std::vector<double>>& meta) {
    std::vector<std::vector<double>> out(emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i) {
        out[i] = emb[i];
        out[i].insert(out[i].end(), meta[i].begin(), meta[i].end());
    }
    return out;
}

inline std::size_t argmax(const std::vector<double>& xs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (xs[i] > xs[best]) best = i;
    return best;
}

} // namespace detail

inline RunOutput run_method(const MethodSpec& spec, ExperimentContext& ctx,
                            const std::string& dataset_name) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_classes = ctx.splits.train.label_set.size();
    const RunConfig& cfg = ctx.cfg;

    MethodModel model;
    model.spec = spec;
    model.cfg = cfg;
    model.classes = ctx.splits.train.label_set;
    model.vocab = ctx.vocab;
    model.featurizer = ctx.featurizer;
    model.dataset_name = dataset_name;

    TrainHistory history;
    std::vector<std::size_t> test_pred;

    if (spec.encoder == MethodSpec::Encoder::block) {
        ClassifierConfig ccfg;
        ccfg.text = cfg.text;
        ccfg.vocab_size = cfg.vocab_size;
        ccfg.combine = spec.head == MethodSpec::Head::average_combine ? CombineKind::average
                                                                      : CombineKind::weighted_concat;
        ccfg.combine_hidden = cfg.combine_hidden;

        MessageClassifier clf;
        clf.cfg = ccfg;
        clf.classes = model.classes;
        clf.vocab = ctx.vocab;
        clf.featurizer = ctx.featurizer;
        clf.text_block = TextBlock(ccfg.text, ctx.vocab.size(), n_classes);
        clf.meta_block = MetaBlock(ctx.featurizer.feature_dim(), n_classes);
        clf.combine_strategy = Combine(ccfg.combine, n_classes, 2, ccfg.combine_hidden);
        Rng rng(derive_seed(cfg.seed, seed_tag::joint_init));
        clf.text_block.init(rng);
        clf.meta_block.init(rng);
        clf.combine_strategy.init(rng);

        TrainHyper hyper = cfg.train;
        hyper.seed = derive_seed(cfg.seed, seed_tag::joint_train);
        history = train(clf, ctx.splits.train, ctx.splits.val, hyper);

        for (const auto& m : ctx.splits.test.messages) test_pred.push_back(clf.predict(m).first);
        model.joint = std::move(clf);
    } else {
        const bool finetune = spec.encoder == MethodSpec::Encoder::finetuned;
        if (finetune) {
            model.encoder = ctx.finetuned_block();
            history = ctx.finetune_history();
        } else {
            model.encoder = ctx.frozen;
        }

        if (spec.id == 5) {
            for (const auto& m : ctx.splits.test.messages) {
                const auto logits = model.encoder->forward(tokenize(ctx.vocab, m.text, cfg.text.t_max));
                test_pred.push_back(detail::argmax(logits));
            }
        } else {
            const bool concat = spec.metadata == MethodSpec::Metadata::concat;
            std::array<std::vector<std::vector<double>>, 3> x;
            for (int part = 0; part < 3; ++part) {
                x[part] = ctx.embeddings(finetune, part);
                if (concat) x[part] = detail::concat_features(x[part], ctx.features(part));
            }

            if (spec.head == MethodSpec::Head::dense) {
                DenseLayer head("method" + std::to_string(spec.id) + ".head", n_classes,
                                x[0][0].size(), Activation::none);
                Rng rng(derive_seed(cfg.seed, seed_tag::head_base + static_cast<std::uint64_t>(spec.id)));
                head.init(rng);
                TrainHyper hyper = cfg.train;
                hyper.seed = derive_seed(cfg.seed, seed_tag::head_base + 100 + static_cast<std::uint64_t>(spec.id));
                history = train_dense_head(head, x[0], ctx.labels(0), x[1], ctx.labels(1), hyper);
                for (const auto& xi : x[2]) test_pred.push_back(detail::argmax(dense_forward(head, xi)));
                model.head = std::move(head);
            } else {
                ForestParams fp = cfg.forest;
                fp.seed = derive_seed(cfg.seed, seed_tag::forest_base + static_cast<std::uint64_t>(spec.id));
                Forest forest = fit_forest(x[0], ctx.labels(0), fp, n_classes);
                for (const auto& xi : x[2]) test_pred.push_back(predict_forest(forest, xi).first);
                model.forest = std::move(forest);
            }
        }
    }

    RunResult res;
    res.method_id = spec.id;
    res.description = spec.description();
    res.dataset_name = dataset_name;
    res.evaluation = evaluate(test_pred, ctx.labels(2), n_classes);
    res.test_accuracy = res.evaluation.accuracy;
    res.precision = res.evaluation.precision;
    res.recall = res.evaluation.recall;
    res.config_echo = cfg.echo();
    res.seed = cfg.seed;
    res.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(res), std::move(model), std::move(history)};
}

inline std::vector<RunResult> compare_all(const Splits& splits, const RunConfig& cfg,
                                          const std::string& dataset_name,
                                          std::vector<MethodModel>* models_out = nullptr) {
    ExperimentContext ctx(splits, cfg);
    std::vector<RunResult> results;
    for (const auto& spec : method_grid()) {
        RunOutput out = run_method(spec, ctx, dataset_name);
        results.push_back(std::move(out.result));
        if (models_out) models_out->push_back(std::move(out.model));
    }
    return results;
}

// ---------------------------------------------------------------- reporting

// Published accuracies for the four corpora the original experiments used.
// These depend on pretrained weights and corpora not shipped here; they are
// context for reading local numbers, never pass/fail targets.
inline const std::map<std::string, std::array<double, 10>>& reference_accuracy() {
    static const std::map<std::string, std::array<double, 10>> table = {
        {"amazon", {0.66, 0.61, 0.65, 0.61, 0.74, 0.73, 0.71, 0.73, 0.70, 0.77}},
        {"yelp", {0.29, 0.22, 0.24, 0.22, 0.39, 0.38, 0.38, 0.39, 0.30, 0.40}},
        {"reddit", {0.56, 0.52, 0.46, 0.50, 0.61, 0.60, 0.62, 0.60, 0.62, 0.62}},
        {"enron", {0.49, 0.49, 0.48, 0.50, 0.47, 0.47, 0.47, 0.47, 0.47, 0.53}},
    };
    return table;
}

inline std::string format_results_table(const std::vector<RunResult>& results,
                                        const std::string& dataset_name,
                                        const std::optional<std::string>& reference = std::nullopt) {
    double best = -1.0;
    for (const auto& r : results) best = std::max(best, r.test_accuracy);

    const std::array<double, 10>* ref = nullptr;
    if (reference) {
        const auto it = reference_accuracy().find(*reference);
        if (it == reference_accuracy().end()) {
            throw std::invalid_argument("unknown reference dataset: " + *reference);
        }
        ref = &it->second;
    }

    std::ostringstream os;
    os << std::left << std::setw(9) << "Method#" << "| " << std::setw(24) << dataset_name;
    if (ref) os << "| reference:" << *reference << " (not a target)";
    os << "\n" << std::string(9, '-') << "+" << std::string(25, '-');
    if (ref) os << "+" << std::string(30, '-');
    os << "\n";
    for (const auto& r : results) {
        std::ostringstream acc;
        acc << std::fixed << std::setprecision(4) << r.test_accuracy;
        if (r.test_accuracy == best) acc << " *";
        os << std::left << std::setw(9) << r.method_id << "| " << std::setw(24) << acc.str();
        if (ref) {
            os << "| " << std::fixed << std::setprecision(2)
               << (*ref)[static_cast<std::size_t>(r.method_id - 1)];
        }
        os << "\n";
    }
    return os.str();
}

inline void write_results_csv(const std::vector<RunResult>& results, const std::string& path,
                              const std::optional<std::string>& reference = std::nullopt) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);

    const std::array<double, 10>* ref = nullptr;
    if (reference) {
        const auto it = reference_accuracy().find(*reference);
        if (it == reference_accuracy().end()) {
            throw std::invalid_argument("unknown reference dataset: " + *reference);
        }
        ref = &it->second;
    }

    out << "method_id,description,dataset,test_accuracy,seed,wall_clock_s,"
           "per_class_precision,per_class_recall";
    if (ref) out << ",reference_accuracy_not_a_target";
    out << "\n";
    out << std::setprecision(17);
    for (const auto& r : results) {
        const auto join = [](const std::vector<double>& xs) {
            std::ostringstream os;
            os << std::setprecision(6);
            for (std::size_t i = 0; i < xs.size(); ++i) {
                if (i) os << ';';
                os << xs[i];
            }
            return os.str();
        };
        out << r.method_id << ",\"" << r.description << "\"," << r.dataset_name << ","
            << r.test_accuracy << "," << r.seed << "," << std::setprecision(3) << r.wall_clock_s
            << std::setprecision(17) << "," << join(r.precision) << "," << join(r.recall);
        if (ref) out << "," << (*ref)[static_cast<std::size_t>(r.method_id - 1)];
        out << "\n";
    }
}

// -------------------------------------------------------------- checkpoints

namespace detail {

inline void write_params(BinaryWriter& w, const std::vector<Param*>& params) {
    w.u64(params.size());
    for (const Param* p : params) {
        w.str(p->name);
        w.mat(p->w);
    }
}

inline void read_params(BinaryReader& r, const std::vector<Param*>& params) {
    const std::uint64_t n = r.u64();
    if (n != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (Param* p : params) {
        const std::string name = r.str();
        if (name != p->name) {
            throw std::runtime_error("checkpoint: expected parameter '" + p->name + "', found '" +
                                     name + "'");
        }
        Mat m = r.mat();
        if (!m.same_shape(p->w)) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "'");
        }
        p->w = std::move(m);
    }
}

inline void write_forest(BinaryWriter& w, const Forest& f) {
    w.u64(f.n_classes);
    w.u64(f.n_features);
    w.u64(f.params.n_trees);
    w.u64(f.params.max_depth);
    w.u64(f.params.min_samples_leaf);
    w.u8(f.params.bootstrap ? 1 : 0);
    w.u8(f.params.features_per_split == ForestParams::FeatureRule::all ? 1 : 0);
    w.u64(f.params.seed);
    w.u64(f.trees.size());
    for (const auto& t : f.trees) {
        w.u64(t.nodes.size());
        for (const auto& n : t.nodes) {
            w.u32(static_cast<std::uint32_t>(n.feature));
            w.f64(n.threshold);
            w.u32(static_cast<std::uint32_t>(n.left));
            w.u32(static_cast<std::uint32_t>(n.right));
            w.u32(static_cast<std::uint32_t>(n.leaf_class));
            w.u64(n.class_counts.size());
            for (std::size_t c : n.class_counts) w.u64(c);
        }
    }
}

inline Forest read_forest(BinaryReader& r) {
    Forest f;
    f.n_classes = r.u64();
    f.n_features = r.u64();
    f.params.n_trees = r.u64();
    f.params.max_depth = r.u64();
    f.params.min_samples_leaf = r.u64();
    f.params.bootstrap = r.u8() != 0;
    f.params.features_per_split =
        r.u8() != 0 ? ForestParams::FeatureRule::all : ForestParams::FeatureRule::sqrt_rule;
    f.params.seed = r.u64();
    const std::uint64_t n_trees = r.u64();
    for (std::uint64_t t = 0; t < n_trees; ++t) {
        Tree tree;
        const std::uint64_t n_nodes = r.u64();
        for (std::uint64_t i = 0; i < n_nodes; ++i) {
            TreeNode n;
            n.feature = static_cast<int>(r.u32());
            n.threshold = r.f64();
            n.left = static_cast<int>(r.u32());
            n.right = static_cast<int>(r.u32());
            n.leaf_class = static_cast<int>(r.u32());
            const std::uint64_t nc = r.u64();
            for (std::uint64_t c = 0; c < nc; ++c) n.class_counts.push_back(r.u64());
            tree.nodes.push_back(std::move(n));
        }
        f.trees.push_back(std::move(tree));
    }
    return f;
}

} // namespace detail

inline void save_checkpoint(const MethodModel& model, const std::string& path) {
    BinaryWriter w(path);
    w.u32(0x4d424350);  // "MBCP"
    w.u32(1);

    nlohmann::json meta;
    meta["method_id"] = model.spec.id;
    meta["classes"] = model.classes;
    meta["dataset"] = model.dataset_name;
    meta["seed"] = model.cfg.seed;
    meta["text"] = {{"d_model", model.cfg.text.d_model}, {"n_heads", model.cfg.text.n_heads},
                    {"n_layers", model.cfg.text.n_layers}, {"d_ff", model.cfg.text.d_ff},
                    {"t_max", model.cfg.text.t_max}};
    meta["vocab_size"] = model.cfg.vocab_size;
    meta["combine_hidden"] = model.cfg.combine_hidden;
    meta["train"] = {{"epochs", model.cfg.train.epochs}, {"batch", model.cfg.train.batch},
                     {"lr", model.cfg.train.lr},
                     {"optimizer", model.cfg.train.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                     {"clip_norm", model.cfg.train.clip_norm}};
    meta["forest"] = {{"n_trees", model.cfg.forest.n_trees},
                      {"max_depth", model.cfg.forest.max_depth},
                      {"min_samples_leaf", model.cfg.forest.min_samples_leaf},
                      {"bootstrap", model.cfg.forest.bootstrap},
                      {"features_per_split",
                       model.cfg.forest.features_per_split == ForestParams::FeatureRule::all
                           ? "all" : "sqrt"}};
    meta["data"] = {{"per_class_cap", model.cfg.data.per_class_cap},
                    {"keep_n_longest", model.cfg.data.keep_n_longest},
                    {"train_fraction", model.cfg.data.train_fraction},
                    {"val_fraction", model.cfg.data.val_fraction},
                    {"test_fraction", model.cfg.data.test_fraction}};
    w.str(meta.dump());

    w.u64(model.vocab.tokens.size());
    for (const auto& t : model.vocab.tokens) w.str(t);
    w.str(model.featurizer.to_json().dump());

    w.u8(model.joint ? 1 : 0);
    w.u8(model.encoder ? 1 : 0);
    w.u8(model.head ? 1 : 0);
    w.u8(model.forest ? 1 : 0);

    std::vector<Param*> params;
    if (model.joint) {
        auto& joint = const_cast<MessageClassifier&>(*model.joint);
        params = joint.parameters();
        detail::write_params(w, params);
    }
    if (model.encoder) {
        auto& enc = const_cast<TextBlock&>(*model.encoder);
        params.clear();
        enc.collect(params);
        detail::write_params(w, params);
    }
    if (model.head) {
        auto& head = const_cast<DenseLayer&>(*model.head);
        params.clear();
        head.collect(params);
        detail::write_params(w, params);
    }
    if (model.forest) detail::write_forest(w, *model.forest);
    w.finish();
}

inline MethodModel load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    if (r.u32() != 0x4d424350) throw std::runtime_error("not a checkpoint file: " + path);
    if (r.u32() != 1) throw std::runtime_error("unsupported checkpoint version");

    const nlohmann::json meta = nlohmann::json::parse(r.str());
    MethodModel model;
    model.spec = method_spec(meta.at("method_id").get<int>());
    model.classes = meta.at("classes").get<std::vector<std::string>>();
    model.dataset_name = meta.at("dataset").get<std::string>();
    model.cfg.seed = meta.at("seed").get<std::uint64_t>();
    const auto& t = meta.at("text");
    model.cfg.text.d_model = t.at("d_model").get<std::size_t>();
    model.cfg.text.n_heads = t.at("n_heads").get<std::size_t>();
    model.cfg.text.n_layers = t.at("n_layers").get<std::size_t>();
    model.cfg.text.d_ff = t.at("d_ff").get<std::size_t>();
    model.cfg.text.t_max = t.at("t_max").get<std::size_t>();
    model.cfg.vocab_size = meta.at("vocab_size").get<std::size_t>();
    model.cfg.combine_hidden = meta.at("combine_hidden").get<std::size_t>();
    const auto& tr = meta.at("train");
    model.cfg.train.epochs = tr.at("epochs").get<std::size_t>();
    model.cfg.train.batch = tr.at("batch").get<std::size_t>();
    model.cfg.train.lr = tr.at("lr").get<double>();
    model.cfg.train.optimizer =
        tr.at("optimizer").get<std::string>() == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    model.cfg.train.clip_norm = tr.at("clip_norm").get<double>();
    const auto& fo = meta.at("forest");
    model.cfg.forest.n_trees = fo.at("n_trees").get<std::size_t>();
    model.cfg.forest.max_depth = fo.at("max_depth").get<std::size_t>();
    model.cfg.forest.min_samples_leaf = fo.at("min_samples_leaf").get<std::size_t>();
    model.cfg.forest.bootstrap = fo.at("bootstrap").get<bool>();
    model.cfg.forest.features_per_split = fo.at("features_per_split").get<std::string>() == "all"
                                              ? ForestParams::FeatureRule::all
                                              : ForestParams::FeatureRule::sqrt_rule;
    const auto& da = meta.at("data");
    model.cfg.data.per_class_cap = da.at("per_class_cap").get<std::size_t>();
    model.cfg.data.keep_n_longest = da.at("keep_n_longest").get<std::size_t>();
    model.cfg.data.train_fraction = da.at("train_fraction").get<double>();
    model.cfg.data.val_fraction = da.at("val_fraction").get<double>();
    model.cfg.data.test_fraction = da.at("test_fraction").get<double>();

    const std::uint64_t n_tokens = r.u64();
    model.vocab.tokens.clear();
    for (std::uint64_t i = 0; i < n_tokens; ++i) model.vocab.tokens.push_back(r.str());
    for (std::size_t i = 0; i < model.vocab.tokens.size(); ++i)
        model.vocab.index[model.vocab.tokens[i]] = static_cast<int>(i);
    model.featurizer = FeaturizerModel::from_json(nlohmann::json::parse(r.str()));

    const bool has_joint = r.u8() != 0;
    const bool has_encoder = r.u8() != 0;
    const bool has_head = r.u8() != 0;
    const bool has_forest = r.u8() != 0;

    const std::size_t n_classes = model.classes.size();
    if (has_joint) {
        MessageClassifier clf;
        clf.cfg.text = model.cfg.text;
        clf.cfg.vocab_size = model.cfg.vocab_size;
        clf.cfg.combine = model.spec.head == MethodSpec::Head::average_combine
                              ? CombineKind::average
                              : CombineKind::weighted_concat;
        clf.cfg.combine_hidden = model.cfg.combine_hidden;
        clf.classes = model.classes;
        clf.vocab = model.vocab;
        clf.featurizer = model.featurizer;
        clf.text_block = TextBlock(model.cfg.text, model.vocab.size(), n_classes);
        clf.meta_block = MetaBlock(model.featurizer.feature_dim(), n_classes);
        clf.combine_strategy = Combine(clf.cfg.combine, n_classes, 2, model.cfg.combine_hidden);
        detail::read_params(r, clf.parameters());
        model.joint = std::move(clf);
    }
    if (has_encoder) {
        TextBlock enc(model.cfg.text, model.vocab.size(), n_classes);
        std::vector<Param*> params;
        enc.collect(params);
        detail::read_params(r, params);
        model.encoder = std::move(enc);
    }
    if (has_head) {
        // width depends on concat mode; reconstruct from stored shapes
        const std::size_t emb = model.cfg.text.d_model;
        const std::size_t width = model.spec.metadata == MethodSpec::Metadata::concat
                                      ? emb + model.featurizer.feature_dim()
                                      : emb;
        DenseLayer head("method" + std::to_string(model.spec.id) + ".head", n_classes, width,
                        Activation::none);
        std::vector<Param*> params;
        head.collect(params);
        detail::read_params(r, params);
        model.head = std::move(head);
    }
    if (has_forest) model.forest = detail::read_forest(r);
    return model;
}

} // namespace msgblocks
