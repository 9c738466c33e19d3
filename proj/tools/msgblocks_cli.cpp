// msgblocks command line: corpus synthesis, featurizer fitting, method
// training, checkpoint evaluation and the ten-method comparison grid.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "msgblocks/config.hpp"
#include "msgblocks/corpus.hpp"
#include "msgblocks/featurizer.hpp"
#include "msgblocks/harness.hpp"

namespace {

using namespace msgblocks;

RunConfig make_config(const std::string& config_path, std::uint64_t seed) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    cfg.seed = seed;
    return cfg;
}

void print_split_sizes(const Splits& splits) {
    std::cout << "splits: train=" << splits.train.size() << " val=" << splits.val.size()
              << " test=" << splits.test.size() << " classes=" << splits.train.label_set.size()
              << "\n";
}

int cmd_synth(const std::string& mode, std::uint64_t seed, const std::string& out,
              std::size_t n_classes, std::size_t n_per_class, double conflict_fraction) {
    SynthSpec spec;
    spec.seed = seed;
    spec.n_classes = n_classes;
    spec.n_per_class = n_per_class;
    spec.conflict_fraction = conflict_fraction;
    if (mode == "metadata_only") spec.mode = SynthMode::metadata_only;
    else if (mode == "conflict") spec.mode = SynthMode::conflict;
    else throw std::runtime_error("unknown synth mode: " + mode);

    const Dataset ds = generate_synthetic(spec);
    save_corpus(ds, out);
    std::cout << "wrote " << ds.size() << " messages (" << ds.label_set.size() << " classes) to "
              << out << "\n";
    return 0;
}

int cmd_featurize(const std::string& corpus, const std::string& out,
                  const std::string& config_path) {
    const RunConfig cfg = make_config(config_path, 0);
    ParseStats stats;
    const Dataset ds = load_corpus(corpus, &stats);
    if (stats.rejected > 0) std::cout << "rejected " << stats.rejected << " records\n";
    const FeaturizerModel model = FeaturizerModel::fit(ds, cfg.featurizer);
    model.save(out);
    std::cout << "fitted featurizer on " << ds.size() << " messages, feature_dim="
              << model.feature_dim() << ", wrote " << out << "\n";
    return 0;
}

int cmd_train(const std::string& corpus, int method, const std::string& config_path,
              std::uint64_t seed, const std::string& out) {
    RunConfig cfg = make_config(config_path, seed);
    ParseStats stats;
    const Dataset ds = load_corpus(corpus, &stats);
    if (stats.rejected > 0) std::cout << "rejected " << stats.rejected << " records\n";
    const Splits splits = make_splits(ds, cfg.data, seed);
    print_split_sizes(splits);

    ExperimentContext ctx(splits, cfg);
    RunOutput run = run_method(method_spec(method), ctx, corpus);
    std::cout << "method " << method << " (" << run.result.description << ")\n"
              << "test accuracy: " << std::fixed << std::setprecision(4)
              << run.result.test_accuracy << "\n";
    if (!run.history.epochs.empty()) {
        std::cout << "best val accuracy: " << run.history.best_val_accuracy << " (epoch "
                  << run.history.best_epoch + 1 << "/" << run.history.epochs.size() << ")\n";
    }
    if (!out.empty()) {
        save_checkpoint(run.model, out);
        std::cout << "wrote checkpoint " << out << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus, const std::string& part) {
    const MethodModel model = load_checkpoint(checkpoint);
    ParseStats stats;
    const Dataset full = load_corpus(corpus, &stats);
    if (stats.rejected > 0) std::cout << "rejected " << stats.rejected << " records\n";

    const Dataset* ds = &full;
    Splits splits;
    if (part != "all") {
        splits = make_splits(full, model.cfg.data, model.cfg.seed);
        if (part == "train") ds = &splits.train;
        else if (part == "val") ds = &splits.val;
        else if (part == "test") ds = &splits.test;
        else throw std::runtime_error("unknown --split value: " + part);
    }

    std::vector<std::size_t> pred, gold;
    for (const auto& m : ds->messages) {
        pred.push_back(model.predict(m).first);
        const auto it = std::lower_bound(model.classes.begin(), model.classes.end(), m.label);
        if (it == model.classes.end() || *it != m.label) {
            throw std::runtime_error("label '" + m.label + "' unknown to this checkpoint");
        }
        gold.push_back(static_cast<std::size_t>(it - model.classes.begin()));
    }
    const Evaluation ev = evaluate(pred, gold, model.classes.size());
    std::cout << "method " << model.spec.id << " (" << model.spec.description() << ") on " << part
              << " of " << corpus << "\n";
    std::cout << "accuracy: " << std::fixed << std::setprecision(4) << ev.accuracy << " ("
              << ds->size() << " messages)\n";
    std::cout << "class              precision  recall\n";
    for (std::size_t c = 0; c < model.classes.size(); ++c) {
        std::cout << std::left << std::setw(19) << model.classes[c] << std::setprecision(4)
                  << std::setw(11) << ev.precision[c] << ev.recall[c] << "\n";
    }
    return 0;
}

int cmd_compare(const std::string& corpus, const std::string& config_path, std::uint64_t seed,
                const std::string& report, const std::string& reference) {
    RunConfig cfg = make_config(config_path, seed);
    ParseStats stats;
    const Dataset ds = load_corpus(corpus, &stats);
    if (stats.rejected > 0) std::cout << "rejected " << stats.rejected << " records\n";
    const Splits splits = make_splits(ds, cfg.data, seed);
    print_split_sizes(splits);

    const std::optional<std::string> ref =
        reference.empty() ? std::nullopt : std::optional<std::string>(reference);
    const std::vector<RunResult> results = compare_all(splits, cfg, corpus);
    const std::string table = format_results_table(results, corpus, ref);
    std::cout << table;
    if (ref) {
        std::cout << "reference column: published accuracies for the " << *ref
                  << " corpus with a pretrained encoder; context only, not a target\n";
    }
    if (!report.empty()) {
        write_results_csv(results, report, ref);
        std::ofstream table_out(report + ".txt");
        table_out << table;
        std::cout << "wrote " << report << " and " << report << ".txt\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-block message classification experiments"};
    app.require_subcommand(1);

    // synth
    std::string sy_mode = "metadata_only", sy_out;
    std::uint64_t sy_seed = 0;
    std::size_t sy_classes = 4, sy_per_class = 500;
    double sy_conflict = 0.3;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    synth->add_option("--mode", sy_mode, "metadata_only or conflict");
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("--out", sy_out, "output JSONL path")->required();
    synth->add_option("--classes", sy_classes, "number of classes");
    synth->add_option("--per-class", sy_per_class, "messages per class");
    synth->add_option("--conflict-fraction", sy_conflict, "conflicting fraction (conflict mode)");

    // featurize
    std::string fe_corpus, fe_out, fe_config;
    auto* featurize = app.add_subcommand("featurize", "fit a featurizer and write it as JSON");
    featurize->add_option("--corpus", fe_corpus, "JSONL corpus")->required();
    featurize->add_option("--out", fe_out, "output featurizer JSON path")->required();
    featurize->add_option("--config", fe_config, "config file");

    // train
    std::string tr_corpus, tr_config, tr_out;
    int tr_method = 10;
    std::uint64_t tr_seed = 0;
    auto* train = app.add_subcommand("train", "train one method and save a checkpoint");
    train->add_option("--corpus", tr_corpus, "JSONL corpus")->required();
    train->add_option("--method", tr_method, "method id 1..10")->required();
    train->add_option("--config", tr_config, "config file");
    train->add_option("--seed", tr_seed, "base seed");
    train->add_option("--out", tr_out, "checkpoint output path");

    // eval
    std::string ev_ckpt, ev_corpus, ev_split = "all";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    eval->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    eval->add_option("--corpus", ev_corpus, "JSONL corpus")->required();
    eval->add_option("--split", ev_split, "all, train, val or test (reproduces the run's split)");

    // compare
    std::string cp_corpus, cp_config, cp_report, cp_reference;
    std::uint64_t cp_seed = 0;
    auto* compare = app.add_subcommand("compare", "run all ten methods and report");
    compare->add_option("--corpus", cp_corpus, "JSONL corpus")->required();
    compare->add_option("--config", cp_config, "config file");
    compare->add_option("--seed", cp_seed, "base seed");
    compare->add_option("--report", cp_report, "CSV report path");
    compare->add_option("--reference", cp_reference, "amazon, yelp, reddit or enron");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(sy_mode, sy_seed, sy_out, sy_classes, sy_per_class, sy_conflict);
        if (featurize->parsed()) return cmd_featurize(fe_corpus, fe_out, fe_config);
        if (train->parsed()) return cmd_train(tr_corpus, tr_method, tr_config, tr_seed, tr_out);
        if (eval->parsed()) return cmd_eval(ev_ckpt, ev_corpus, ev_split);
        if (compare->parsed())
            return cmd_compare(cp_corpus, cp_config, cp_seed, cp_report, cp_reference);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
