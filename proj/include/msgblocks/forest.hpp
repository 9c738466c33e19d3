#pragma once

// Random forest classifier: Gini splits, midpoint thresholds, seeded
// bootstrap, per-node feature subsampling, majority vote.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "msgblocks/rng.hpp"

namespace msgblocks {

struct ForestParams {
    std::size_t n_trees = 250;
    std::size_t max_depth = 0;        // 0 = unlimited
    std::size_t min_samples_leaf = 1;
    bool bootstrap = true;
    enum class FeatureRule { sqrt_rule, all } features_per_split = FeatureRule::sqrt_rule;
    std::uint64_t seed = 0;
};

inline double gini(const std::vector<std::size_t>& class_counts) {
    std::size_t n = 0;
    for (std::size_t c : class_counts) n += c;
    if (n == 0) throw std::invalid_argument("gini: all-zero counts");
    double sum_sq = 0.0;
    for (std::size_t c : class_counts) {
        const double p = static_cast<double>(c) / static_cast<double>(n);
        sum_sq += p * p;
    }
    return 1.0 - sum_sq;
}

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int leaf_class = -1;
    std::vector<std::size_t> class_counts;  // leaves only
};

struct Tree {
    std::vector<TreeNode> nodes;

    std::size_t predict(const std::vector<double>& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0) {
            i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold
                    ? static_cast<std::size_t>(nodes[i].left)
                    : static_cast<std::size_t>(nodes[i].right);
        }
        return static_cast<std::size_t>(nodes[i].leaf_class);
    }
};

struct Forest {
    ForestParams params;
    std::size_t n_classes = 0;
    std::size_t n_features = 0;
    std::vector<Tree> trees;
    bool single_class_warning = false;
};

namespace detail {

struct SplitChoice {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;
};

// Best (gain, feature, threshold) over the candidate features; thresholds
// are midpoints of consecutive distinct sorted values. Ties: higher gain,
// then lower feature index, then lower threshold.
inline SplitChoice best_split(const std::vector<std::vector<double>>& x,
                              const std::vector<std::size_t>& y,
                              const std::vector<std::size_t>& samples,
                              const std::vector<std::size_t>& features, std::size_t n_classes,
                              std::size_t min_samples_leaf) {
    const std::size_t n = samples.size();
    std::vector<std::size_t> parent_counts(n_classes, 0);
    for (std::size_t s : samples) ++parent_counts[y[s]];
    const double parent_gini = gini(parent_counts);

    SplitChoice best;
    std::vector<std::pair<double, std::size_t>> vals(n);  // (value, class)
    for (std::size_t f : features) {
        for (std::size_t i = 0; i < n; ++i) {
            vals[i] = {x[samples[i]][f], y[samples[i]]};
        }
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });

        std::vector<std::size_t> left_counts(n_classes, 0);
        std::size_t n_left = 0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            ++left_counts[vals[i].second];
            ++n_left;
            if (vals[i].first == vals[i + 1].first) continue;
            const double thr = 0.5 * (vals[i].first + vals[i + 1].first);
            if (!(vals[i].first <= thr && thr < vals[i + 1].first)) continue;  // rounding collapse
            const std::size_t n_right = n - n_left;
            if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;

            double left_sq = 0.0, right_sq = 0.0;
            for (std::size_t c = 0; c < n_classes; ++c) {
                const double pl = static_cast<double>(left_counts[c]) / static_cast<double>(n_left);
                const double pr = static_cast<double>(parent_counts[c] - left_counts[c]) /
                                  static_cast<double>(n_right);
                left_sq += pl * pl;
                right_sq += pr * pr;
            }
            const double wl = static_cast<double>(n_left) / static_cast<double>(n);
            const double wr = static_cast<double>(n_right) / static_cast<double>(n);
            const double gain = parent_gini - wl * (1.0 - left_sq) - wr * (1.0 - right_sq);
            const bool better =
                !best.found || gain > best.gain ||
                (gain == best.gain && (f < best.feature ||
                                       (f == best.feature && thr < best.threshold)));
            if (gain > 0.0 && better) {
                best.found = true;
                best.feature = f;
                best.threshold = thr;
                best.gain = gain;
            }
        }
    }
    return best;
}

inline int build_node(Tree& tree, const std::vector<std::vector<double>>& x,
                      const std::vector<std::size_t>& y, std::vector<std::size_t>&& samples,
                      std::size_t n_classes, const ForestParams& params, std::size_t depth,
                      Rng& rng) {
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t s : samples) ++counts[y[s]];

    const auto make_leaf = [&]() {
        TreeNode leaf;
        leaf.class_counts = counts;
        std::size_t best = 0;
        for (std::size_t c = 1; c < n_classes; ++c)
            if (counts[c] > counts[best]) best = c;
        leaf.leaf_class = static_cast<int>(best);
        tree.nodes.push_back(std::move(leaf));
        return static_cast<int>(tree.nodes.size() - 1);
    };

    std::size_t n_present = 0;
    for (std::size_t c : counts)
        if (c > 0) ++n_present;
    const bool depth_capped = params.max_depth > 0 && depth >= params.max_depth;
    if (n_present <= 1 || samples.size() < 2 * params.min_samples_leaf || depth_capped) {
        return make_leaf();
    }

    const std::size_t d = x[0].size();
    std::vector<std::size_t> features(d);
    for (std::size_t i = 0; i < d; ++i) features[i] = i;
    if (params.features_per_split == ForestParams::FeatureRule::sqrt_rule) {
        const std::size_t k = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(features[i], features[i + rng.below(d - i)]);
        }
        features.resize(k);
        std::sort(features.begin(), features.end());  // evaluation order independent of draw order
    }

    const SplitChoice split =
        best_split(x, y, samples, features, n_classes, params.min_samples_leaf);
    if (!split.found) return make_leaf();

    std::vector<std::size_t> left, right;
    for (std::size_t s : samples) {
        (x[s][split.feature] <= split.threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();

    const std::size_t self = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes[self].feature = static_cast<int>(split.feature);
    tree.nodes[self].threshold = split.threshold;
    const int l = build_node(tree, x, y, std::move(left), n_classes, params, depth + 1, rng);
    const int r = build_node(tree, x, y, std::move(right), n_classes, params, depth + 1, rng);
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return static_cast<int>(self);
}

} // namespace detail

inline Forest fit_forest(const std::vector<std::vector<double>>& x,
                         const std::vector<std::size_t>& y, const ForestParams& params,
                         std::size_t n_classes) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_forest: |X| != |y|");
    if (x.size() < 2) throw std::invalid_argument("fit_forest: need at least 2 samples");
    if (params.n_trees < 1) throw std::invalid_argument("fit_forest: n_trees must be >= 1");
    for (std::size_t label : y) {
        if (label >= n_classes) throw std::invalid_argument("fit_forest: label out of range");
    }

    Forest forest;
    forest.params = params;
    forest.n_classes = n_classes;
    forest.n_features = x[0].size();

    std::vector<bool> present(n_classes, false);
    for (std::size_t label : y) present[label] = true;
    std::size_t distinct = 0;
    for (bool p : present) distinct += p ? 1 : 0;
    forest.single_class_warning = distinct < 2;

    Rng master(params.seed);
    const std::size_t n = x.size();
    for (std::size_t t = 0; t < params.n_trees; ++t) {
        Rng rng = master.fork(t);
        std::vector<std::size_t> samples(n);
        if (params.bootstrap) {
            for (std::size_t i = 0; i < n; ++i) samples[i] = rng.below(n);
        } else {
            for (std::size_t i = 0; i < n; ++i) samples[i] = i;
        }
        Tree tree;
        detail::build_node(tree, x, y, std::move(samples), n_classes, params, 0, rng);
        forest.trees.push_back(std::move(tree));
    }
    return forest;
}

// (majority label, vote distribution); ties go to the lowest class index
inline std::pair<std::size_t, std::vector<double>> predict_forest(const Forest& forest,
                                                                  const std::vector<double>& x) {
    if (x.size() != forest.n_features) {
        throw std::invalid_argument("predict_forest: feature dim " + std::to_string(x.size()) +
                                    " != " + std::to_string(forest.n_features));
    }
    std::vector<double> votes(forest.n_classes, 0.0);
    for (const auto& tree : forest.trees) votes[tree.predict(x)] += 1.0;
    for (double& v : votes) v /= static_cast<double>(forest.trees.size());
    std::size_t best = 0;
    for (std::size_t c = 1; c < forest.n_classes; ++c)
        if (votes[c] > votes[best]) best = c;
    return {best, votes};
}

} // namespace msgblocks
