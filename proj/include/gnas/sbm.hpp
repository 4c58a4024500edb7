#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "gnas/graph.hpp"
#include "gnas/rng.hpp"

namespace gnas {

/// Stochastic-block-model parameters for the synthetic homophilous graphs used at
/// desk scale. Labels are block ids; features are a per-block centroid (uniform in
/// the unit hypercube) plus Gaussian noise.
struct SbmParams {
    int blocks = 4;
    int nodes_per_block = 100;
    double p_in = 0.12;
    double p_out = 0.02;
    int feature_dim = 16;
    double feature_noise = 1.0;
    uint64_t seed = 0;

    void validate() const {
        if (blocks < 1 || nodes_per_block < 1)
            throw std::invalid_argument("sbm: zero nodes");
        if (p_out < 0.0 || p_in > 1.0 || p_out > p_in)
            throw std::invalid_argument("sbm: need 0 <= p_out <= p_in <= 1 (homophily generator)");
        if (feature_dim < 1) throw std::invalid_argument("sbm: feature_dim < 1");
        if (feature_noise < 0.0) throw std::invalid_argument("sbm: feature_noise < 0");
    }
};

/// Deterministic given the seed: the same params always produce byte-identical
/// graphs. Split masks are left unassigned; use split_nodes afterwards.
inline Graph generate_sbm(const SbmParams& p) {
    p.validate();
    Graph g;
    g.n = p.blocks * p.nodes_per_block;
    g.feature_dim = p.feature_dim;
    g.num_classes = p.blocks;
    g.labels.resize(g.n);
    g.split.assign(g.n, Split::None);
    for (int i = 0; i < g.n; ++i) g.labels[i] = i / p.nodes_per_block;

    Rng edge_rng(sub_seed(p.seed, "sbm-edges"));
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j) {
            double prob = (g.labels[i] == g.labels[j]) ? p.p_in : p.p_out;
            if (edge_rng.uniform01() < prob) g.edges.emplace_back(i, j);
        }

    Rng feat_rng(sub_seed(p.seed, "sbm-features"));
    Matrix centroids(p.blocks, p.feature_dim);
    for (int b = 0; b < p.blocks; ++b)
        for (int k = 0; k < p.feature_dim; ++k) centroids(b, k) = feat_rng.uniform01();
    g.features = Matrix(g.n, p.feature_dim);
    for (int i = 0; i < g.n; ++i)
        for (int k = 0; k < p.feature_dim; ++k)
            g.features(i, k) = centroids(g.labels[i], k) + feat_rng.normal(0.0, p.feature_noise);

    g.finalize();
    g.validate();
    return g;
}

/// Assign train/val/test masks from a random node permutation. Sizes are
/// floor(n*train) and floor(n*val); test takes floor(n*test), expanded to absorb
/// rounding leftovers when the three fractions sum to 1. Leftover nodes stay
/// unassigned, so the mask union may be a strict subset of the nodes.
/// Errors if some class ends up without a training node.
inline Graph split_nodes(const Graph& g, double train_frac, double val_frac, double test_frac,
                         uint64_t seed) {
    if (train_frac < 0 || val_frac < 0 || test_frac < 0 ||
        train_frac + val_frac + test_frac > 1.0 + 1e-9)
        throw std::invalid_argument("split_nodes: fractions must be nonnegative, sum <= 1");
    Graph out = g;
    std::vector<int> order(g.n);
    for (int i = 0; i < g.n; ++i) order[i] = i;
    Rng rng(sub_seed(seed, "split"));
    rng.shuffle(order);

    int n_train = static_cast<int>(g.n * train_frac);
    int n_val = static_cast<int>(g.n * val_frac);
    int n_test = static_cast<int>(g.n * test_frac);
    if (train_frac + val_frac + test_frac > 1.0 - 1e-9)
        n_test = g.n - n_train - n_val;

    out.split.assign(g.n, Split::None);
    int pos = 0;
    for (int k = 0; k < n_train; ++k) out.split[order[pos++]] = Split::Train;
    for (int k = 0; k < n_val; ++k) out.split[order[pos++]] = Split::Val;
    for (int k = 0; k < n_test; ++k) out.split[order[pos++]] = Split::Test;

    if (n_train > 0) {
        std::vector<bool> covered(g.num_classes, false);
        for (int i = 0; i < g.n; ++i)
            if (out.split[i] == Split::Train) covered[g.labels[i]] = true;
        for (int c = 0; c < g.num_classes; ++c)
            if (!covered[c])
                throw std::runtime_error("split_nodes: class " + std::to_string(c) +
                                         " has no training node (n too small for this split)");
    }
    return out;
}

} // namespace gnas
