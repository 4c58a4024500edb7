#pragma once

#include <string>
#include <vector>

#include "gnas/supernet.hpp"

namespace gnas {

struct RetrainResult {
    ParamBank bank;
    std::vector<EpochRecord> trajectory;
    double train_acc = 0.0;
    double test_acc = 0.0;                  // on the training graph's test nodes
    std::vector<double> perturbed_test_acc; // on supplied extra adjacencies
};

/// Train one architecture from scratch on `graph` (which may itself be a
/// poisoned graph) with a fresh bank sized for this genome only, then report
/// test accuracy there and on any extra adjacencies.
inline RetrainResult retrain_from_scratch(const Genome& genome, const Graph& graph,
                                          const SearchSpaceConfig& space, const TrainConfig& cfg,
                                          const std::vector<Matrix>& eval_adjacencies = {}) {
    cfg.validate();
    auto train_nodes = graph.train_nodes();
    if (train_nodes.empty()) throw std::invalid_argument("retrain: empty train mask");

    SupernetDims dims{graph.feature_dim, space.hidden_dim, graph.num_classes};
    RetrainResult res;
    res.bank = build_bank_for_genome(genome, space, dims, sub_seed(cfg.seed, "retrain-init"));

    AdjacencyContext ctx = AdjacencyContext::build(graph.dense_adj);
    MaskCache cache;
    Rng drop_rng(sub_seed(cfg.seed, "retrain-dropout"));
    AdamConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8};
    uint64_t features_key = Graph::matrix_content_hash(graph.features);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ForwardOptions opts;
        opts.training = true;
        opts.linear_dropout = cfg.linear_dropout;
        opts.attn_dropout = cfg.attn_dropout;
        opts.rng = &drop_rng;
        opts.mask_cache = &cache;
        opts.features_key = features_key;
        try {
            ad::Tape t(true);
            ForwardResult fwd = forward_network(t, genome, res.bank, graph.features, ctx,
                                                space.mask_params, opts);
            ad::Var loss = t.cross_entropy(fwd.logits, graph.labels, train_nodes);
            double loss_value = t.scalar(loss);
            t.backward(loss);
            adam_step(res.bank, adam);
            res.trajectory.push_back({epoch, genome_id(genome), loss_value});
        } catch (const std::runtime_error& e) {
            if (std::string(e.what()).find("non-finite") != std::string::npos)
                throw TrainingDivergence(genome_json_string(genome), epoch);
            throw;
        }
    }

    Supernet frozen{space, dims, std::move(res.bank)};
    Matrix probs = infer(frozen, genome, graph.features, features_key, ctx, &cache);
    res.train_acc = accuracy(probs, graph.labels, train_nodes);
    auto test_nodes = graph.test_nodes();
    if (!test_nodes.empty()) res.test_acc = accuracy(probs, graph.labels, test_nodes);
    for (const Matrix& adj : eval_adjacencies) {
        AdjacencyContext ectx = AdjacencyContext::build(adj);
        Matrix p = infer(frozen, genome, graph.features, features_key, ectx, &cache);
        res.perturbed_test_acc.push_back(test_nodes.empty()
                                             ? 0.0
                                             : accuracy(p, graph.labels, test_nodes));
    }
    res.bank = std::move(frozen.bank);
    return res;
}

} // namespace gnas
