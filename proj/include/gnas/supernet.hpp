#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "gnas/graph.hpp"
#include "gnas/layer_forward.hpp"
#include "gnas/param_bank.hpp"
#include "gnas/search_space.hpp"
#include "gnas/tape.hpp"

namespace gnas {

struct SupernetDims {
    int in_dim = 0;
    int hidden = 0;
    int classes = 0;
};

/// The one-shot model: one shared parameter bank covering every operation of the
/// space at every layer. Every genome of the space is a path addressing a subset
/// of the entries; genomes sharing an op at a layer alias its parameters.
struct Supernet {
    SearchSpaceConfig space;
    SupernetDims dims;
    ParamBank bank;
};

struct TrainConfig {
    int epochs = 1000;
    double lr = 0.005;
    double weight_decay = 3e-4;
    double linear_dropout = 0.5;
    double attn_dropout = 0.6;
    uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train config: epochs < 1");
        if (lr <= 0.0) throw std::invalid_argument("train config: lr <= 0");
    }
};

struct EpochRecord {
    int epoch;
    std::string genome_id;
    double loss;
};

/// Raised when a training forward pass produces non-finite values; carries the
/// offending path so runs can log it.
struct TrainingDivergence : std::runtime_error {
    std::string genome_json;
    int epoch;
    TrainingDivergence(std::string gj, int ep)
        : std::runtime_error("training diverged at epoch " + std::to_string(ep)),
          genome_json(std::move(gj)),
          epoch(ep) {}
};

namespace netdetail {

inline void glorot_init(Param& p, uint64_t seed, const std::string& name) {
    Rng rng(sub_seed(seed, name));
    double limit = std::sqrt(6.0 / (p.value.rows() + p.value.cols()));
    for (auto& v : p.value.data()) v = rng.uniform(-limit, limit);
}

inline void create_matrix(ParamBank& bank, const std::string& name, int rows, int cols,
                          uint64_t seed, bool zero_init = false) {
    Param& p = bank.create(name, rows, cols);
    if (!zero_init) glorot_init(p, seed, name);
}

inline void allocate_layer_coeff(ParamBank& bank, int layer, CoeffOp op, int d_in, int hidden,
                                 uint64_t seed) {
    switch (op) {
        case CoeffOp::Identity:
        case CoeffOp::GCN:
            break;
        case CoeffOp::GAT:
        case CoeffOp::GATSym:
            create_matrix(bank, names::coeff(layer, op, "al"), d_in, 1, seed);
            create_matrix(bank, names::coeff(layer, op, "ar"), d_in, 1, seed);
            break;
        case CoeffOp::Cos:
            create_matrix(bank, names::coeff(layer, op, "wl"), d_in, hidden, seed);
            create_matrix(bank, names::coeff(layer, op, "wr"), d_in, hidden, seed);
            break;
        case CoeffOp::Linear:
            create_matrix(bank, names::coeff(layer, op, "wl"), d_in, hidden, seed);
            break;
        case CoeffOp::GeneLinear:
            create_matrix(bank, names::coeff(layer, op, "wl"), d_in, hidden, seed);
            create_matrix(bank, names::coeff(layer, op, "wr"), d_in, hidden, seed);
            create_matrix(bank, names::coeff(layer, op, "wa"), 1, hidden, seed);
            break;
    }
}

inline void allocate_layer_comb(ParamBank& bank, int layer, CombOp op, int d_in, int hidden,
                                uint64_t seed) {
    switch (op) {
        case CombOp::Identity:
            break;
        case CombOp::GIN:
            create_matrix(bank, names::comb(layer, op, "eps"), 1, 1, seed, /*zero_init=*/true);
            create_matrix(bank, names::comb(layer, op, "w1"), d_in, hidden, seed);
            create_matrix(bank, names::comb(layer, op, "b1"), 1, hidden, seed, true);
            create_matrix(bank, names::comb(layer, op, "w2"), hidden, d_in, seed);
            create_matrix(bank, names::comb(layer, op, "b2"), 1, d_in, seed, true);
            break;
        case CombOp::SAGE:
            create_matrix(bank, names::comb(layer, op, "wself"), d_in, d_in, seed);
            create_matrix(bank, names::comb(layer, op, "wneigh"), d_in, d_in, seed);
            break;
    }
}

inline void allocate_lstm(ParamBank& bank, int hidden, uint64_t seed) {
    const int fw_width = hidden / 2;
    const int bw_width = hidden - fw_width;
    for (auto [dir, width] : {std::pair{"fw", fw_width}, std::pair{"bw", bw_width}})
        for (char gate : {'i', 'f', 'o', 'g'}) {
            create_matrix(bank, names::lstm(dir, gate, "wx"), hidden, width, seed);
            create_matrix(bank, names::lstm(dir, gate, "wh"), width, width, seed);
            create_matrix(bank, names::lstm(dir, gate, "b"), 1, width, seed, true);
        }
    create_matrix(bank, names::lstm_attn("w"), hidden, 1, seed);
    create_matrix(bank, names::lstm_attn("b"), 1, 1, seed, true);
}

inline void allocate_classifier(ParamBank& bank, LayerAggrOp op, int concat_width, int hidden,
                                int classes, uint64_t seed) {
    int in = op == LayerAggrOp::Concat ? concat_width * hidden : hidden;
    create_matrix(bank, names::classifier(op, concat_width, "W"), in, classes, seed);
    create_matrix(bank, names::classifier(op, concat_width, "b"), 1, classes, seed, true);
}

} // namespace netdetail

/// Allocate and initialize every parameterized op of the space at every layer.
/// Initialization is Glorot-uniform per entry, seeded by (seed, entry name), so
/// the initial bank is byte-identical for identical seeds regardless of
/// allocation order.
inline Supernet build_supernet(const SearchSpaceConfig& space, SupernetDims dims,
                               uint64_t seed) {
    space.validate();
    if (dims.in_dim < 1 || dims.classes < 1)
        throw std::invalid_argument("build_supernet: dims must be positive");
    dims.hidden = space.hidden_dim; // the space owns the width
    Supernet net;
    net.space = space;
    net.dims = dims;
    for (int l = 1; l <= space.max_layers; ++l) {
        int d_in = l == 1 ? dims.in_dim : space.hidden_dim;
        netdetail::create_matrix(net.bank, names::layer_w(l), d_in, space.hidden_dim, seed);
        for (CoeffOp op : space.coeff_ops)
            netdetail::allocate_layer_coeff(net.bank, l, op, d_in, space.hidden_dim, seed);
        for (CombOp op : space.comb_ops)
            netdetail::allocate_layer_comb(net.bank, l, op, d_in, space.hidden_dim, seed);
    }
    for (LayerAggrOp op : space.layer_aggr_ops) {
        if (op == LayerAggrOp::Concat)
            for (int k = 1; k <= space.max_layers; ++k)
                netdetail::allocate_classifier(net.bank, op, k, space.hidden_dim, dims.classes,
                                               seed);
        else
            netdetail::allocate_classifier(net.bank, op, 0, space.hidden_dim, dims.classes, seed);
        if (op == LayerAggrOp::LSTM) netdetail::allocate_lstm(net.bank, space.hidden_dim, seed);
    }
    return net;
}

/// Bank for a single standalone architecture (used by retraining): only the
/// entries this genome's path addresses.
inline ParamBank build_bank_for_genome(const Genome& genome, const SearchSpaceConfig& space,
                                       SupernetDims dims, uint64_t seed) {
    ParamBank bank;
    int depth = effective_depth(genome);
    int collected = 0;
    for (int l = 1; l <= depth; ++l) {
        const LayerGene& gene = genome.layers[static_cast<size_t>(l - 1)];
        int d_in = l == 1 ? dims.in_dim : space.hidden_dim;
        netdetail::create_matrix(bank, names::layer_w(l), d_in, space.hidden_dim, seed);
        netdetail::allocate_layer_coeff(bank, l, gene.coeff, d_in, space.hidden_dim, seed);
        netdetail::allocate_layer_comb(bank, l, gene.comb, d_in, space.hidden_dim, seed);
        if (gene.skip == SkipOp::Identity) ++collected;
    }
    if (genome.layer_aggr == LayerAggrOp::LSTM)
        netdetail::allocate_lstm(bank, space.hidden_dim, seed);
    netdetail::allocate_classifier(bank, genome.layer_aggr,
                                   genome.layer_aggr == LayerAggrOp::Concat ? collected : 0,
                                   space.hidden_dim, dims.classes, seed);
    return bank;
}

/// Uniform single-path sampling (identical distribution to random_genome).
inline Genome sample_path(const SearchSpaceConfig& space, Rng& rng) {
    return random_genome(space, rng);
}

/// Single-path one-shot training: per epoch, sample one path uniformly, run a
/// full-batch forward on the training nodes through that path only, and take an
/// Adam step on the parameters the path touched.
inline std::vector<EpochRecord> train_supernet(Supernet& net, const Graph& graph,
                                               const TrainConfig& cfg) {
    cfg.validate();
    auto train_nodes = graph.train_nodes();
    if (train_nodes.empty()) throw std::invalid_argument("train_supernet: empty train mask");

    AdjacencyContext ctx = AdjacencyContext::build(graph.dense_adj);
    MaskCache cache;
    Rng path_rng(sub_seed(cfg.seed, "paths"));
    Rng drop_rng(sub_seed(cfg.seed, "dropout"));
    AdamConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8};
    uint64_t features_key = Graph::matrix_content_hash(graph.features);

    std::vector<EpochRecord> trajectory;
    trajectory.reserve(static_cast<size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Genome path = sample_path(net.space, path_rng);
        ForwardOptions opts;
        opts.training = true;
        opts.linear_dropout = cfg.linear_dropout;
        opts.attn_dropout = cfg.attn_dropout;
        opts.rng = &drop_rng;
        opts.mask_cache = &cache;
        opts.features_key = features_key;
        try {
            ad::Tape t(true);
            ForwardResult fwd = forward_network(t, path, net.bank, graph.features, ctx,
                                                net.space.mask_params, opts);
            ad::Var loss = t.cross_entropy(fwd.logits, graph.labels, train_nodes);
            double loss_value = t.scalar(loss);
            t.backward(loss);
            adam_step(net.bank, adam);
            trajectory.push_back({epoch, genome_id(path), loss_value});
        } catch (const std::runtime_error& e) {
            if (std::string(e.what()).find("non-finite") != std::string::npos)
                throw TrainingDivergence(genome_json_string(path), epoch);
            throw;
        }
    }
    return trajectory;
}

/// Frozen inference: dropout disabled, probabilities out. The adjacency context
/// carries the (possibly perturbed) structure; features may be perturbed too.
inline Matrix infer(const Supernet& net, const Genome& genome, const Matrix& features,
                    uint64_t features_key, const AdjacencyContext& ctx,
                    MaskCache* cache = nullptr) {
    ForwardOptions opts;
    opts.training = false;
    opts.mask_cache = cache;
    opts.features_key = features_key;
    ad::Tape t(false);
    // the bank is frozen; inference only reads values
    ParamBank& bank = const_cast<ParamBank&>(net.bank);
    ForwardResult fwd =
        forward_network(t, genome, bank, features, ctx, net.space.mask_params, opts);
    return t.val(t.row_softmax(fwd.logits));
}

inline Matrix infer(const Supernet& net, const Genome& genome, const Graph& graph,
                    const Matrix* adjacency_override = nullptr, MaskCache* cache = nullptr) {
    AdjacencyContext ctx =
        AdjacencyContext::build(adjacency_override ? *adjacency_override : graph.dense_adj);
    return infer(net, genome, graph.features, Graph::matrix_content_hash(graph.features), ctx,
                 cache);
}

/// Fraction of the masked nodes whose argmax prediction matches the label.
/// Argmax ties break toward the smaller class id.
inline double accuracy(const Matrix& probabilities, const std::vector<int>& labels,
                       const std::vector<int>& nodes) {
    if (nodes.empty()) throw std::invalid_argument("accuracy: empty mask");
    int correct = 0;
    for (int i : nodes) {
        int best = 0;
        for (int c = 1; c < probabilities.cols(); ++c)
            if (probabilities(i, c) > probabilities(i, best)) best = c;
        correct += best == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

// ---------------------------------------------------------------------------
// Persistence: bank in the binary format plus a JSON sidecar with space + dims.
// ---------------------------------------------------------------------------

inline void save_supernet(const Supernet& net, const std::string& bank_path,
                          const std::string& sidecar_path) {
    save_bank(net.bank, bank_path);
    nlohmann::ordered_json j;
    j["space"] = space_to_json(net.space);
    j["dims"] = {{"in_dim", net.dims.in_dim},
                 {"hidden", net.dims.hidden},
                 {"classes", net.dims.classes}};
    std::ofstream out(sidecar_path);
    if (!out) throw std::runtime_error("cannot write sidecar: " + sidecar_path);
    out << j.dump(2) << "\n";
}

inline Supernet load_supernet(const std::string& bank_path, const std::string& sidecar_path) {
    std::ifstream in(sidecar_path);
    if (!in) throw std::runtime_error("cannot open sidecar: " + sidecar_path);
    nlohmann::json j = nlohmann::json::parse(in);
    Supernet net;
    net.space = space_from_json(j.at("space"));
    net.dims.in_dim = j.at("dims").at("in_dim").get<int>();
    net.dims.hidden = j.at("dims").at("hidden").get<int>();
    net.dims.classes = j.at("dims").at("classes").get<int>();
    net.bank = load_bank(bank_path);
    return net;
}

} // namespace gnas
