#pragma once

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnas/mask_ops.hpp"
#include "gnas/rng.hpp"

namespace gnas {

enum class MaskOp { Identity, LRA, NFS, NIE, VPO };
enum class CoeffOp { Identity, GCN, GAT, GATSym, Cos, Linear, GeneLinear };
enum class AggrOp { Sum, Mean, Max };
enum class CombOp { Identity, GIN, SAGE };
enum class SkipOp { Identity, Zero };
enum class LayerAggrOp { Concat, Max, LSTM };

inline const char* op_name(MaskOp o) {
    switch (o) {
        case MaskOp::Identity: return "Identity";
        case MaskOp::LRA: return "LRA";
        case MaskOp::NFS: return "NFS";
        case MaskOp::NIE: return "NIE";
        case MaskOp::VPO: return "VPO";
    }
    return "?";
}
inline const char* op_name(CoeffOp o) {
    switch (o) {
        case CoeffOp::Identity: return "Identity";
        case CoeffOp::GCN: return "GCN";
        case CoeffOp::GAT: return "GAT";
        case CoeffOp::GATSym: return "GAT-Sym";
        case CoeffOp::Cos: return "Cos";
        case CoeffOp::Linear: return "Linear";
        case CoeffOp::GeneLinear: return "Gene-Linear";
    }
    return "?";
}
inline const char* op_name(AggrOp o) {
    switch (o) {
        case AggrOp::Sum: return "Sum";
        case AggrOp::Mean: return "Mean";
        case AggrOp::Max: return "Max";
    }
    return "?";
}
inline const char* op_name(CombOp o) {
    switch (o) {
        case CombOp::Identity: return "Identity";
        case CombOp::GIN: return "GIN";
        case CombOp::SAGE: return "SAGE";
    }
    return "?";
}
inline const char* op_name(SkipOp o) { return o == SkipOp::Identity ? "Identity" : "Zero"; }
inline const char* op_name(LayerAggrOp o) {
    switch (o) {
        case LayerAggrOp::Concat: return "Concat";
        case LayerAggrOp::Max: return "Max";
        case LayerAggrOp::LSTM: return "LSTM";
    }
    return "?";
}

template <typename Op>
Op op_from_name(const std::string& s);

template <>
inline MaskOp op_from_name<MaskOp>(const std::string& s) {
    for (MaskOp o : {MaskOp::Identity, MaskOp::LRA, MaskOp::NFS, MaskOp::NIE, MaskOp::VPO})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown mask op '" + s + "'");
}
template <>
inline CoeffOp op_from_name<CoeffOp>(const std::string& s) {
    for (CoeffOp o : {CoeffOp::Identity, CoeffOp::GCN, CoeffOp::GAT, CoeffOp::GATSym,
                      CoeffOp::Cos, CoeffOp::Linear, CoeffOp::GeneLinear})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown coefficient op '" + s + "'");
}
template <>
inline AggrOp op_from_name<AggrOp>(const std::string& s) {
    for (AggrOp o : {AggrOp::Sum, AggrOp::Mean, AggrOp::Max})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown aggregator '" + s + "'");
}
template <>
inline CombOp op_from_name<CombOp>(const std::string& s) {
    for (CombOp o : {CombOp::Identity, CombOp::GIN, CombOp::SAGE})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown combiner '" + s + "'");
}
template <>
inline SkipOp op_from_name<SkipOp>(const std::string& s) {
    for (SkipOp o : {SkipOp::Identity, SkipOp::Zero})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown skip op '" + s + "'");
}
template <>
inline LayerAggrOp op_from_name<LayerAggrOp>(const std::string& s) {
    for (LayerAggrOp o : {LayerAggrOp::Concat, LayerAggrOp::Max, LayerAggrOp::LSTM})
        if (s == op_name(o)) return o;
    throw std::runtime_error("unknown layer aggregator '" + s + "'");
}

struct LayerGene {
    MaskOp mask = MaskOp::Identity;
    CoeffOp coeff = CoeffOp::GCN;
    AggrOp aggr = AggrOp::Sum;
    CombOp comb = CombOp::Identity;
    SkipOp skip = SkipOp::Identity;

    bool operator==(const LayerGene&) const = default;
};

/// One architecture: per-layer operation choices plus the layer aggregator.
struct Genome {
    std::vector<LayerGene> layers;
    LayerAggrOp layer_aggr = LayerAggrOp::Concat;

    bool operator==(const Genome&) const = default;
};

/// Vocabulary and dimensions of the searchable space. Vocabularies may be
/// restricted (for experiments and tests); LRA and NFS are first-layer-only
/// regardless of the vocabulary.
struct SearchSpaceConfig {
    int max_layers = 3;
    int hidden_dim = 32;
    std::vector<MaskOp> mask_ops{MaskOp::Identity, MaskOp::LRA, MaskOp::NFS, MaskOp::NIE,
                                 MaskOp::VPO};
    std::vector<CoeffOp> coeff_ops{CoeffOp::Identity, CoeffOp::GCN,    CoeffOp::GAT,
                                   CoeffOp::GATSym,   CoeffOp::Cos,    CoeffOp::Linear,
                                   CoeffOp::GeneLinear};
    std::vector<AggrOp> aggr_ops{AggrOp::Sum, AggrOp::Mean, AggrOp::Max};
    std::vector<CombOp> comb_ops{CombOp::Identity, CombOp::GIN, CombOp::SAGE};
    std::vector<SkipOp> skip_ops{SkipOp::Identity, SkipOp::Zero};
    std::vector<LayerAggrOp> layer_aggr_ops{LayerAggrOp::Concat, LayerAggrOp::Max,
                                            LayerAggrOp::LSTM};
    MaskOpParams mask_params;

    static bool first_layer_only(MaskOp o) { return o == MaskOp::LRA || o == MaskOp::NFS; }

    /// Mask ops legal at a given 1-based layer index.
    std::vector<MaskOp> legal_masks(int layer_index) const {
        std::vector<MaskOp> out;
        for (MaskOp o : mask_ops)
            if (layer_index == 1 || !first_layer_only(o)) out.push_back(o);
        return out;
    }

    void validate() const {
        if (max_layers < 1) throw std::invalid_argument("search space: max_layers < 1");
        if (hidden_dim < 1) throw std::invalid_argument("search space: hidden_dim < 1");
        if (mask_ops.empty() || coeff_ops.empty() || aggr_ops.empty() || comb_ops.empty() ||
            skip_ops.empty() || layer_aggr_ops.empty())
            throw std::invalid_argument("search space: empty vocabulary");
        if (legal_masks(2).empty() && max_layers > 1)
            throw std::invalid_argument("search space: no mask op legal beyond layer 1");
        mask_params.validate();
    }
};

// ---------------------------------------------------------------------------
// Genome JSON: operation names exactly as the vocabulary strings.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json genome_to_json(const Genome& g) {
    nlohmann::ordered_json j;
    j["layers"] = nlohmann::ordered_json::array();
    for (const LayerGene& l : g.layers) {
        nlohmann::ordered_json lj;
        lj["mask"] = op_name(l.mask);
        lj["coeff"] = op_name(l.coeff);
        lj["aggr"] = op_name(l.aggr);
        lj["comb"] = op_name(l.comb);
        lj["skip"] = op_name(l.skip);
        j["layers"].push_back(lj);
    }
    j["layer_aggr"] = op_name(g.layer_aggr);
    return j;
}

inline Genome genome_from_json(const nlohmann::json& j) {
    Genome g;
    for (const auto& lj : j.at("layers")) {
        LayerGene l;
        l.mask = op_from_name<MaskOp>(lj.at("mask").get<std::string>());
        l.coeff = op_from_name<CoeffOp>(lj.at("coeff").get<std::string>());
        l.aggr = op_from_name<AggrOp>(lj.at("aggr").get<std::string>());
        l.comb = op_from_name<CombOp>(lj.at("comb").get<std::string>());
        l.skip = op_from_name<SkipOp>(lj.at("skip").get<std::string>());
        g.layers.push_back(l);
    }
    g.layer_aggr = op_from_name<LayerAggrOp>(j.at("layer_aggr").get<std::string>());
    return g;
}

inline std::string genome_json_string(const Genome& g) { return genome_to_json(g).dump(); }

/// Stable id used in trajectories and logs: FNV-1a of the compact JSON encoding.
inline std::string genome_id(const Genome& g) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(genome_json_string(g))));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Validity, depth, genetic operators
// ---------------------------------------------------------------------------

inline std::vector<std::string> validate_genome(const Genome& g, const SearchSpaceConfig& space) {
    std::vector<std::string> violations;
    if (g.layers.empty()) violations.push_back("genome has no layers");
    if (static_cast<int>(g.layers.size()) > space.max_layers)
        violations.push_back("genome has more layers than the space allows");

    auto in_vocab = [](auto op, const auto& vocab) {
        return std::find(vocab.begin(), vocab.end(), op) != vocab.end();
    };
    bool any_identity_skip = false;
    for (size_t idx = 0; idx < g.layers.size(); ++idx) {
        const LayerGene& l = g.layers[idx];
        int layer = static_cast<int>(idx) + 1;
        if (layer > 1 && SearchSpaceConfig::first_layer_only(l.mask))
            violations.push_back(std::string("first-layer-only op ") + op_name(l.mask) +
                                 " at layer " + std::to_string(layer));
        if (!in_vocab(l.mask, space.mask_ops))
            violations.push_back(std::string("mask op ") + op_name(l.mask) + " not in vocabulary");
        if (!in_vocab(l.coeff, space.coeff_ops))
            violations.push_back(std::string("coefficient op ") + op_name(l.coeff) +
                                 " not in vocabulary");
        if (!in_vocab(l.aggr, space.aggr_ops))
            violations.push_back(std::string("aggregator ") + op_name(l.aggr) +
                                 " not in vocabulary");
        if (!in_vocab(l.comb, space.comb_ops))
            violations.push_back(std::string("combiner ") + op_name(l.comb) + " not in vocabulary");
        if (!in_vocab(l.skip, space.skip_ops))
            violations.push_back(std::string("skip op ") + op_name(l.skip) + " not in vocabulary");
        any_identity_skip = any_identity_skip || l.skip == SkipOp::Identity;
    }
    if (!g.layers.empty() && !any_identity_skip)
        violations.push_back("no contributing layer (every skip is Zero)");
    if (std::find(space.layer_aggr_ops.begin(), space.layer_aggr_ops.end(), g.layer_aggr) ==
        space.layer_aggr_ops.end())
        violations.push_back(std::string("layer aggregator ") + op_name(g.layer_aggr) +
                             " not in vocabulary");
    return violations;
}

inline bool is_valid(const Genome& g, const SearchSpaceConfig& space) {
    return validate_genome(g, space).empty();
}

/// Largest 1-based layer index whose skip op is Identity. Layers beyond it never
/// run; this is the searched message-passing depth.
inline int effective_depth(const Genome& g) {
    int depth = 0;
    for (size_t i = 0; i < g.layers.size(); ++i)
        if (g.layers[i].skip == SkipOp::Identity) depth = static_cast<int>(i) + 1;
    if (depth == 0) throw std::invalid_argument("effective_depth: genome has no Identity skip");
    return depth;
}

namespace spacedetail {

template <typename Op>
Op pick(const std::vector<Op>& vocab, Rng& rng) {
    return vocab[rng.pick_index(vocab)];
}

/// A uniformly chosen value DIFFERENT from `cur`; returns cur when the vocabulary
/// has no alternative.
template <typename Op>
Op pick_different(const std::vector<Op>& vocab, Op cur, Rng& rng) {
    std::vector<Op> alt;
    for (Op o : vocab)
        if (!(o == cur)) alt.push_back(o);
    if (alt.empty()) return cur;
    return alt[rng.pick_index(alt)];
}

inline void repair(Genome& g, const SearchSpaceConfig& space) {
    bool any_identity = false;
    for (const LayerGene& l : g.layers) any_identity = any_identity || l.skip == SkipOp::Identity;
    if (!any_identity && !g.layers.empty()) g.layers[0].skip = SkipOp::Identity;
    for (size_t i = 1; i < g.layers.size(); ++i)
        if (SearchSpaceConfig::first_layer_only(g.layers[i].mask)) {
            // replace with a uniformly *deterministic* fallback: Identity is always legal
            g.layers[i].mask = MaskOp::Identity;
        }
    (void)space;
}

} // namespace spacedetail

/// Uniform genome over the layer-legal vocabularies, repaired so at least one skip
/// is Identity (layer 1 forced when every draw was Zero).
inline Genome random_genome(const SearchSpaceConfig& space, Rng& rng) {
    Genome g;
    g.layers.resize(space.max_layers);
    for (int l = 1; l <= space.max_layers; ++l) {
        LayerGene& gene = g.layers[static_cast<size_t>(l - 1)];
        auto masks = space.legal_masks(l);
        gene.mask = spacedetail::pick(masks, rng);
        gene.coeff = spacedetail::pick(space.coeff_ops, rng);
        gene.aggr = spacedetail::pick(space.aggr_ops, rng);
        gene.comb = spacedetail::pick(space.comb_ops, rng);
        gene.skip = spacedetail::pick(space.skip_ops, rng);
    }
    g.layer_aggr = spacedetail::pick(space.layer_aggr_ops, rng);
    spacedetail::repair(g, space);
    return g;
}

/// Each gene is independently replaced with probability p by a uniformly chosen
/// different legal value; the result is repaired to validity.
inline Genome mutate(const Genome& parent, const SearchSpaceConfig& space, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("mutate: p outside [0,1]");
    Genome g = parent;
    for (int l = 1; l <= static_cast<int>(g.layers.size()); ++l) {
        LayerGene& gene = g.layers[static_cast<size_t>(l - 1)];
        if (rng.bernoulli(p)) gene.mask = spacedetail::pick_different(space.legal_masks(l), gene.mask, rng);
        if (rng.bernoulli(p)) gene.coeff = spacedetail::pick_different(space.coeff_ops, gene.coeff, rng);
        if (rng.bernoulli(p)) gene.aggr = spacedetail::pick_different(space.aggr_ops, gene.aggr, rng);
        if (rng.bernoulli(p)) gene.comb = spacedetail::pick_different(space.comb_ops, gene.comb, rng);
        if (rng.bernoulli(p)) gene.skip = spacedetail::pick_different(space.skip_ops, gene.skip, rng);
    }
    if (rng.bernoulli(p))
        g.layer_aggr = spacedetail::pick_different(space.layer_aggr_ops, g.layer_aggr, rng);
    spacedetail::repair(g, space);
    return g;
}

/// Uniform crossover: every gene (including the layer aggregator) comes from
/// either parent with probability 1/2; repaired to validity.
inline Genome crossover(const Genome& g1, const Genome& g2, const SearchSpaceConfig& space,
                        Rng& rng) {
    if (g1.layers.size() != g2.layers.size())
        throw std::invalid_argument("crossover: mismatched layer counts");
    Genome g = g1;
    for (size_t i = 0; i < g.layers.size(); ++i) {
        const LayerGene& a = g1.layers[i];
        const LayerGene& b = g2.layers[i];
        LayerGene& o = g.layers[i];
        o.mask = rng.bernoulli(0.5) ? a.mask : b.mask;
        o.coeff = rng.bernoulli(0.5) ? a.coeff : b.coeff;
        o.aggr = rng.bernoulli(0.5) ? a.aggr : b.aggr;
        o.comb = rng.bernoulli(0.5) ? a.comb : b.comb;
        o.skip = rng.bernoulli(0.5) ? a.skip : b.skip;
    }
    g.layer_aggr = rng.bernoulli(0.5) ? g1.layer_aggr : g2.layer_aggr;
    spacedetail::repair(g, space);
    return g;
}

/// All valid genomes of the space, in deterministic lexicographic gene order.
/// Only usable for deliberately small spaces.
inline std::vector<Genome> enumerate_genomes(const SearchSpaceConfig& space) {
    std::vector<Genome> out;
    std::vector<std::vector<LayerGene>> per_layer(space.max_layers);
    for (int l = 1; l <= space.max_layers; ++l) {
        for (MaskOp m : space.legal_masks(l))
            for (CoeffOp c : space.coeff_ops)
                for (AggrOp a : space.aggr_ops)
                    for (CombOp cb : space.comb_ops)
                        for (SkipOp s : space.skip_ops)
                            per_layer[static_cast<size_t>(l - 1)].push_back(
                                LayerGene{m, c, a, cb, s});
    }
    std::vector<size_t> cursor(space.max_layers, 0);
    while (true) {
        Genome g;
        for (int l = 0; l < space.max_layers; ++l)
            g.layers.push_back(per_layer[static_cast<size_t>(l)][cursor[static_cast<size_t>(l)]]);
        for (LayerAggrOp la : space.layer_aggr_ops) {
            g.layer_aggr = la;
            if (is_valid(g, space)) out.push_back(g);
        }
        int pos = space.max_layers - 1;
        while (pos >= 0) {
            if (++cursor[static_cast<size_t>(pos)] < per_layer[static_cast<size_t>(pos)].size())
                break;
            cursor[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Space config JSON (persisted next to trained supernets)
// ---------------------------------------------------------------------------

template <typename Op>
std::vector<Op> ops_from_json(const nlohmann::json& arr) {
    std::vector<Op> out;
    for (const auto& v : arr) out.push_back(op_from_name<Op>(v.get<std::string>()));
    return out;
}

template <typename Op>
nlohmann::ordered_json ops_to_json(const std::vector<Op>& ops) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Op o : ops) arr.push_back(op_name(o));
    return arr;
}

inline nlohmann::ordered_json space_to_json(const SearchSpaceConfig& s) {
    nlohmann::ordered_json j;
    j["max_layers"] = s.max_layers;
    j["hidden_dim"] = s.hidden_dim;
    j["mask_ops"] = ops_to_json(s.mask_ops);
    j["coeff_ops"] = ops_to_json(s.coeff_ops);
    j["aggr_ops"] = ops_to_json(s.aggr_ops);
    j["comb_ops"] = ops_to_json(s.comb_ops);
    j["skip_ops"] = ops_to_json(s.skip_ops);
    j["layer_aggr_ops"] = ops_to_json(s.layer_aggr_ops);
    j["mask_params"] = {{"lra_rank", s.mask_params.lra_rank},
                        {"nfs_tau", s.mask_params.nfs_tau},
                        {"nie_beta", s.mask_params.nie_beta},
                        {"nie_floor", s.mask_params.nie_floor},
                        {"vpo_theta", s.mask_params.vpo_theta},
                        {"vpo_order", s.mask_params.vpo_order}};
    return j;
}

inline SearchSpaceConfig space_from_json(const nlohmann::json& j) {
    SearchSpaceConfig s;
    s.max_layers = j.at("max_layers").get<int>();
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.mask_ops = ops_from_json<MaskOp>(j.at("mask_ops"));
    s.coeff_ops = ops_from_json<CoeffOp>(j.at("coeff_ops"));
    s.aggr_ops = ops_from_json<AggrOp>(j.at("aggr_ops"));
    s.comb_ops = ops_from_json<CombOp>(j.at("comb_ops"));
    s.skip_ops = ops_from_json<SkipOp>(j.at("skip_ops"));
    s.layer_aggr_ops = ops_from_json<LayerAggrOp>(j.at("layer_aggr_ops"));
    const auto& mp = j.at("mask_params");
    s.mask_params.lra_rank = mp.at("lra_rank").get<int>();
    s.mask_params.nfs_tau = mp.at("nfs_tau").get<double>();
    s.mask_params.nie_beta = mp.at("nie_beta").get<double>();
    s.mask_params.nie_floor = mp.at("nie_floor").get<double>();
    s.mask_params.vpo_theta = mp.at("vpo_theta").get<std::vector<double>>();
    s.mask_params.vpo_order = mp.at("vpo_order").get<int>();
    s.validate();
    return s;
}

/// Classic architectures expressed as genomes (single layer unless noted; the
/// "no-JK" rows map to an Identity skip on their final layer).
inline Genome recover_named_arch(const std::string& name, int jk_layers = 2) {
    auto one = [](MaskOp m, CoeffOp c, AggrOp a, CombOp cb) {
        Genome g;
        g.layers.push_back(LayerGene{m, c, a, cb, SkipOp::Identity});
        g.layer_aggr = LayerAggrOp::Concat;
        return g;
    };
    if (name == "GCN") return one(MaskOp::Identity, CoeffOp::GCN, AggrOp::Sum, CombOp::Identity);
    if (name == "GAT") return one(MaskOp::Identity, CoeffOp::GAT, AggrOp::Sum, CombOp::Identity);
    if (name == "GIN")
        return one(MaskOp::Identity, CoeffOp::Identity, AggrOp::Sum, CombOp::GIN);
    if (name == "GraphSAGE")
        return one(MaskOp::Identity, CoeffOp::Identity, AggrOp::Mean, CombOp::SAGE);
    if (name == "GNN-Guard") return one(MaskOp::NIE, CoeffOp::GCN, AggrOp::Sum, CombOp::Identity);
    if (name == "VPN") return one(MaskOp::VPO, CoeffOp::GCN, AggrOp::Sum, CombOp::Identity);
    if (name == "JK-Net") {
        Genome g;
        for (int l = 0; l < jk_layers; ++l)
            g.layers.push_back(
                LayerGene{MaskOp::Identity, CoeffOp::GCN, AggrOp::Sum, CombOp::Identity,
                          SkipOp::Identity});
        g.layer_aggr = LayerAggrOp::Concat;
        return g;
    }
    throw std::runtime_error("recover_named_arch: unknown architecture '" + name + "'");
}

} // namespace gnas
