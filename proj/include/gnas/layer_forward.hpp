#pragma once

#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "gnas/graph.hpp"
#include "gnas/mask_ops.hpp"
#include "gnas/search_space.hpp"
#include "gnas/tape.hpp"

namespace gnas {

/// Precomputed structure of one adjacency matrix: the matrix itself (owned), its
/// content hash, and the self-loop-augmented neighborhoods used for coefficient
/// softmax, Mean division and Max aggregation. Neighborhoods always come from the
/// *structural* support of the adjacency (plus self), independent of mask values.
struct AdjacencyContext {
    Matrix adj;
    uint64_t key = 0;
    std::vector<std::vector<int>> nbrs_self; // sorted, includes self
    std::vector<uint8_t> support_self;       // n*n row-major, includes diagonal
    Matrix inv_nbr_count;                    // n x 1 of 1/|N~(i)|

    static AdjacencyContext build(Matrix a) {
        AdjacencyContext c;
        const int n = a.rows();
        c.key = Graph::matrix_content_hash(a);
        c.nbrs_self.resize(n);
        c.support_self.assign(static_cast<size_t>(n) * n, 0);
        c.inv_nbr_count = Matrix(n, 1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j)
                if (i == j || a(i, j) != 0.0) {
                    c.nbrs_self[i].push_back(j);
                    c.support_self[static_cast<size_t>(i) * n + j] = 1;
                }
            c.inv_nbr_count(i, 0) = 1.0 / static_cast<double>(c.nbrs_self[i].size());
        }
        c.adj = std::move(a);
        return c;
    }
};

/// First-layer masks are pure functions of (adjacency, features, params); during
/// search the same handful of adjacencies is visited thousands of times, so the
/// expensive ones (LRA's eigendecomposition in particular) are memoized here.
class MaskCache {
public:
    const Matrix& get_or_compute(uint64_t adj_key, MaskOp op, uint64_t param_fp,
                                 const std::function<Matrix()>& compute) {
        std::lock_guard<std::mutex> lock(mu_);
        auto key = std::make_tuple(adj_key, static_cast<int>(op), param_fp);
        auto it = map_.find(key);
        if (it == map_.end()) it = map_.emplace(key, compute()).first;
        return it->second;
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return map_.size();
    }

private:
    mutable std::mutex mu_;
    std::map<std::tuple<uint64_t, int, uint64_t>, Matrix> map_;
};

struct ForwardOptions {
    bool training = false;
    double linear_dropout = 0.5;
    double attn_dropout = 0.6;
    Rng* rng = nullptr;             // required when training
    MaskCache* mask_cache = nullptr;
    uint64_t features_key = 0;      // distinguishes feature-perturbed passes in the cache
};

// ---------------------------------------------------------------------------
// Bank entry naming. Every (layer, op) pair owns its parameters; genomes sharing
// an op at a layer share the entry.
// ---------------------------------------------------------------------------

namespace names {

inline std::string layer_w(int layer) { return "layer" + std::to_string(layer) + ".W"; }

inline std::string coeff(int layer, CoeffOp op, const char* part) {
    return "layer" + std::to_string(layer) + ".coeff." + op_name(op) + "." + part;
}

inline std::string comb(int layer, CombOp op, const char* part) {
    return "layer" + std::to_string(layer) + ".comb." + op_name(op) + "." + part;
}

inline std::string lstm(const char* dir, char gate, const char* kind) {
    return std::string("layer_aggr.lstm.") + dir + "." + kind + "." + gate;
}

inline std::string lstm_attn(const char* part) {
    return std::string("layer_aggr.lstm.attn.") + part;
}

inline std::string classifier(LayerAggrOp op, int concat_width, const char* part) {
    if (op == LayerAggrOp::Concat)
        return "classifier.concat" + std::to_string(concat_width) + "." + part;
    if (op == LayerAggrOp::Max) return std::string("classifier.max.") + part;
    return std::string("classifier.lstm.") + part;
}

} // namespace names

inline bool is_attention_coeff(CoeffOp op) {
    return op == CoeffOp::GAT || op == CoeffOp::GATSym || op == CoeffOp::Cos ||
           op == CoeffOp::Linear || op == CoeffOp::GeneLinear;
}

namespace fwd_detail {

inline ad::Var dropout(ad::Tape& t, ad::Var x, double rate, const ForwardOptions& opts) {
    if (!opts.training || rate <= 0.0) return x;
    if (!opts.rng) throw std::runtime_error("forward: training requires an rng");
    const Matrix& v = t.val(x);
    Matrix mask(v.rows(), v.cols());
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (auto& m : mask.data()) m = opts.rng->bernoulli(keep) ? scale : 0.0;
    return t.hadamard(x, t.constant(std::move(mask)));
}

inline uint64_t double_bits(double v) {
    uint64_t b;
    std::memcpy(&b, &v, sizeof(b));
    return b;
}

/// M^{(l)} for this layer's gene. a_prev/m_prev are the previous layer's masked
/// adjacency and mask (both = A at layer 1); hidden values are detached.
inline Matrix compute_mask(MaskOp op, int layer, const AdjacencyContext& ctx,
                           const Matrix& a_prev, const Matrix& m_prev,
                           const Matrix& hidden_prev_values, const Matrix& features,
                           const MaskOpParams& mp, const ForwardOptions& opts) {
    auto cached = [&](uint64_t fp, const std::function<Matrix()>& compute) -> Matrix {
        if (layer == 1 && opts.mask_cache)
            return opts.mask_cache->get_or_compute(ctx.key, op, fp, compute);
        return compute();
    };
    switch (op) {
        case MaskOp::Identity:
            return a_prev;
        case MaskOp::LRA: {
            if (layer != 1) throw std::runtime_error("LRA is first-layer-only");
            uint64_t fp = fnv1a64(&mp.lra_rank, sizeof(mp.lra_rank));
            return cached(fp, [&] { return mask_lra(a_prev, mp.lra_rank).m; });
        }
        case MaskOp::NFS: {
            if (layer != 1) throw std::runtime_error("NFS is first-layer-only");
            uint64_t tau_bits = double_bits(mp.nfs_tau);
            uint64_t fp = fnv1a64(&tau_bits, sizeof(tau_bits),
                                  0xcbf29ce484222325ULL ^ opts.features_key);
            return cached(fp, [&] { return mask_nfs(a_prev, features, mp.nfs_tau).m; });
        }
        case MaskOp::NIE:
            return mask_nie(MaskState{m_prev}, hidden_prev_values, ctx.adj, mp.nie_beta,
                            mp.nie_floor)
                .m;
        case MaskOp::VPO: {
            uint64_t fp = fnv1a64(mp.vpo_theta.data(), mp.vpo_theta.size() * sizeof(double));
            return cached(fp, [&] { return mask_vpo(a_prev, ctx.adj, mp.vpo_theta).m; });
        }
    }
    throw std::runtime_error("unknown mask op");
}

/// Constant coefficient matrices (Identity, GCN) on the self-augmented support.
inline Matrix constant_coefficients(CoeffOp op, const AdjacencyContext& ctx,
                                    const Matrix& masked_adj) {
    const int n = masked_adj.rows();
    Matrix e(n, n);
    if (op == CoeffOp::Identity) {
        for (int i = 0; i < n; ++i)
            for (int j : ctx.nbrs_self[i]) e(i, j) = 1.0;
        return e;
    }
    // GCN: 1/sqrt(d~_i d~_j) with self-loop-augmented weighted degrees over A^(l)
    std::vector<double> deg(n, 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) deg[static_cast<size_t>(i)] += masked_adj(i, j);
    for (int i = 0; i < n; ++i)
        for (int j : ctx.nbrs_self[i])
            e(i, j) = 1.0 / std::sqrt(deg[static_cast<size_t>(i)] * deg[static_cast<size_t>(j)]);
    return e;
}

/// Raw attention logits per the coefficient table, evaluated on N~(i) only;
/// softmax over N~(i) follows.
inline ad::Var attention_logits(ad::Tape& t, CoeffOp op, int layer, ad::Var h,
                                ParamBank& bank, const AdjacencyContext& ctx) {
    const int n = t.val(h).rows();
    switch (op) {
        case CoeffOp::GAT: {
            ad::Var u = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "al"))));
            ad::Var v = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "ar"))));
            return t.leaky_relu(t.add_outer_masked(u, v, &ctx.nbrs_self));
        }
        case CoeffOp::GATSym: {
            ad::Var u = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "al"))));
            ad::Var v = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "ar"))));
            ad::Var gat = t.leaky_relu(t.add_outer_masked(u, v, &ctx.nbrs_self));
            return t.add(gat, t.transpose_op(gat)); // N~ support is symmetric
        }
        case CoeffOp::Cos: {
            ad::Var u = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "wl"))));
            ad::Var v = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "wr"))));
            return t.pairwise_dot_masked(u, v, &ctx.nbrs_self);
        }
        case CoeffOp::Linear: {
            ad::Var u = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "wl"))));
            ad::Var s = t.tanh_op(t.row_sum(u));
            // depends on the target node only
            return t.add_outer_masked(s, t.zeros(n, 1), &ctx.nbrs_self);
        }
        case CoeffOp::GeneLinear: {
            ad::Var u = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "wl"))));
            ad::Var v = t.matmul(h, t.param(bank.at(names::coeff(layer, op, "wr"))));
            ad::Var wa = t.param(bank.at(names::coeff(layer, op, "wa")));
            return t.pairwise_tanh_project(u, v, wa, &ctx.support_self);
        }
        default:
            throw std::runtime_error("attention_logits: not an attention op");
    }
}

/// Dropout on a support-structured matrix: only support entries draw a Bernoulli.
inline ad::Var dropout_on_support(ad::Tape& t, ad::Var x, double rate,
                                  const ForwardOptions& opts,
                                  const std::vector<std::vector<int>>& nbrs) {
    if (!opts.training || rate <= 0.0) return x;
    if (!opts.rng) throw std::runtime_error("forward: training requires an rng");
    const Matrix& v = t.val(x);
    Matrix mask(v.rows(), v.cols());
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (int i = 0; i < v.rows(); ++i)
        for (int j : nbrs[static_cast<size_t>(i)])
            mask(i, j) = opts.rng->bernoulli(keep) ? scale : 0.0;
    return t.hadamard(x, t.constant(std::move(mask)));
}

} // namespace fwd_detail

struct LayerIO {
    ad::Var hidden;    // h^(l), taped
    Matrix masked_adj; // A^(l), constant
    Matrix mask;       // M^(l)
};

/// One message-passing layer: mask -> masked adjacency -> coefficients ->
/// aggregate -> combine -> linear transform -> ELU. Self-loop messages carry
/// weight 1 and the coefficient op's own e_ii.
inline LayerIO forward_layer(ad::Tape& t, const LayerGene& gene, int layer,
                             const LayerIO& prev, ParamBank& bank,
                             const AdjacencyContext& ctx, const Matrix& features,
                             const MaskOpParams& mask_params, const ForwardOptions& opts) {
    const int n = ctx.adj.rows();

    Matrix mask = fwd_detail::compute_mask(gene.mask, layer, ctx, prev.masked_adj, prev.mask,
                                           t.val(prev.hidden), features, mask_params, opts);
    Matrix masked_adj = apply_mask(ctx.adj, MaskState{mask});

    // message weights: masked adjacency plus unit self-loops
    Matrix w_msg = masked_adj;
    for (int i = 0; i < n; ++i) w_msg(i, i) = 1.0;

    ad::Var h_in = fwd_detail::dropout(t, prev.hidden, opts.linear_dropout, opts);

    // per-edge coefficients e_ij on N~; messages weigh them by m_ij (self m = 1)
    auto weights = std::make_shared<const Matrix>(std::move(w_msg));
    ad::Var e;
    if (is_attention_coeff(gene.coeff)) {
        ad::Var logits = fwd_detail::attention_logits(t, gene.coeff, layer, h_in, bank, ctx);
        e = t.masked_row_softmax(logits, &ctx.support_self);
        e = fwd_detail::dropout_on_support(t, e, opts.attn_dropout, opts, ctx.nbrs_self);
    } else {
        e = t.constant(fwd_detail::constant_coefficients(gene.coeff, ctx, masked_adj));
    }

    ad::Var msg;
    switch (gene.aggr) {
        case AggrOp::Sum:
            msg = t.masked_message_sum(e, weights, h_in, &ctx.nbrs_self);
            break;
        case AggrOp::Mean:
            msg = t.scale_rows(t.masked_message_sum(e, weights, h_in, &ctx.nbrs_self),
                               t.constant(ctx.inv_nbr_count));
            break;
        case AggrOp::Max:
            msg = t.neighbor_weighted_max(t.hadamard(e, t.constant(*weights)), h_in,
                                          &ctx.nbrs_self);
            break;
    }

    ad::Var combined;
    switch (gene.comb) {
        case CombOp::Identity:
            combined = msg;
            break;
        case CombOp::GIN: {
            Matrix one(1, 1);
            one(0, 0) = 1.0;
            ad::Var eps = t.param(bank.at(names::comb(layer, gene.comb, "eps")));
            ad::Var scale = t.add(eps, t.constant(one));
            ad::Var z = t.add(t.scale_by_scalar(h_in, scale), msg);
            ad::Var z1 = t.elu(t.add_rowvec(t.matmul(z, t.param(bank.at(names::comb(layer, gene.comb, "w1")))),
                                            t.param(bank.at(names::comb(layer, gene.comb, "b1")))));
            combined = t.add_rowvec(t.matmul(z1, t.param(bank.at(names::comb(layer, gene.comb, "w2")))),
                                    t.param(bank.at(names::comb(layer, gene.comb, "b2"))));
            break;
        }
        case CombOp::SAGE: {
            ad::Var self_part =
                t.matmul(h_in, t.param(bank.at(names::comb(layer, gene.comb, "wself"))));
            ad::Var nbr_part =
                t.matmul(msg, t.param(bank.at(names::comb(layer, gene.comb, "wneigh"))));
            combined = t.add(self_part, nbr_part);
            break;
        }
    }

    ad::Var out = t.elu(t.matmul(combined, t.param(bank.at(names::layer_w(layer)))));
    return LayerIO{out, std::move(masked_adj), std::move(mask)};
}

namespace fwd_detail {

/// Bidirectional single-layer LSTM over the (short) per-node layer sequence,
/// scalar attention over positions, softmax-weighted sum of the layer states.
inline ad::Var lstm_layer_aggr(ad::Tape& t, const std::vector<ad::Var>& states,
                               ParamBank& bank, int hidden_dim) {
    const int k = static_cast<int>(states.size());
    const int n = t.val(states[0]).rows();
    auto run_direction = [&](const char* dir, bool reverse) {
        std::vector<ad::Var> outs(static_cast<size_t>(k));
        int width = bank.at(names::lstm(dir, 'i', "wx")).value.cols();
        ad::Var h = t.zeros(n, width);
        ad::Var c = t.zeros(n, width);
        for (int step = 0; step < k; ++step) {
            int pos = reverse ? k - 1 - step : step;
            ad::Var x = states[static_cast<size_t>(pos)];
            auto gate = [&](char g, auto act) {
                ad::Var pre = t.add_rowvec(
                    t.add(t.matmul(x, t.param(bank.at(names::lstm(dir, g, "wx")))),
                          t.matmul(h, t.param(bank.at(names::lstm(dir, g, "wh"))))),
                    t.param(bank.at(names::lstm(dir, g, "b"))));
                return act(pre);
            };
            ad::Var ig = gate('i', [&](ad::Var v) { return t.sigmoid(v); });
            ad::Var fg = gate('f', [&](ad::Var v) { return t.sigmoid(v); });
            ad::Var og = gate('o', [&](ad::Var v) { return t.sigmoid(v); });
            ad::Var gg = gate('g', [&](ad::Var v) { return t.tanh_op(v); });
            c = t.add(t.hadamard(fg, c), t.hadamard(ig, gg));
            h = t.hadamard(og, t.tanh_op(c));
            outs[static_cast<size_t>(pos)] = h;
        }
        return outs;
    };
    auto fw = run_direction("fw", false);
    auto bw = run_direction("bw", true);

    ad::Var scores;
    for (int pos = 0; pos < k; ++pos) {
        ad::Var cat = t.concat_cols(fw[static_cast<size_t>(pos)], bw[static_cast<size_t>(pos)]);
        ad::Var s = t.add_rowvec(t.matmul(cat, t.param(bank.at(names::lstm_attn("w")))),
                                 t.param(bank.at(names::lstm_attn("b"))));
        scores = pos == 0 ? s : t.concat_cols(scores, s);
    }
    ad::Var attn = t.row_softmax(scores); // n x k
    ad::Var out;
    for (int pos = 0; pos < k; ++pos) {
        ad::Var weighted =
            t.scale_rows(states[static_cast<size_t>(pos)], t.slice_cols(attn, pos, 1));
        out = pos == 0 ? weighted : t.add(out, weighted);
    }
    (void)hidden_dim;
    return out;
}

} // namespace fwd_detail

struct ForwardResult {
    ad::Var logits;
    std::vector<Matrix> layer_masks; // M^(1..depth), for inspection
};

/// Full network: layers 1..effective_depth, JK-style collection of the
/// Identity-skip layer outputs, layer aggregation, one linear classifier.
inline ForwardResult forward_network(ad::Tape& t, const Genome& genome, ParamBank& bank,
                                     const Matrix& features, const AdjacencyContext& ctx,
                                     const MaskOpParams& mask_params,
                                     const ForwardOptions& opts) {
    const int depth = effective_depth(genome);
    LayerIO io{t.constant(features), ctx.adj, ctx.adj};
    std::vector<ad::Var> collected;
    ForwardResult res;
    for (int l = 1; l <= depth; ++l) {
        const LayerGene& gene = genome.layers[static_cast<size_t>(l - 1)];
        io = forward_layer(t, gene, l, io, bank, ctx, features, mask_params, opts);
        res.layer_masks.push_back(io.mask);
        if (gene.skip == SkipOp::Identity) collected.push_back(io.hidden);
    }

    ad::Var agg;
    switch (genome.layer_aggr) {
        case LayerAggrOp::Concat: {
            agg = collected[0];
            for (size_t i = 1; i < collected.size(); ++i) agg = t.concat_cols(agg, collected[i]);
            break;
        }
        case LayerAggrOp::Max: {
            agg = collected[0];
            for (size_t i = 1; i < collected.size(); ++i)
                agg = t.elementwise_max(agg, collected[i]);
            break;
        }
        case LayerAggrOp::LSTM: {
            int hidden = t.val(collected[0]).cols();
            agg = fwd_detail::lstm_layer_aggr(t, collected, bank, hidden);
            break;
        }
    }

    agg = fwd_detail::dropout(t, agg, opts.linear_dropout, opts);
    int width = genome.layer_aggr == LayerAggrOp::Concat
                    ? static_cast<int>(collected.size())
                    : 0;
    ad::Var logits = t.add_rowvec(
        t.matmul(agg, t.param(bank.at(names::classifier(genome.layer_aggr, width, "W")))),
        t.param(bank.at(names::classifier(genome.layer_aggr, width, "b"))));
    res.logits = logits;
    return res;
}

} // namespace gnas
