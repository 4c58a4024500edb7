#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "gnas/graph.hpp"
#include "gnas/layer_forward.hpp"
#include "gnas/rng.hpp"

namespace gnas {

struct AttackProxyConfig {
    enum class Kind { Random, Dice };
    Kind kind = Kind::Random;
    double ptb_rate = 0.05;
    int T = 5;
    uint64_t seed = 0;

    void validate() const {
        if (ptb_rate <= 0.0 || ptb_rate >= 1.0)
            throw std::invalid_argument("proxy config: ptb_rate outside (0,1)");
        if (T < 1) throw std::invalid_argument("proxy config: T < 1");
    }
};

inline AttackProxyConfig::Kind attack_kind_from_name(const std::string& s) {
    if (s == "random") return AttackProxyConfig::Kind::Random;
    if (s == "dice") return AttackProxyConfig::Kind::Dice;
    throw std::runtime_error("unknown attack kind '" + s + "' (random|dice)");
}

/// ceil(rate * |E|), the edge-flip budget for a perturbation rate.
inline int edge_flip_budget(const Graph& g, double rate) {
    return static_cast<int>(std::ceil(rate * g.num_edges()));
}

/// Random structure attack: `budget` distinct unordered pairs (i != j), each
/// toggled (edge removed if present, added if absent). Output stays symmetric
/// and binary with a zero diagonal.
inline Matrix attack_random(const Graph& g, int budget, Rng& rng) {
    if (budget < 1) throw std::invalid_argument("attack_random: budget < 1");
    const long pairs = static_cast<long>(g.n) * (g.n - 1) / 2;
    if (budget > pairs) throw std::runtime_error("attack_random: budget exceeds flippable pairs");
    Matrix adj = g.dense_adj;
    std::set<std::pair<int, int>> chosen;
    while (static_cast<int>(chosen.size()) < budget) {
        int i = rng.uniform_int(0, g.n - 1);
        int j = rng.uniform_int(0, g.n - 1);
        if (i == j) continue;
        auto p = std::minmax(i, j);
        if (!chosen.insert({p.first, p.second}).second) continue;
        double v = adj(p.first, p.second) > 0 ? 0.0 : 1.0;
        adj(p.first, p.second) = v;
        adj(p.second, p.first) = v;
    }
    return adj;
}

/// DICE: per flip, delete a random same-label edge w.p. 1/2, else insert a random
/// different-label non-edge. Only training-node labels are consulted, so both
/// endpoints of every touched pair are training nodes. When one action runs out
/// of candidates the other is used; when both are exhausted this errors.
inline Matrix attack_dice(const Graph& g, int budget, Rng& rng) {
    if (budget < 1) throw std::invalid_argument("attack_dice: budget < 1");
    auto train = g.train_nodes();
    {
        std::set<int> labels_seen;
        for (int i : train) labels_seen.insert(g.labels[i]);
        if (labels_seen.size() < 2)
            throw std::runtime_error("attack_dice: need two classes among training nodes");
    }
    Matrix adj = g.dense_adj;

    std::vector<std::pair<int, int>> deletable; // same-label training edges
    std::vector<std::pair<int, int>> insertable; // different-label training non-edges
    for (size_t a = 0; a < train.size(); ++a)
        for (size_t b = a + 1; b < train.size(); ++b) {
            int u = train[a], v = train[b];
            bool edge = adj(u, v) > 0;
            bool same = g.labels[u] == g.labels[v];
            if (edge && same) deletable.emplace_back(u, v);
            if (!edge && !same) insertable.emplace_back(u, v);
        }

    for (int flip = 0; flip < budget; ++flip) {
        bool delete_first = rng.bernoulli(0.5);
        auto act = [&](bool del) -> bool {
            auto& pool = del ? deletable : insertable;
            if (pool.empty()) return false;
            size_t pick = rng.pick_index(pool);
            auto [u, v] = pool[pick];
            pool[pick] = pool.back();
            pool.pop_back();
            double val = del ? 0.0 : 1.0;
            adj(u, v) = val;
            adj(v, u) = val;
            return true;
        };
        if (!act(delete_first) && !act(!delete_first))
            throw std::runtime_error("attack_dice: both candidate pools exhausted at flip " +
                                     std::to_string(flip));
    }
    return adj;
}

/// T perturbed adjacencies from independent sub-seeds, with prebuilt contexts.
struct ProxySet {
    std::vector<AdjacencyContext> proxies;
};

inline ProxySet generate_proxy_set(const Graph& g, const AttackProxyConfig& cfg) {
    cfg.validate();
    int budget = edge_flip_budget(g, cfg.ptb_rate);
    ProxySet set;
    for (int t = 0; t < cfg.T; ++t) {
        Rng rng(sub_seed(cfg.seed, "proxy", static_cast<uint64_t>(t)));
        Matrix adj = cfg.kind == AttackProxyConfig::Kind::Random
                         ? attack_random(g, budget, rng)
                         : attack_dice(g, budget, rng);
        set.proxies.push_back(AdjacencyContext::build(std::move(adj)));
    }
    return set;
}

/// Feature-attack proxies: distinct feature cells toggled (nonzero -> 0,
/// zero -> 1), budget = ceil(rate * nnz(X)).
inline std::vector<Matrix> generate_feature_proxies(const Graph& g, double ptb_rate, int T,
                                                    uint64_t seed) {
    if (ptb_rate <= 0.0 || ptb_rate >= 1.0)
        throw std::invalid_argument("feature proxies: ptb_rate outside (0,1)");
    long nnz = 0;
    for (double v : g.features.data()) nnz += v != 0.0;
    int budget = static_cast<int>(std::ceil(ptb_rate * static_cast<double>(nnz)));
    budget = std::max(budget, 1);
    std::vector<Matrix> out;
    for (int t = 0; t < T; ++t) {
        Rng rng(sub_seed(seed, "feature-proxy", static_cast<uint64_t>(t)));
        Matrix x = g.features;
        std::set<std::pair<int, int>> cells;
        while (static_cast<int>(cells.size()) < budget) {
            int i = rng.uniform_int(0, x.rows() - 1);
            int k = rng.uniform_int(0, x.cols() - 1);
            if (!cells.insert({i, k}).second) continue;
            x(i, k) = x(i, k) != 0.0 ? 0.0 : 1.0;
        }
        out.push_back(std::move(x));
    }
    return out;
}

} // namespace gnas
