#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "gnas/attacks.hpp"
#include "gnas/supernet.hpp"

namespace gnas {

/// Sum_i p_i * log((p_i + eps)/(q_i + eps)). The floor keeps underflowed softmax
/// outputs out of the logs; the result is >= 0 up to eps-induced error.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                            double eps = 1e-12) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
    double sp = 0, sq = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
        throw std::invalid_argument("kl_divergence: inputs must sum to 1");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log((p[i] + eps) / (q[i] + eps));
    return kl;
}

struct RobustnessResult {
    double r = 0.0;                      // <= 0
    std::vector<double> per_proxy_kl;    // mean KL per perturbed graph
};

namespace robdetail {

inline double row_kl(const Matrix& p, const Matrix& q, int i, double eps) {
    double kl = 0.0;
    for (int c = 0; c < p.cols(); ++c)
        kl += p(i, c) * std::log((p(i, c) + eps) / (q(i, c) + eps));
    // the eps floor can push an exact-zero divergence a hair negative; the metric
    // treats divergences as nonnegative so R stays <= 0 exactly
    return std::max(kl, 0.0);
}

inline RobustnessResult negated_mean_kl(const Matrix& clean,
                                        const std::vector<Matrix>& perturbed) {
    if (perturbed.empty()) throw std::invalid_argument("robustness metric: no proxies");
    const double eps = 1e-12;
    RobustnessResult res;
    const int n = clean.rows();
    double total = 0.0;
    for (const Matrix& q : perturbed) {
        require_shape(clean, q, "robustness metric");
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += row_kl(clean, q, i, eps);
        res.per_proxy_kl.push_back(sum / n);
        total += sum;
    }
    res.r = -total / (static_cast<double>(perturbed.size()) * n);
    if (!(res.r <= 0.0)) throw std::runtime_error("robustness metric: R > 0");
    return res;
}

} // namespace robdetail

/// R = -(1/(T N)) sum_t sum_i KL(f(A)_i || f(A'_t)_i), over ALL nodes.
/// `infer_on_adj` evaluates the frozen model on an adjacency context.
inline RobustnessResult robustness_metric(
    const std::function<Matrix(const AdjacencyContext&)>& infer_on_adj,
    const AdjacencyContext& clean, const std::vector<AdjacencyContext>& proxies) {
    Matrix base = infer_on_adj(clean);
    std::vector<Matrix> perturbed;
    perturbed.reserve(proxies.size());
    for (const auto& ctx : proxies) perturbed.push_back(infer_on_adj(ctx));
    return robdetail::negated_mean_kl(base, perturbed);
}

/// Feature-attack variant: same formula with X' substituted for A'.
inline RobustnessResult robustness_metric_features(
    const std::function<Matrix(const Matrix& features)>& infer_on_features,
    const Matrix& clean_features, const std::vector<Matrix>& feature_proxies) {
    Matrix base = infer_on_features(clean_features);
    std::vector<Matrix> perturbed;
    perturbed.reserve(feature_proxies.size());
    for (const Matrix& x : feature_proxies) perturbed.push_back(infer_on_features(x));
    return robdetail::negated_mean_kl(base, perturbed);
}

struct RobustnessReport {
    Genome genome;
    double r = 0.0;
    double acc_val = 0.0;
    double fitness = 0.0;
    std::vector<double> per_proxy_kl;
};

inline nlohmann::ordered_json report_to_json(const RobustnessReport& r) {
    nlohmann::ordered_json j;
    j["genome"] = genome_to_json(r.genome);
    j["genome_id"] = genome_id(r.genome);
    j["acc_val"] = r.acc_val;
    j["robustness"] = r.r;
    j["fitness"] = r.fitness;
    j["per_proxy_kl"] = r.per_proxy_kl;
    return j;
}

/// Shared evaluation state for scoring many genomes against one frozen supernet:
/// the clean context, the proxy set and a mask cache.
struct FitnessContext {
    const Supernet* net = nullptr;
    const Graph* graph = nullptr;
    AdjacencyContext clean;
    const ProxySet* proxies = nullptr;
    std::vector<int> val_nodes;
    uint64_t features_key = 0;
    std::shared_ptr<MaskCache> cache = std::make_shared<MaskCache>();

    static FitnessContext build(const Supernet& net, const Graph& graph,
                                const ProxySet& proxies) {
        FitnessContext ctx;
        ctx.net = &net;
        ctx.graph = &graph;
        ctx.clean = AdjacencyContext::build(graph.dense_adj);
        ctx.proxies = &proxies;
        ctx.val_nodes = graph.val_nodes();
        if (ctx.val_nodes.empty())
            throw std::invalid_argument("fitness: graph has no validation nodes");
        ctx.features_key = Graph::matrix_content_hash(graph.features);
        return ctx;
    }
};

/// fitness = ACC_val + lambda * R, both computed with supernet inference.
inline RobustnessReport fitness_report(const FitnessContext& ctx, const Genome& genome,
                                       double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("fitness: lambda < 0");
    RobustnessReport rep;
    rep.genome = genome;
    auto run = [&](const AdjacencyContext& actx) {
        return infer(*ctx.net, genome, ctx.graph->features, ctx.features_key, actx,
                     ctx.cache.get());
    };
    Matrix clean_probs = run(ctx.clean);
    rep.acc_val = accuracy(clean_probs, ctx.graph->labels, ctx.val_nodes);

    std::vector<Matrix> perturbed;
    perturbed.reserve(ctx.proxies->proxies.size());
    for (const auto& pctx : ctx.proxies->proxies) perturbed.push_back(run(pctx));
    RobustnessResult rr = robdetail::negated_mean_kl(clean_probs, perturbed);
    rep.r = rr.r;
    rep.per_proxy_kl = std::move(rr.per_proxy_kl);
    rep.fitness = rep.acc_val + lambda * rep.r;
    if (!std::isfinite(rep.fitness)) throw std::runtime_error("fitness: non-finite value");
    return rep;
}

} // namespace gnas
