#include <catch2/catch.hpp>

#include <cmath>

#include "gnas/evolution.hpp"
#include "gnas/robustness.hpp"
#include "gnas/sbm.hpp"

using namespace gnas;

namespace {

Graph fixture_graph(uint64_t seed = 5) {
    Graph g = generate_sbm(SbmParams{.blocks = 2,
                                     .nodes_per_block = 20,
                                     .p_in = 0.5,
                                     .p_out = 0.05,
                                     .feature_dim = 5,
                                     .feature_noise = 0.6,
                                     .seed = seed});
    return split_nodes(g, 0.3, 0.2, 0.5, seed);
}

} // namespace

TEST_CASE("kl divergence analytic values") {
    REQUIRE(kl_divergence({0.5, 0.5}, {0.5, 0.5}) == Approx(0.0).margin(1e-9));
    REQUIRE(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == Approx(std::log(2.0)).margin(1e-6));
    SECTION("matches an independent scalar recomputation") {
        std::vector<double> p{0.1, 0.2, 0.3, 0.4};
        std::vector<double> q{0.25, 0.25, 0.25, 0.25};
        double expect = 0.0;
        for (size_t i = 0; i < 4; ++i)
            expect += p[i] * std::log((p[i] + 1e-12) / (q[i] + 1e-12));
        REQUIRE(kl_divergence(p, q) == Approx(expect).margin(1e-10));
    }
    SECTION("errors") {
        REQUIRE_THROWS_WITH(kl_divergence({1.0}, {0.5, 0.5}), Catch::Contains("length"));
        REQUIRE_THROWS_WITH(kl_divergence({0.7, 0.7}, {0.5, 0.5}), Catch::Contains("sum to 1"));
    }
}

TEST_CASE("robustness metric is exactly zero when proxies equal A") {
    // hand-stub inference keyed by adjacency identity
    Graph g = fixture_graph();
    AdjacencyContext clean = AdjacencyContext::build(g.dense_adj);
    std::vector<AdjacencyContext> proxies;
    proxies.push_back(AdjacencyContext::build(g.dense_adj));
    proxies.push_back(AdjacencyContext::build(g.dense_adj));
    auto stub = [&](const AdjacencyContext& ctx) {
        Matrix p(g.n, 2);
        for (int i = 0; i < g.n; ++i) {
            p(i, 0) = 0.25 + 1e-3 * (i % 7);
            p(i, 1) = 1.0 - p(i, 0);
        }
        (void)ctx;
        return p;
    };
    RobustnessResult r = robustness_metric(stub, clean, proxies);
    REQUIRE(r.r == 0.0);
    REQUIRE(r.per_proxy_kl == std::vector<double>{0.0, 0.0});
}

TEST_CASE("robustness metric matches a hand-filled probability table") {
    // 4 nodes, 2 classes, T = 2: R = -(1/(2*4)) * sum of the eight KL terms
    Matrix clean_probs(4, 2);
    Matrix p1(4, 2), p2(4, 2);
    double c[4] = {0.9, 0.6, 0.3, 0.5};
    double a1[4] = {0.8, 0.5, 0.35, 0.5};
    double a2[4] = {0.7, 0.65, 0.2, 0.45};
    for (int i = 0; i < 4; ++i) {
        clean_probs(i, 0) = c[i];
        clean_probs(i, 1) = 1 - c[i];
        p1(i, 0) = a1[i];
        p1(i, 1) = 1 - a1[i];
        p2(i, 0) = a2[i];
        p2(i, 1) = 1 - a2[i];
    }
    auto kl2 = [](double p, double q) {
        return p * std::log((p + 1e-12) / (q + 1e-12)) +
               (1 - p) * std::log((1 - p + 1e-12) / (1 - q + 1e-12));
    };
    double hand = 0.0;
    for (int i = 0; i < 4; ++i) hand += kl2(c[i], a1[i]) + kl2(c[i], a2[i]);
    hand = -hand / (2.0 * 4.0);

    Matrix which(1, 1); // stub dispatch: 0 -> clean, 1 -> p1, 2 -> p2
    int call = 0;
    auto stub = [&](const AdjacencyContext&) {
        Matrix out = call == 0 ? clean_probs : (call == 1 ? p1 : p2);
        ++call;
        return out;
    };
    AdjacencyContext dummy = AdjacencyContext::build(Matrix(4, 4));
    std::vector<AdjacencyContext> proxies;
    proxies.push_back(AdjacencyContext::build(Matrix(4, 4)));
    proxies.push_back(AdjacencyContext::build(Matrix(4, 4)));
    RobustnessResult r = robustness_metric(stub, dummy, proxies);
    REQUIRE(r.r == Approx(hand).margin(1e-10));
    REQUIRE(r.r <= 0.0);
    (void)which;
}

TEST_CASE("robustness metric through the supernet is nonpositive on random proxy sets") {
    Graph g = fixture_graph(11);
    SearchSpaceConfig space;
    space.max_layers = 2;
    space.hidden_dim = 6;
    Supernet net = build_supernet(space, {g.feature_dim, 6, g.num_classes}, 13);
    AttackProxyConfig pcfg;
    pcfg.ptb_rate = 0.05;
    pcfg.T = 3;
    Rng seeds(17);
    Rng genomes(18);
    for (int trial = 0; trial < 10; ++trial) {
        pcfg.seed = seeds.next();
        ProxySet proxies = generate_proxy_set(g, pcfg);
        FitnessContext fctx = FitnessContext::build(net, g, proxies);
        RobustnessReport rep = fitness_report(fctx, random_genome(space, genomes), 0.05);
        REQUIRE(rep.r <= 0.0);
        REQUIRE(std::isfinite(rep.fitness));
        REQUIRE(rep.per_proxy_kl.size() == 3);
    }
}

TEST_CASE("feature-attack variant: zero when X' = X, nonpositive otherwise") {
    Graph g = fixture_graph(19);
    SearchSpaceConfig space;
    space.max_layers = 1;
    space.hidden_dim = 5;
    Supernet net = build_supernet(space, {g.feature_dim, 5, g.num_classes}, 3);
    Genome genome = recover_named_arch("GCN");
    AdjacencyContext ctx = AdjacencyContext::build(g.dense_adj);
    auto infer_features = [&](const Matrix& x) {
        return infer(net, genome, x, Graph::matrix_content_hash(x), ctx);
    };
    RobustnessResult same =
        robustness_metric_features(infer_features, g.features, {g.features, g.features});
    REQUIRE(same.r == 0.0);

    auto proxies = generate_feature_proxies(g, 0.1, 3, 4);
    RobustnessResult perturbed = robustness_metric_features(infer_features, g.features, proxies);
    REQUIRE(perturbed.r <= 0.0);
    REQUIRE(perturbed.r < 0.0); // flips on a tenth of the mass must move something
}

TEST_CASE("fitness arithmetic and the lambda = 0 ablation") {
    Graph g = fixture_graph(23);
    SearchSpaceConfig space;
    space.max_layers = 2;
    space.hidden_dim = 6;
    Supernet net = build_supernet(space, {g.feature_dim, 6, g.num_classes}, 29);
    AttackProxyConfig pcfg;
    pcfg.seed = 1;
    ProxySet proxies = generate_proxy_set(g, pcfg);
    FitnessContext fctx = FitnessContext::build(net, g, proxies);
    Genome genome = recover_named_arch("GNN-Guard");

    RobustnessReport with_rob = fitness_report(fctx, genome, 0.05);
    REQUIRE(with_rob.fitness == Approx(with_rob.acc_val + 0.05 * with_rob.r).margin(1e-15));

    // lambda = 0: fitness is the validation accuracy, independent of the proxies
    RobustnessReport ablated = fitness_report(fctx, genome, 0.0);
    REQUIRE(ablated.fitness == ablated.acc_val);
    pcfg.seed = 999;
    ProxySet other = generate_proxy_set(g, pcfg);
    FitnessContext fctx2 = FitnessContext::build(net, g, other);
    RobustnessReport ablated2 = fitness_report(fctx2, genome, 0.0);
    REQUIRE(ablated2.fitness == ablated.fitness);

    // fixture arithmetic: acc 0.8, R = -0.4, lambda 0.05 -> 0.78
    RobustnessReport fake;
    fake.acc_val = 0.8;
    fake.r = -0.4;
    fake.fitness = fake.acc_val + 0.05 * fake.r;
    REQUIRE(fake.fitness == Approx(0.78).margin(1e-12));
}
