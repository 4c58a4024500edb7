#include <catch2/catch.hpp>

#include "gnas/sbm.hpp"

using namespace gnas;

TEST_CASE("degenerate probabilities give disjoint cliques") {
    Graph g = generate_sbm(SbmParams{.blocks = 2,
                                     .nodes_per_block = 3,
                                     .p_in = 1.0,
                                     .p_out = 0.0,
                                     .feature_dim = 2,
                                     .feature_noise = 0.0,
                                     .seed = 0});
    REQUIRE(g.n == 6);
    REQUIRE(g.num_edges() == 6); // two 3-cliques
    for (auto [u, v] : g.edges) REQUIRE(g.labels[u] == g.labels[v]);
}

TEST_CASE("same seed reproduces the graph byte for byte") {
    SbmParams p{.blocks = 3,
                .nodes_per_block = 12,
                .p_in = 0.4,
                .p_out = 0.05,
                .feature_dim = 5,
                .feature_noise = 0.7,
                .seed = 99};
    Graph a = generate_sbm(p);
    Graph b = generate_sbm(p);
    REQUIRE(a.edges == b.edges);
    REQUIRE(a.features.data() == b.features.data());
    REQUIRE(a.adj_hash == b.adj_hash);
}

TEST_CASE("edge counts track the binomial expectation over 20 seeds") {
    // independent oracle: E[intra] = B*C(m,2)*p_in, E[inter] = (C(n,2)-B*C(m,2))*p_out,
    // each checked within 3 sigma of its binomial deviation
    const int blocks = 4, m = 100;
    const double p_in = 0.2, p_out = 0.02;
    const long intra_pairs = blocks * (long(m) * (m - 1) / 2);
    const long n = blocks * m;
    const long inter_pairs = n * (n - 1) / 2 - intra_pairs;
    const double mu_in = intra_pairs * p_in;
    const double sd_in = std::sqrt(intra_pairs * p_in * (1 - p_in));
    const double mu_out = inter_pairs * p_out;
    const double sd_out = std::sqrt(inter_pairs * p_out * (1 - p_out));

    for (uint64_t seed = 0; seed < 20; ++seed) {
        Graph g = generate_sbm(SbmParams{.blocks = blocks,
                                         .nodes_per_block = m,
                                         .p_in = p_in,
                                         .p_out = p_out,
                                         .feature_dim = 4,
                                         .feature_noise = 1.0,
                                         .seed = seed});
        long intra = 0, inter = 0;
        for (auto [u, v] : g.edges) (g.labels[u] == g.labels[v] ? intra : inter)++;
        REQUIRE(std::abs(intra - mu_in) <= 3.0 * sd_in);
        REQUIRE(std::abs(inter - mu_out) <= 3.0 * sd_out);
    }
}

TEST_CASE("rejects inverted homophily and zero nodes") {
    SbmParams p;
    p.p_in = 0.1;
    p.p_out = 0.5;
    REQUIRE_THROWS(generate_sbm(p));
    SbmParams q;
    q.blocks = 0;
    REQUIRE_THROWS(generate_sbm(q));
}

TEST_CASE("split sizes and determinism") {
    Graph g = generate_sbm(SbmParams{.blocks = 2,
                                     .nodes_per_block = 50,
                                     .p_in = 0.3,
                                     .p_out = 0.05,
                                     .feature_dim = 3,
                                     .feature_noise = 0.5,
                                     .seed = 7});
    Graph s = split_nodes(g, 0.1, 0.1, 0.8, 3);
    REQUIRE(s.train_nodes().size() == 10);
    REQUIRE(s.val_nodes().size() == 10);
    REQUIRE(s.test_nodes().size() == 80);

    Graph s2 = split_nodes(g, 0.1, 0.1, 0.8, 3);
    REQUIRE(s.split == s2.split);

    Graph s3 = split_nodes(g, 0.1, 0.1, 0.8, 4);
    REQUIRE(s.split != s3.split);

    Graph all_train = split_nodes(g, 1.0, 0.0, 0.0, 3);
    REQUIRE(all_train.train_nodes().size() == 100);

    // disjointness
    for (int i = 0; i < s.n; ++i) {
        int tags = (s.split[i] == Split::Train) + (s.split[i] == Split::Val) +
                   (s.split[i] == Split::Test);
        REQUIRE(tags <= 1);
    }
}

TEST_CASE("split errors when a class has no training node") {
    Graph g = generate_sbm(SbmParams{.blocks = 4,
                                     .nodes_per_block = 2,
                                     .p_in = 1.0,
                                     .p_out = 0.0,
                                     .feature_dim = 2,
                                     .feature_noise = 0.1,
                                     .seed = 5});
    // 8 nodes, 4 classes, 12% train = 0 or 1 nodes -> some class uncovered
    REQUIRE_THROWS_WITH(split_nodes(g, 0.25, 0.25, 0.5, 0),
                        Catch::Contains("no training node"));
}
