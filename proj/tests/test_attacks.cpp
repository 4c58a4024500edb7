#include <catch2/catch.hpp>

#include "gnas/attacks.hpp"
#include "gnas/sbm.hpp"

using namespace gnas;

namespace {

Graph attack_fixture(uint64_t seed = 1) {
    Graph g = generate_sbm(SbmParams{.blocks = 2,
                                     .nodes_per_block = 25,
                                     .p_in = 0.4,
                                     .p_out = 0.05,
                                     .feature_dim = 4,
                                     .feature_noise = 0.5,
                                     .seed = seed});
    return split_nodes(g, 0.4, 0.2, 0.4, seed);
}

int upper_triangle_diff(const Matrix& a, const Matrix& b) {
    int diff = 0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = i + 1; j < a.cols(); ++j) diff += a(i, j) != b(i, j);
    return diff;
}

} // namespace

TEST_CASE("random attack flips exactly the budget on distinct pairs") {
    Graph g = attack_fixture();
    Rng rng(5);
    Matrix adj = attack_random(g, 12, rng);
    REQUIRE(upper_triangle_diff(adj, g.dense_adj) == 12);
    REQUIRE(max_abs_diff(adj, transpose(adj)) == 0.0);
    for (int i = 0; i < g.n; ++i) REQUIRE(adj(i, i) == 0.0);
    for (double v : adj.data()) REQUIRE((v == 0.0 || v == 1.0));
}

TEST_CASE("budget arithmetic: ceil(rate * |E|)") {
    Graph g = attack_fixture();
    REQUIRE(edge_flip_budget(g, 0.05) == static_cast<int>(std::ceil(0.05 * g.num_edges())));
    // 5% of 100 edges -> 5
    Graph h = g;
    h.edges.resize(100);
    h.finalize();
    REQUIRE(edge_flip_budget(h, 0.05) == 5);
}

TEST_CASE("random attack determinism and budget overflow") {
    Graph g = attack_fixture();
    Rng a(9), b(9);
    REQUIRE(attack_random(g, 7, a).data() == attack_random(g, 7, b).data());
    Rng c(9);
    REQUIRE_THROWS_WITH(attack_random(g, g.n * g.n, c), Catch::Contains("exceeds"));
}

TEST_CASE("DICE only deletes intra-class and inserts cross-class among train nodes") {
    Graph g = attack_fixture(7);
    Rng rng(11);
    Matrix adj = attack_dice(g, 30, rng);
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j) {
            if (adj(i, j) == g.dense_adj(i, j)) continue;
            // touched pair: both endpoints must be training nodes
            REQUIRE(g.split[i] == Split::Train);
            REQUIRE(g.split[j] == Split::Train);
            if (adj(i, j) == 0.0) // deletion
                REQUIRE(g.labels[i] == g.labels[j]);
            else // insertion
                REQUIRE(g.labels[i] != g.labels[j]);
        }
    REQUIRE(upper_triangle_diff(adj, g.dense_adj) == 30);
}

TEST_CASE("DICE falls back when one pool empties and errors when both do") {
    // two same-label training nodes, one edge: deletable pool size 1, insertable 0
    Graph g;
    g.n = 2;
    g.feature_dim = 1;
    g.num_classes = 2;
    g.edges = {{0, 1}};
    g.features = Matrix(2, 1, 1.0);
    g.labels = {0, 0};
    g.split = {Split::Train, Split::Train};
    g.finalize();
    Rng rng(3);
    REQUIRE_THROWS_WITH(attack_dice(g, 1, rng), Catch::Contains("two classes"));

    // with two classes: one deletable intra edge, one insertable cross pair
    Graph h;
    h.n = 4;
    h.feature_dim = 1;
    h.num_classes = 2;
    h.edges = {{0, 1}};  // same-label edge (labels 0,0); nodes 2,3 have label 1
    h.features = Matrix(4, 1, 1.0);
    h.labels = {0, 0, 1, 1};
    h.split = {Split::Train, Split::Train, Split::Train, Split::Train};
    h.finalize();
    Rng r2(3);
    // capacity: 1 deletion + 4 insertions (0-2, 0-3, 1-2, 1-3) = 5 flips max
    Matrix adj = attack_dice(h, 5, r2);
    REQUIRE(upper_triangle_diff(adj, h.dense_adj) == 5);
    Rng r3(3);
    REQUIRE_THROWS_WITH(attack_dice(h, 6, r3), Catch::Contains("exhausted"));
}

TEST_CASE("DICE is deterministic under a fixed seed") {
    Graph g = attack_fixture(7);
    Rng a(21), b(21);
    REQUIRE(attack_dice(g, 15, a).data() == attack_dice(g, 15, b).data());
}

TEST_CASE("proxy sets contain T distinct perturbations and reproduce by seed") {
    Graph g = attack_fixture(9);
    AttackProxyConfig cfg;
    cfg.ptb_rate = 0.05;
    cfg.T = 5;
    cfg.seed = 77;
    ProxySet s1 = generate_proxy_set(g, cfg);
    ProxySet s2 = generate_proxy_set(g, cfg);
    REQUIRE(s1.proxies.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        REQUIRE(s1.proxies[i].adj.data() == s2.proxies[i].adj.data());
        for (size_t j = i + 1; j < 5; ++j)
            REQUIRE(s1.proxies[i].key != s1.proxies[j].key); // pairwise different
    }
    // the original graph is untouched
    REQUIRE(g.adj_hash == Graph::matrix_content_hash(g.dense_adj));
}

TEST_CASE("a tiny rate still yields at least one flip") {
    Graph g = attack_fixture(2);
    AttackProxyConfig cfg;
    cfg.ptb_rate = 1e-4; // ceil -> 1
    cfg.T = 1;
    ProxySet s = generate_proxy_set(g, cfg);
    REQUIRE(upper_triangle_diff(s.proxies[0].adj, g.dense_adj) == 1);
}

TEST_CASE("feature proxies toggle distinct cells over the nonzero mass") {
    Graph g = attack_fixture(4);
    auto proxies = generate_feature_proxies(g, 0.05, 3, 5);
    REQUIRE(proxies.size() == 3);
    long nnz = 0;
    for (double v : g.features.data()) nnz += v != 0.0;
    int budget = static_cast<int>(std::ceil(0.05 * nnz));
    for (const Matrix& x : proxies) {
        int diff = 0;
        for (size_t i = 0; i < x.size(); ++i) diff += x.data()[i] != g.features.data()[i];
        REQUIRE(diff == budget);
    }
    auto again = generate_feature_proxies(g, 0.05, 3, 5);
    REQUIRE(again[0].data() == proxies[0].data());
}
