#include <catch2/catch.hpp>

#include <map>
#include <set>

#include "gnas/search_space.hpp"
#include "support/stats.hpp"

using namespace gnas;

TEST_CASE("random genomes are valid and deterministic") {
    SearchSpaceConfig space;
    Rng a(5), b(5);
    for (int i = 0; i < 200; ++i) {
        Genome g = random_genome(space, a);
        REQUIRE(is_valid(g, space));
        REQUIRE(g == random_genome(space, b));
    }
}

TEST_CASE("mask ops are drawn uniformly at the first layer") {
    SearchSpaceConfig space;
    space.max_layers = 1;
    Rng rng(11);
    std::map<MaskOp, long> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[random_genome(space, rng).layers[0].mask]++;
    std::vector<long> c;
    for (auto& [op, k] : counts) c.push_back(k);
    REQUIRE(c.size() == 5);
    double p = gnas::test::chi_square_p_value(gnas::test::chi_square_uniform_stat(c, draws),
                                              static_cast<int>(c.size()) - 1);
    REQUIRE(p > 0.01);
}

TEST_CASE("validity rules") {
    SearchSpaceConfig space;
    SECTION("LRA beyond the first layer is flagged") {
        Genome g = recover_named_arch("JK-Net", 2);
        g.layers[1].mask = MaskOp::LRA;
        auto v = validate_genome(g, space);
        REQUIRE(v.size() == 1);
        REQUIRE_THAT(v[0], Catch::Contains("first-layer-only"));
        REQUIRE_THAT(v[0], Catch::Contains("layer 2"));
    }
    SECTION("all-Zero skips are flagged") {
        Genome g = recover_named_arch("JK-Net", 3);
        for (auto& l : g.layers) l.skip = SkipOp::Zero;
        auto v = validate_genome(g, space);
        REQUIRE(v.size() == 1);
        REQUIRE_THAT(v[0], Catch::Contains("no contributing layer"));
    }
    SECTION("a recovered GCN genome is valid") {
        REQUIRE(is_valid(recover_named_arch("GCN"), space));
    }
    SECTION("ops outside a restricted vocabulary are flagged") {
        SearchSpaceConfig narrow;
        narrow.coeff_ops = {CoeffOp::GCN};
        Genome g = recover_named_arch("GAT");
        REQUIRE_FALSE(is_valid(g, narrow));
    }
}

TEST_CASE("effective depth is the last Identity skip") {
    Genome g = recover_named_arch("JK-Net", 4);
    g.layers[1].skip = SkipOp::Zero;
    g.layers[3].skip = SkipOp::Zero;
    REQUIRE(effective_depth(g) == 3); // skips [Id, Zero, Id, Zero]
    REQUIRE(effective_depth(recover_named_arch("GCN")) == 1);
    Genome two = recover_named_arch("JK-Net", 2);
    two.layers[0].skip = SkipOp::Zero;
    REQUIRE(effective_depth(two) == 2);
}

TEST_CASE("mutation respects p and repairs validity") {
    SearchSpaceConfig space;
    Rng rng(31);
    Genome parent = random_genome(space, rng);
    SECTION("p = 0 leaves the genome unchanged") {
        Genome child = mutate(parent, space, 0.0, rng);
        REQUIRE(child == parent);
    }
    SECTION("p = 1 changes every gene with an alternative") {
        Genome child = mutate(parent, space, 1.0, rng);
        // repair may restore a skip gene, so compare gene-wise where free
        for (size_t i = 0; i < parent.layers.size(); ++i) {
            REQUIRE(child.layers[i].coeff != parent.layers[i].coeff);
            REQUIRE(child.layers[i].aggr != parent.layers[i].aggr);
            REQUIRE(child.layers[i].comb != parent.layers[i].comb);
            REQUIRE(child.layers[i].mask != parent.layers[i].mask);
        }
        REQUIRE(child.layer_aggr != parent.layer_aggr);
        REQUIRE(is_valid(child, space));
    }
    SECTION("empirical per-gene flip rate at p = 0.1") {
        const int trials = 10000;
        long flips = 0, genes = 0;
        for (int t = 0; t < trials; ++t) {
            Genome child = mutate(parent, space, 0.1, rng);
            // count over coeff/aggr/comb genes -- never touched by repair
            for (size_t i = 0; i < parent.layers.size(); ++i) {
                flips += child.layers[i].coeff != parent.layers[i].coeff;
                flips += child.layers[i].aggr != parent.layers[i].aggr;
                flips += child.layers[i].comb != parent.layers[i].comb;
                genes += 3;
            }
        }
        double rate = double(flips) / double(genes);
        REQUIRE(rate == Approx(0.1).margin(0.01));
    }
    SECTION("mutants are always valid") {
        for (int t = 0; t < 500; ++t) {
            parent = random_genome(space, rng);
            REQUIRE(is_valid(mutate(parent, space, 0.3, rng), space));
        }
    }
}

TEST_CASE("crossover is a uniform gene mix of the parents") {
    SearchSpaceConfig space;
    Rng rng(37);
    SECTION("identical parents reproduce themselves") {
        Genome g = random_genome(space, rng);
        REQUIRE(crossover(g, g, space, rng) == g);
    }
    SECTION("children only carry parental genes") {
        for (int t = 0; t < 200; ++t) {
            Genome a = random_genome(space, rng);
            Genome b = random_genome(space, rng);
            Genome c = crossover(a, b, space, rng);
            for (size_t i = 0; i < c.layers.size(); ++i) {
                bool mask_ok = c.layers[i].mask == a.layers[i].mask ||
                               c.layers[i].mask == b.layers[i].mask;
                bool coeff_ok = c.layers[i].coeff == a.layers[i].coeff ||
                                c.layers[i].coeff == b.layers[i].coeff;
                REQUIRE(mask_ok);
                REQUIRE(coeff_ok);
            }
            REQUIRE((c.layer_aggr == a.layer_aggr || c.layer_aggr == b.layer_aggr));
            REQUIRE(is_valid(c, space));
        }
    }
    SECTION("per-gene parent frequency is about one half") {
        // maximally different parents on the coeff gene
        Genome a = recover_named_arch("JK-Net", 3);
        Genome b = a;
        for (auto& l : b.layers) l.coeff = CoeffOp::GAT;
        long from_a = 0, total = 0;
        for (int t = 0; t < 10000; ++t) {
            Genome c = crossover(a, b, space, rng);
            for (auto& l : c.layers) {
                from_a += l.coeff == CoeffOp::GCN;
                ++total;
            }
        }
        REQUIRE(double(from_a) / double(total) == Approx(0.5).margin(0.02));
    }
}

TEST_CASE("genome JSON round-trips exactly") {
    SearchSpaceConfig space;
    Rng rng(41);
    for (int t = 0; t < 100; ++t) {
        Genome g = random_genome(space, rng);
        std::string s = genome_json_string(g);
        Genome back = genome_from_json(nlohmann::json::parse(s));
        REQUIRE(back == g);
        REQUIRE(genome_json_string(back) == s);
    }
    // vocabulary strings appear verbatim
    Genome g = recover_named_arch("GNN-Guard");
    g.layers[0].coeff = CoeffOp::GeneLinear;
    std::string s = genome_json_string(g);
    REQUIRE_THAT(s, Catch::Contains("\"NIE\""));
    REQUIRE_THAT(s, Catch::Contains("\"Gene-Linear\""));
}

TEST_CASE("named architectures map to their gene tuples") {
    Genome gcn = recover_named_arch("GCN");
    REQUIRE(gcn.layers.size() == 1);
    REQUIRE(gcn.layers[0] ==
            LayerGene{MaskOp::Identity, CoeffOp::GCN, AggrOp::Sum, CombOp::Identity,
                      SkipOp::Identity});

    Genome gin = recover_named_arch("GIN");
    REQUIRE(gin.layers[0] ==
            LayerGene{MaskOp::Identity, CoeffOp::Identity, AggrOp::Sum, CombOp::GIN,
                      SkipOp::Identity});

    Genome guard = recover_named_arch("GNN-Guard");
    REQUIRE(guard.layers[0].mask == MaskOp::NIE);
    REQUIRE(guard.layers[0].coeff == CoeffOp::GCN);

    Genome vpn = recover_named_arch("VPN");
    REQUIRE(vpn.layers[0].mask == MaskOp::VPO);

    Genome sage = recover_named_arch("GraphSAGE");
    REQUIRE(sage.layers[0].aggr == AggrOp::Mean);
    REQUIRE(sage.layers[0].comb == CombOp::SAGE);

    REQUIRE_THROWS_WITH(recover_named_arch("ResNet"), Catch::Contains("unknown"));
}

TEST_CASE("enumerate_genomes covers the restricted space exactly") {
    SearchSpaceConfig space;
    space.max_layers = 1;
    space.mask_ops = {MaskOp::Identity, MaskOp::LRA, MaskOp::NFS, MaskOp::NIE};
    space.coeff_ops = {CoeffOp::Identity, CoeffOp::GCN, CoeffOp::GAT};
    space.aggr_ops = {AggrOp::Sum, AggrOp::Max};
    space.comb_ops = {CombOp::Identity};
    space.skip_ops = {SkipOp::Identity};
    space.layer_aggr_ops = {LayerAggrOp::Concat};
    auto all = enumerate_genomes(space);
    REQUIRE(all.size() == 4 * 3 * 2);
    std::set<std::string> uniq;
    for (auto& g : all) {
        REQUIRE(is_valid(g, space));
        uniq.insert(genome_json_string(g));
    }
    REQUIRE(uniq.size() == all.size());
}
