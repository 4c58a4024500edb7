#include <catch2/catch.hpp>

#include <cmath>

#include "gnas/rng.hpp"
#include "gnas/tape.hpp"
#include "support/finite_diff.hpp"

using namespace gnas;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.data()) v = scale * rng.normal();
    return m;
}

} // namespace

TEST_CASE("row softmax of zeros is uniform and rows sum to one") {
    Tape t(false);
    Var x = t.constant(Matrix(1, 2));
    Var y = t.row_softmax(x);
    REQUIRE(t.val(y)(0, 0) == Approx(0.5).margin(1e-15));
    REQUIRE(t.val(y)(0, 1) == Approx(0.5).margin(1e-15));

    Rng rng(1);
    Var z = t.row_softmax(t.constant(random_mat(6, 5, rng, 3.0)));
    for (int i = 0; i < 6; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += t.val(z)(i, j);
        REQUIRE(s == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("row softmax is invariant to per-row shifts") {
    Rng rng(2);
    Matrix a = random_mat(4, 6, rng, 2.0);
    Matrix b = a;
    for (int i = 0; i < b.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j) b(i, j) += 17.5 * (i + 1);
    Tape t(false);
    Matrix ya = t.val(t.row_softmax(t.constant(a)));
    Matrix yb = t.val(t.row_softmax(t.constant(b)));
    REQUIRE(max_abs_diff(ya, yb) < 1e-9);
}

TEST_CASE("leaky relu slope and matmul against identity") {
    Tape t(false);
    Matrix m(1, 1);
    m(0, 0) = -1.0;
    REQUIRE(t.val(t.leaky_relu(t.constant(m)))(0, 0) == Approx(-0.2));
    Rng rng(3);
    Matrix x = random_mat(3, 4, rng);
    Var y = t.matmul(t.constant(Matrix::identity(3)), t.constant(x));
    REQUIRE(max_abs_diff(t.val(y), x) == 0.0);
}

TEST_CASE("cross entropy analytic values") {
    SECTION("saturated logits give near-zero loss") {
        Tape t(false);
        Matrix z(1, 2);
        z(0, 0) = 1000.0;
        Var loss = t.cross_entropy(t.constant(z), {0}, {0});
        REQUIRE(t.scalar(loss) == Approx(0.0).margin(1e-9));
    }
    SECTION("uniform logits give ln C") {
        Tape t(false);
        Matrix z(2, 4);
        Var loss = t.cross_entropy(t.constant(z), {1, 3}, {0, 1});
        REQUIRE(t.scalar(loss) == Approx(std::log(4.0)).epsilon(1e-12));
    }
    SECTION("random logits match a scalar recomputation") {
        Rng rng(5);
        Matrix z = random_mat(5, 3, rng, 2.0);
        std::vector<int> labels{0, 2, 1, 1, 0};
        std::vector<int> mask{0, 2, 4};
        Tape t(false);
        double got = t.scalar(t.cross_entropy(t.constant(z), labels, mask));
        double expect = 0.0;
        for (int i : mask) {
            double mx = std::max({z(i, 0), z(i, 1), z(i, 2)});
            double s = 0.0;
            for (int j = 0; j < 3; ++j) s += std::exp(z(i, j) - mx);
            double p = std::exp(z(i, labels[i]) - mx) / s;
            expect -= std::log(p);
        }
        expect /= mask.size();
        REQUIRE(got == Approx(expect).margin(1e-10));
    }
    SECTION("empty mask is an error") {
        Tape t(false);
        REQUIRE_THROWS(t.cross_entropy(t.constant(Matrix(2, 2)), {0, 1}, {}));
    }
}

TEST_CASE("backward basics") {
    SECTION("loss = sum of entries gives all-ones gradient") {
        ParamBank bank;
        Param& w = bank.create("w", 2, 2);
        Tape t(true);
        Var wv = t.param(w);
        Var loss = t.row_sum(t.matmul(t.constant(Matrix(1, 2, 1.0)), t.matmul(wv, t.constant(Matrix(2, 1, 1.0)))));
        t.backward(loss);
        REQUIRE(w.grad_populated);
        for (double g : w.grad.data()) REQUIRE(g == Approx(1.0));
    }
    SECTION("zero-scaled loss gives zero gradients") {
        ParamBank bank;
        Param& w = bank.create("w", 2, 2);
        for (auto& v : w.value.data()) v = 1.5;
        Tape t(true);
        Var wv = t.param(w);
        Var s = t.scalar_scale(t.row_sum(t.row_sum(t.tanh_op(wv))), 0.0);
        // collapse 2x1 -> 1x1 via transpose+row_sum
        Var loss = t.row_sum(t.transpose_op(s));
        t.backward(loss);
        for (double g : w.grad.data()) REQUIRE(g == 0.0);
    }
    SECTION("backward without forward errors") {
        Tape t(true);
        REQUIRE_THROWS_WITH(t.backward(Var{}), Catch::Contains("without forward"));
    }
}

TEST_CASE("gradients match central finite differences on random composites") {
    // 100 random small compositions of the primitive vocabulary, dims <= 8
    Rng seed_rng(20240);
    int composites = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(seed_rng.next());
        const int n = rng.uniform_int(2, 8);
        const int d = rng.uniform_int(2, 8);
        ParamBank bank;
        Param& a = bank.create("a", n, d);
        Param& b = bank.create("b", d, d);
        Param& c = bank.create("c", 1, d);
        a.value = random_mat(n, d, rng, 0.8);
        b.value = random_mat(d, d, rng, 0.8);
        c.value = random_mat(1, d, rng, 0.8);

        auto forward = [&]() {
            Tape t(true);
            Var x = t.param(a);
            Var w = t.param(b);
            Var bias = t.param(c);
            Var h = t.add_rowvec(t.matmul(x, w), bias);
            Var act = t.elu(h);
            Var sm = t.row_softmax(act);
            Var mixed = t.hadamard(sm, t.sigmoid(h));
            Var cat = t.concat_cols(mixed, t.leaky_relu(h));
            Var red = t.row_mean(cat);
            Var gathered = t.gather_rows(red, {0, n - 1, n / 2});
            Var scattered = t.scatter_add_rows(gathered, {0, 1, 0}, 2);
            Var rm = t.row_max(t.transpose_op(scattered));
            Var total = t.row_sum(t.transpose_op(rm));
            return std::pair<Tape, Var>(std::move(t), total);
        };

        // analytic gradients
        {
            auto [t, loss] = forward();
            t.backward(loss);
        }
        auto numeric_forward = [&]() {
            auto [t, loss] = forward();
            return t.scalar(loss);
        };
        auto res = gnas::test::finite_diff_check(bank, numeric_forward);
        worst = std::max(worst, res.max_rel_err);
        ++composites;
        bank.zero_grads();
    }
    INFO("worst relative error across composites: " << worst);
    REQUIRE(composites == 100);
    REQUIRE(worst < 1e-4);
}

TEST_CASE("structured ops match finite differences") {
    Rng rng(77);
    const int n = 5, d = 4;
    ParamBank bank;
    Param& u = bank.create("u", n, 1);
    Param& v = bank.create("v", n, 1);
    Param& h = bank.create("h", n, d);
    Param& w = bank.create("w", 1, d);
    Param& s = bank.create("s", 1, 1);
    u.value = random_mat(n, 1, rng);
    v.value = random_mat(n, 1, rng);
    h.value = random_mat(n, d, rng);
    w.value = random_mat(1, d, rng);
    s.value = random_mat(1, 1, rng);

    std::vector<uint8_t> support(n * n, 0);
    std::vector<std::vector<int>> nbrs(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            if ((i + j) % 2 == 0 || i == j) {
                support[i * n + j] = 1;
                nbrs[i].push_back(j);
            }
    }

    Matrix edge_weights(n, n);
    for (int i = 0; i < n; ++i)
        for (int j : nbrs[i]) edge_weights(i, j) = 0.25 + 0.1 * ((i + 2 * j) % 5);
    auto weights = std::make_shared<const Matrix>(edge_weights);

    auto forward = [&]() {
        Tape t(true);
        Var uv = t.param(u);
        Var vv = t.param(v);
        Var hv = t.param(h);
        Var wv = t.param(w);
        Var sv = t.param(s);
        Var logits = t.pairwise_tanh_project(hv, hv, wv, &support);
        Var sym = t.add(logits, t.add_outer(uv, vv));
        Var sym2 = t.add(sym, t.add_outer_masked(uv, vv, &nbrs));
        Var sym3 = t.add(sym2, t.pairwise_dot_masked(hv, hv, &nbrs));
        Var e = t.masked_row_softmax(sym3, &support);
        Var msg = t.neighbor_weighted_max(e, hv, &nbrs);
        Var msg2 = t.add(msg, t.masked_message_sum(e, weights, hv, &nbrs));
        Var scaled = t.scale_rows(msg2, uv);
        Var m2 = t.elementwise_max(scaled, t.scale_by_scalar(hv, sv));
        Var sl = t.slice_cols(m2, 1, 2);
        Var loss = t.row_sum(t.transpose_op(t.row_sum(sl)));
        return std::pair<Tape, Var>(std::move(t), loss);
    };
    {
        auto [t, loss] = forward();
        t.backward(loss);
    }
    auto res = gnas::test::finite_diff_check(bank, [&]() {
        auto [t, loss] = forward();
        return t.scalar(loss);
    });
    INFO("worst: " << res.max_rel_err << " at " << res.worst_entry);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("identical seeds give bit-identical losses") {
    auto run = [] {
        Rng rng(123);
        ParamBank bank;
        Param& w = bank.create("w", 4, 3);
        w.value = random_mat(4, 3, rng);
        Tape t(true);
        Var z = t.matmul(t.constant(random_mat(5, 4, rng)), t.param(w));
        return t.scalar(t.cross_entropy(z, {0, 1, 2, 0, 1}, {0, 1, 2, 3, 4}));
    };
    REQUIRE(run() == run());
}

TEST_CASE("non-finite results are rejected") {
    Tape t(false);
    Matrix big(1, 1);
    big(0, 0) = 1e308;
    Var x = t.constant(big);
    REQUIRE_THROWS_WITH(t.hadamard(t.scalar_scale(x, 10.0), t.scalar_scale(x, 10.0)),
                        Catch::Contains("non-finite"));
}
