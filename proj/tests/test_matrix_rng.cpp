#include <catch2/catch.hpp>

#include "gnas/matrix.hpp"
#include "gnas/rng.hpp"

using namespace gnas;

TEST_CASE("matmul identity") {
    Matrix x(3, 2);
    int k = 1;
    for (auto& v : x.data()) v = k++;
    Matrix y = matmul(Matrix::identity(3), x);
    REQUIRE(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("matmul shape errors") {
    REQUIRE_THROWS(matmul(Matrix(2, 3), Matrix(2, 3)));
    REQUIRE_THROWS(add(Matrix(2, 3), Matrix(3, 2)));
}

TEST_CASE("transpose round trip") {
    Rng rng(7);
    Matrix a(4, 3);
    for (auto& v : a.data()) v = rng.normal();
    REQUIRE(max_abs_diff(transpose(transpose(a)), a) == 0.0);
}

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.uniform01() == b.uniform01());
        int x = a.uniform_int(3, 9);
        REQUIRE(x == b.uniform_int(3, 9));
        REQUIRE(x >= 3);
        REQUIRE(x <= 9);
    }
}

TEST_CASE("sub_seed labels separate streams") {
    REQUIRE(sub_seed(1, "data") != sub_seed(1, "evo"));
    REQUIRE(sub_seed(1, "data") == sub_seed(1, "data"));
    REQUIRE(sub_seed(1, "data") != sub_seed(2, "data"));
}

TEST_CASE("normal moments sane") {
    Rng rng(3);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.03);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}
