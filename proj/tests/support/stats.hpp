#pragma once

// Small statistics helpers for property tests: chi-square goodness-of-fit
// p-values (via the regularized incomplete gamma function) and Spearman rank
// correlation with average ranks for ties.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace gnas::test {

namespace statdetail {

// Regularized lower incomplete gamma P(a, x) by series; Q(a, x) by continued
// fraction (Lentz). Standard numerical recipes formulation.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace statdetail

/// Survival function of the chi-square distribution: P(X >= stat) with k dof.
inline double chi_square_p_value(double stat, int dof) {
    if (stat < 0.0 || dof < 1) throw std::invalid_argument("chi_square_p_value: bad input");
    double a = dof / 2.0, x = stat / 2.0;
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - statdetail::gamma_p_series(a, x);
    return statdetail::gamma_q_contfrac(a, x);
}

/// Chi-square statistic for observed counts against uniform expectation.
inline double chi_square_uniform_stat(const std::vector<long>& counts, double total) {
    double expected = total / counts.size();
    double stat = 0.0;
    for (long c : counts) {
        double d = c - expected;
        stat += d * d / expected;
    }
    return stat;
}

inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two same-length series");
    return pearson(average_ranks(a), average_ranks(b));
}

} // namespace gnas::test
