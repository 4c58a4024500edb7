#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gnas/matrix.hpp"

namespace gnas {

struct SymEigen {
    std::vector<double> values; // one per column of vectors
    Matrix vectors;             // columns are eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic sweep
/// order; throws when the off-diagonal mass fails to vanish within the sweep cap.
inline SymEigen jacobi_eigen_sym(const Matrix& a, int max_sweeps = 64, double tol = 1e-14) {
    if (a.rows() != a.cols()) throw std::invalid_argument("jacobi_eigen_sym: not square");
    const int n = a.rows();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-9)
                throw std::invalid_argument("jacobi_eigen_sym: matrix not symmetric");

    Matrix m = a;
    Matrix q = Matrix::identity(n);
    double frob = 0.0;
    for (double v : a.data()) frob += v * v;
    frob = std::sqrt(frob);
    const double stop = std::max(tol * frob, 1e-300);

    auto offdiag = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) s += m(i, j) * m(i, j);
        return std::sqrt(2.0 * s);
    };

    int sweep = 0;
    while (offdiag() > stop) {
        if (++sweep > max_sweeps)
            throw std::runtime_error("jacobi_eigen_sym: iteration cap exceeded");
        for (int p = 0; p < n - 1; ++p)
            for (int qi = p + 1; qi < n; ++qi) {
                double apq = m(p, qi);
                if (std::abs(apq) <= stop / (n * n)) continue;
                double app = m(p, p), aqq = m(qi, qi);
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double mkp = m(k, p), mkq = m(k, qi);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, qi) = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    double mpk = m(p, k), mqk = m(qi, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(qi, k) = s * mpk + c * mqk;
                }
                for (int k = 0; k < n; ++k) {
                    double qkp = q(k, p), qkq = q(k, qi);
                    q(k, p) = c * qkp - s * qkq;
                    q(k, qi) = s * qkp + c * qkq;
                }
            }
    }

    SymEigen out;
    out.values.resize(n);
    for (int i = 0; i < n; ++i) out.values[i] = m(i, i);
    out.vectors = std::move(q);
    return out;
}

/// Best rank-r approximation of a symmetric matrix: keep the r eigencomponents of
/// largest absolute eigenvalue (equals the truncated SVD on symmetric input, and
/// unlike generic SVD truncation it stays symmetric under tied singular values).
/// Ties in |lambda| prefer the larger signed eigenvalue, then the lower original
/// index, so results are deterministic.
inline Matrix low_rank_approx_sym(const Matrix& a, int rank) {
    if (rank < 1) throw std::invalid_argument("low_rank_approx_sym: rank < 1");
    SymEigen eig = jacobi_eigen_sym(a);
    const int n = a.rows();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        double ax = std::abs(eig.values[x]), ay = std::abs(eig.values[y]);
        if (ax != ay) return ax > ay;
        if (eig.values[x] != eig.values[y]) return eig.values[x] > eig.values[y];
        return x < y;
    });
    Matrix out(n, n);
    int keep = std::min(rank, n);
    for (int r = 0; r < keep; ++r) {
        int k = order[static_cast<size_t>(r)];
        double lam = eig.values[k];
        if (lam == 0.0) continue;
        for (int i = 0; i < n; ++i) {
            double qi = eig.vectors(i, k);
            if (qi == 0.0) continue;
            for (int j = 0; j < n; ++j) out(i, j) += lam * qi * eig.vectors(j, k);
        }
    }
    return out;
}

} // namespace gnas
