#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gnas/eigen_sym.hpp"
#include "gnas/matrix.hpp"

namespace gnas {

/// Parameters of the defensive graph-structure mask operations.
struct MaskOpParams {
    int lra_rank = 20;                      // reconstruction rank r
    double nfs_tau = 0.01;                  // Jaccard pruning threshold
    double nie_beta = 0.9;                  // memory coefficient
    double nie_floor = 0.1;                 // similarity pruning floor p0
    std::vector<double> vpo_theta{0.9, 0.1}; // power weights, length = vpo_order
    int vpo_order = 2;                      // power order V

    void validate() const {
        if (lra_rank < 1) throw std::invalid_argument("mask params: lra_rank < 1");
        if (nfs_tau < 0.0 || nfs_tau > 1.0) throw std::invalid_argument("mask params: nfs_tau");
        if (nie_beta < 0.0 || nie_beta > 1.0) throw std::invalid_argument("mask params: nie_beta");
        if (nie_floor < 0.0 || nie_floor >= 1.0) throw std::invalid_argument("mask params: nie_floor");
        if (vpo_order < 1 || static_cast<int>(vpo_theta.size()) != vpo_order)
            throw std::invalid_argument("mask params: vpo_theta length != vpo_order");
    }
};

/// A per-layer edge reweighting mask: entries in [0,1], supported only on edges of
/// the original adjacency, zero diagonal. The previous layer's MaskState is the
/// memory consumed by the NIE recursion.
struct MaskState {
    Matrix m;
};

namespace maskdetail {

inline void clamp01(Matrix& m) {
    for (double& v : m.data()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

inline void restrict_to_support(Matrix& m, const Matrix& support_of) {
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            if (support_of(i, j) == 0.0 || i == j) m(i, j) = 0.0;
}

/// Columns of the binarized feature supports (x > 0), as sorted index lists.
inline std::vector<std::vector<int>> feature_supports(const Matrix& features) {
    std::vector<std::vector<int>> s(features.rows());
    for (int i = 0; i < features.rows(); ++i)
        for (int k = 0; k < features.cols(); ++k)
            if (features(i, k) > 0.0) s[i].push_back(k);
    return s;
}

inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() && b.empty()) return 1.0;
    size_t ia = 0, ib = 0, inter = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] == b[ib]) {
            ++inter;
            ++ia;
            ++ib;
        } else if (a[ia] < b[ib]) {
            ++ia;
        } else {
            ++ib;
        }
    }
    size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace maskdetail

/// Identity mask: pass the previous layer's (masked) adjacency through unchanged.
inline MaskState mask_identity(const Matrix& a_prev) { return MaskState{a_prev}; }

/// Low-rank approximation: rebuild a_prev from its top-r spectral components,
/// clamp to [0,1] and keep only entries where a_prev had support.
inline MaskState mask_lra(const Matrix& a_prev, int rank) {
    if (rank < 1) throw std::invalid_argument("mask_lra: rank < 1");
    Matrix m = low_rank_approx_sym(a_prev, rank);
    maskdetail::clamp01(m);
    maskdetail::restrict_to_support(m, a_prev);
    return MaskState{std::move(m)};
}

/// Node-feature-similarity pruning: drop edges whose endpoint features (binarized
/// at 0) have Jaccard similarity below tau; other entries pass through.
inline MaskState mask_nfs(const Matrix& a_prev, const Matrix& features, double tau) {
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("mask_nfs: tau outside [0,1]");
    auto supports = maskdetail::feature_supports(features);
    Matrix m = a_prev;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) {
            if (i == j || a_prev(i, j) <= 0.0) continue;
            if (maskdetail::jaccard(supports[i], supports[j]) < tau) m(i, j) = 0.0;
        }
    return MaskState{std::move(m)};
}

/// Neighbor-importance estimation: cosine similarity of the previous hidden states
/// on the edges of `adj`, floored at p0, row-normalized over each neighborhood,
/// symmetrized, then blended with the previous mask by beta.
inline MaskState mask_nie(const MaskState& mask_prev, const Matrix& hidden_prev,
                          const Matrix& adj, double beta, double p0) {
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("mask_nie: beta outside [0,1]");
    const int n = adj.rows();
    if (hidden_prev.rows() != n || mask_prev.m.rows() != n)
        throw std::invalid_argument("mask_nie: shape mismatch");

    std::vector<double> norms(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < hidden_prev.cols(); ++k) acc += hidden_prev(i, k) * hidden_prev(i, k);
        norms[i] = std::sqrt(acc);
    }

    Matrix sim(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || adj(i, j) == 0.0) continue;
            double s = 0.0;
            if (norms[i] > 0.0 && norms[j] > 0.0) {
                double dot = 0.0;
                for (int k = 0; k < hidden_prev.cols(); ++k)
                    dot += hidden_prev(i, k) * hidden_prev(j, k);
                s = dot / (norms[i] * norms[j]);
            }
            s = std::max(0.0, s);
            if (s < p0) s = 0.0;
            sim(i, j) = s;
        }

    Matrix alpha(n, n);
    for (int i = 0; i < n; ++i) {
        double denom = 1e-12;
        for (int j = 0; j < n; ++j) denom += sim(i, j);
        for (int j = 0; j < n; ++j)
            if (sim(i, j) > 0.0) alpha(i, j) = sim(i, j) / denom;
    }
    // symmetrize
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double v = 0.5 * (alpha(i, j) + alpha(j, i));
            alpha(i, j) = v;
            alpha(j, i) = v;
        }

    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || adj(i, j) == 0.0) continue;
            m(i, j) = beta * mask_prev.m(i, j) + (1.0 - beta) * alpha(i, j);
        }
    maskdetail::clamp01(m);
    return MaskState{std::move(m)};
}

/// Variable power operator: weighted sum of matrix powers of a_prev, max-normalized
/// over the support of the original adjacency, clamped, off-support annihilated.
/// Powers are accumulated through the edge lists of a_prev, so the cost is bounded
/// by the graph's degree profile rather than n^3.
inline MaskState mask_vpo(const Matrix& a_prev, const Matrix& adj,
                          const std::vector<double>& theta) {
    if (theta.empty()) throw std::invalid_argument("mask_vpo: empty theta");
    bool any_theta = false;
    for (double t : theta) any_theta = any_theta || t != 0.0;
    if (!any_theta) throw std::runtime_error("mask_vpo: degenerate mask (all theta zero)");
    const int n = a_prev.rows();

    std::vector<std::vector<std::pair<int, double>>> rows(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (a_prev(i, j) != 0.0) rows[i].emplace_back(j, a_prev(i, j));

    Matrix raw(n, n);
    // power = a_prev^v computed row-by-row: cur holds row i of a_prev^(v-1)
    for (int i = 0; i < n; ++i) {
        std::vector<double> cur(n, 0.0);
        for (auto [j, w] : rows[i]) cur[j] = w;
        for (size_t v = 0; v < theta.size(); ++v) {
            if (v > 0) {
                std::vector<double> nxt(n, 0.0);
                for (int k = 0; k < n; ++k) {
                    if (cur[k] == 0.0) continue;
                    for (auto [j, w] : rows[k]) nxt[j] += cur[k] * w;
                }
                cur.swap(nxt);
            }
            if (theta[v] == 0.0) continue;
            for (int j = 0; j < n; ++j)
                if (cur[j] != 0.0) raw(i, j) += theta[v] * cur[j];
        }
    }

    maskdetail::restrict_to_support(raw, adj);
    double mx = max_abs(raw);
    bool has_edge = false;
    for (int i = 0; i < n && !has_edge; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && adj(i, j) != 0.0) {
                has_edge = true;
                break;
            }
    if (has_edge && mx < 1e-12)
        throw std::runtime_error("mask_vpo: degenerate mask (zero on every edge)");
    Matrix m = gnas::scale(raw, 1.0 / std::max(mx, 1e-12));
    maskdetail::clamp01(m);
    return MaskState{std::move(m)};
}

/// Eq.-style mask application: the ORIGINAL adjacency times the mask, entrywise.
/// The diagonal stays zero here; the forward pass adds self-loop weight 1 itself.
inline Matrix apply_mask(const Matrix& adj, const MaskState& mask) {
    require_shape(adj, mask.m, "apply_mask");
    Matrix out = hadamard(adj, mask.m);
    for (int i = 0; i < out.rows(); ++i) out(i, i) = 0.0;
    return out;
}

} // namespace gnas
