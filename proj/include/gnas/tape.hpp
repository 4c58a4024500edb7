#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gnas/matrix.hpp"
#include "gnas/param_bank.hpp"

namespace gnas::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Nodes are recorded in creation order,
/// which is a topological order, so one reverse sweep visits each node exactly
/// once. Gradients only flow where a trainable leaf is upstream; constants cost a
/// value slot and nothing else.
///
/// Structural arguments passed by pointer (neighbor lists, support masks) must
/// outlive the tape; callers keep them in an AdjacencyContext for the whole pass.
class Tape {
public:
    explicit Tape(bool with_grad = true) : with_grad_(with_grad) {}

    bool with_grad() const { return with_grad_; }

    // ---- leaves -----------------------------------------------------------

    Var constant(Matrix v) { return push(std::move(v), false, {}); }

    Var zeros(int rows, int cols) { return constant(Matrix(rows, cols)); }

    /// Trainable leaf bound to a bank entry; backward() accumulates into p.grad.
    Var param(Param& p) {
        Var x = push(p.value, with_grad_, {});
        if (with_grad_) bindings_.emplace_back(x.id, &p);
        return x;
    }

    // ---- access ------------------------------------------------------------

    const Matrix& val(Var x) const { return node(x).value; }

    double scalar(Var x) const {
        const Matrix& v = val(x);
        if (v.rows() != 1 || v.cols() != 1) throw std::runtime_error("scalar: not 1x1");
        return v(0, 0);
    }

    const Matrix& grad(Var x) const {
        const Node& nd = node(x);
        if (!nd.grad_alloc) throw std::runtime_error("grad: no gradient reached this node");
        return nd.grad;
    }

    size_t node_count() const { return nodes_.size(); }

    // ---- primitives ---------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dims differ");
        Matrix C = gnas::matmul(A, B);
        return push_op(std::move(C), {a, b}, [a, b](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, gnas::matmul(G, gnas::transpose(t.val(b))));
            if (t.needs(b)) t.accum(b, gnas::matmul(gnas::transpose(t.val(a)), G));
        });
    }

    Var add(Var a, Var b) {
        Matrix C = gnas::add(val(a), val(b));
        return push_op(std::move(C), {a, b}, [a, b](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, G);
            if (t.needs(b)) t.accum(b, G);
        });
    }

    Var sub(Var a, Var b) {
        Matrix C = gnas::sub(val(a), val(b));
        return push_op(std::move(C), {a, b}, [a, b](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, G);
            if (t.needs(b)) t.accum(b, gnas::scale(G, -1.0));
        });
    }

    Var hadamard(Var a, Var b) {
        Matrix C = gnas::hadamard(val(a), val(b));
        return push_op(std::move(C), {a, b}, [a, b](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, gnas::hadamard(G, t.val(b)));
            if (t.needs(b)) t.accum(b, gnas::hadamard(G, t.val(a)));
        });
    }

    Var scalar_scale(Var a, double s) {
        Matrix C = gnas::scale(val(a), s);
        return push_op(std::move(C), {a}, [a, s](Tape& t, int self) {
            if (t.needs(a)) t.accum(a, gnas::scale(t.node_at(self).grad, s));
        });
    }

    Var relu(Var a) {
        return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    }

    Var elu(Var a) {
        return unary(a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                     [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
    }

    Var leaky_relu(Var a, double slope = 0.2) {
        return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                     [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
    }

    Var tanh_op(Var a) {
        return unary(a, [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
    }

    Var sigmoid(Var a) {
        return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                     [](double, double y) { return y * (1.0 - y); });
    }

    Var row_softmax(Var a) {
        const Matrix& A = val(a);
        Matrix Y(A.rows(), A.cols());
        for (int i = 0; i < A.rows(); ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
            double sum = 0.0;
            for (int j = 0; j < A.cols(); ++j) sum += (Y(i, j) = std::exp(A(i, j) - mx));
            for (int j = 0; j < A.cols(); ++j) Y(i, j) /= sum;
        }
        return push_op(std::move(Y), {a}, [a](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& Y = t.node_at(self).value;
            Matrix D(G.rows(), G.cols());
            for (int i = 0; i < G.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < G.cols(); ++j) dot += G(i, j) * Y(i, j);
                for (int j = 0; j < G.cols(); ++j) D(i, j) = Y(i, j) * (G(i, j) - dot);
            }
            t.accum(a, D);
        });
    }

    Var row_sum(Var a) { return row_reduce(a, Reduce::Sum); }
    Var row_mean(Var a) { return row_reduce(a, Reduce::Mean); }

    Var row_max(Var a) {
        const Matrix& A = val(a);
        if (A.cols() < 1) throw std::invalid_argument("row_max: empty rows");
        Matrix Y(A.rows(), 1);
        auto arg = std::make_shared<std::vector<int>>(A.rows());
        for (int i = 0; i < A.rows(); ++i) {
            int best = 0;
            for (int j = 1; j < A.cols(); ++j)
                if (A(i, j) > A(i, best)) best = j;
            (*arg)[i] = best;
            Y(i, 0) = A(i, best);
        }
        return push_op(std::move(Y), {a}, [a, arg](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            Matrix D(A.rows(), A.cols());
            for (int i = 0; i < A.rows(); ++i) D(i, (*arg)[i]) = G(i, 0);
            t.accum(a, D);
        });
    }

    Var concat_cols(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row mismatch");
        Matrix C(A.rows(), A.cols() + B.cols());
        for (int i = 0; i < A.rows(); ++i) {
            for (int j = 0; j < A.cols(); ++j) C(i, j) = A(i, j);
            for (int j = 0; j < B.cols(); ++j) C(i, A.cols() + j) = B(i, j);
        }
        int ca = A.cols();
        return push_op(std::move(C), {a, b}, [a, b, ca](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) {
                Matrix D(G.rows(), ca);
                for (int i = 0; i < G.rows(); ++i)
                    for (int j = 0; j < ca; ++j) D(i, j) = G(i, j);
                t.accum(a, D);
            }
            if (t.needs(b)) {
                Matrix D(G.rows(), G.cols() - ca);
                for (int i = 0; i < G.rows(); ++i)
                    for (int j = ca; j < G.cols(); ++j) D(i, j - ca) = G(i, j);
                t.accum(b, D);
            }
        });
    }

    Var slice_cols(Var a, int j0, int w) {
        const Matrix& A = val(a);
        if (j0 < 0 || w < 0 || j0 + w > A.cols())
            throw std::invalid_argument("slice_cols: window out of range");
        Matrix C(A.rows(), w);
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < w; ++j) C(i, j) = A(i, j0 + j);
        return push_op(std::move(C), {a}, [a, j0, w](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            Matrix D(A.rows(), A.cols());
            for (int i = 0; i < A.rows(); ++i)
                for (int j = 0; j < w; ++j) D(i, j0 + j) = G(i, j);
            t.accum(a, D);
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Matrix& A = val(a);
        Matrix C(static_cast<int>(idx.size()), A.cols());
        for (size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= A.rows())
                throw std::invalid_argument("gather_rows: index out of range");
            for (int j = 0; j < A.cols(); ++j) C(static_cast<int>(r), j) = A(idx[r], j);
        }
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        return push_op(std::move(C), {a}, [a, ids](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            Matrix D(A.rows(), A.cols());
            for (size_t r = 0; r < ids->size(); ++r)
                for (int j = 0; j < A.cols(); ++j) D((*ids)[r], j) += G(static_cast<int>(r), j);
            t.accum(a, D);
        });
    }

    Var scatter_add_rows(Var a, std::vector<int> idx, int out_rows) {
        const Matrix& A = val(a);
        if (static_cast<int>(idx.size()) != A.rows())
            throw std::invalid_argument("scatter_add_rows: index count != rows");
        Matrix C(out_rows, A.cols());
        for (size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= out_rows)
                throw std::invalid_argument("scatter_add_rows: index out of range");
            for (int j = 0; j < A.cols(); ++j) C(idx[r], j) += A(static_cast<int>(r), j);
        }
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        return push_op(std::move(C), {a}, [a, ids](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            Matrix D(A.rows(), A.cols());
            for (size_t r = 0; r < ids->size(); ++r)
                for (int j = 0; j < A.cols(); ++j) D(static_cast<int>(r), j) = G((*ids)[r], j);
            t.accum(a, D);
        });
    }

    // ---- broadcast / structure helpers --------------------------------------

    Var transpose_op(Var a) {
        return push_op(gnas::transpose(val(a)), {a}, [a](Tape& t, int self) {
            if (t.needs(a)) t.accum(a, gnas::transpose(t.node_at(self).grad));
        });
    }

    /// add_outer restricted to a neighborhood structure: out(i,j) = u(i) + v(j)
    /// for j in nbrs[i], 0 elsewhere. Off-support entries carry no gradient.
    Var add_outer_masked(Var u, Var v, const std::vector<std::vector<int>>* nbrs) {
        const Matrix& U = val(u);
        const Matrix& V = val(v);
        if (U.cols() != 1 || V.cols() != 1)
            throw std::invalid_argument("add_outer_masked: need columns");
        const int n = U.rows(), m = V.rows();
        if (static_cast<int>(nbrs->size()) != n)
            throw std::invalid_argument("add_outer_masked: neighborhood size mismatch");
        Matrix C(n, m);
        for (int i = 0; i < n; ++i)
            for (int j : (*nbrs)[static_cast<size_t>(i)]) C(i, j) = U(i, 0) + V(j, 0);
        return push_op(std::move(C), {u, v}, [u, v, nbrs](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const int n = G.rows(), m = G.cols();
            Matrix DU(n, 1), DV(m, 1);
            for (int i = 0; i < n; ++i)
                for (int j : (*nbrs)[static_cast<size_t>(i)]) {
                    DU(i, 0) += G(i, j);
                    DV(j, 0) += G(i, j);
                }
            if (t.needs(u)) t.accum(u, DU);
            if (t.needs(v)) t.accum(v, DV);
        });
    }

    /// out(i,j) = <U(i,:), V(j,:)> for j in nbrs[i], 0 elsewhere.
    Var pairwise_dot_masked(Var a, Var b, const std::vector<std::vector<int>>* nbrs) {
        const Matrix& U = val(a);
        const Matrix& V = val(b);
        if (U.cols() != V.cols()) throw std::invalid_argument("pairwise_dot_masked: dim mismatch");
        const int n = U.rows(), m = V.rows(), d = U.cols();
        if (static_cast<int>(nbrs->size()) != n)
            throw std::invalid_argument("pairwise_dot_masked: neighborhood size mismatch");
        Matrix C(n, m);
        for (int i = 0; i < n; ++i)
            for (int j : (*nbrs)[static_cast<size_t>(i)]) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k) acc += U(i, k) * V(j, k);
                C(i, j) = acc;
            }
        return push_op(std::move(C), {a, b}, [a, b, nbrs](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const Matrix& U = t.val(a);
            const Matrix& V = t.val(b);
            const int n = U.rows(), d = U.cols();
            Matrix DU(U.rows(), d), DV(V.rows(), d);
            for (int i = 0; i < n; ++i)
                for (int j : (*nbrs)[static_cast<size_t>(i)]) {
                    double g = G(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < d; ++k) {
                        DU(i, k) += g * V(j, k);
                        DV(j, k) += g * U(i, k);
                    }
                }
            if (t.needs(a)) t.accum(a, DU);
            if (t.needs(b)) t.accum(b, DV);
        });
    }

    /// Fused neighborhood message sum: out(i,:) = sum_{j in nbrs[i]} e(i,j) *
    /// w(i,j) * h(j,:), with w a constant weight matrix (heap-owned: tape node
    /// storage may reallocate). The gradient to e stays on the support, which
    /// keeps attention backward passes support-sparse.
    Var masked_message_sum(Var e, std::shared_ptr<const Matrix> w, Var h,
                           const std::vector<std::vector<int>>* nbrs) {
        const Matrix& E = val(e);
        const Matrix& H = val(h);
        const int n = E.rows(), d = H.cols();
        if (E.cols() != H.rows() || static_cast<int>(nbrs->size()) != n || !w->same_shape(E))
            throw std::invalid_argument("masked_message_sum: shape mismatch");
        Matrix C(n, d);
        for (int i = 0; i < n; ++i) {
            double* ci = C.row(i);
            for (int j : (*nbrs)[static_cast<size_t>(i)]) {
                double coeff = E(i, j) * (*w)(i, j);
                if (coeff == 0.0) continue;
                const double* hj = H.row(j);
                for (int k = 0; k < d; ++k) ci[k] += coeff * hj[k];
            }
        }
        return push_op(std::move(C), {e, h}, [e, h, w, nbrs](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const Matrix& E = t.val(e);
            const Matrix& H = t.val(h);
            const int n = E.rows(), d = H.cols();
            Matrix DE(E.rows(), E.cols()), DH(H.rows(), H.cols());
            for (int i = 0; i < n; ++i) {
                const double* gi = G.row(i);
                for (int j : (*nbrs)[static_cast<size_t>(i)]) {
                    const double wij = (*w)(i, j);
                    if (wij == 0.0) continue;
                    const double* hj = H.row(j);
                    double* dhj = DH.row(j);
                    double acc = 0.0;
                    const double coeff = E(i, j) * wij;
                    for (int k = 0; k < d; ++k) {
                        acc += gi[k] * hj[k];
                        dhj[k] += coeff * gi[k];
                    }
                    DE(i, j) = acc * wij;
                }
            }
            if (t.needs(e)) t.accum(e, DE);
            if (t.needs(h)) t.accum(h, DH);
        });
    }

    /// u is n x 1, v is m x 1; out(i,j) = u(i) + v(j).
    Var add_outer(Var u, Var v) {
        const Matrix& U = val(u);
        const Matrix& V = val(v);
        if (U.cols() != 1 || V.cols() != 1) throw std::invalid_argument("add_outer: need columns");
        Matrix C(U.rows(), V.rows());
        for (int i = 0; i < U.rows(); ++i)
            for (int j = 0; j < V.rows(); ++j) C(i, j) = U(i, 0) + V(j, 0);
        return push_op(std::move(C), {u, v}, [u, v](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(u)) t.accum(u, gnas::row_sums(G));
            if (t.needs(v)) t.accum(v, gnas::transpose(gnas::col_sums(G)));
        });
    }

    /// b is 1 x m, broadcast-added to every row of a.
    Var add_rowvec(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (B.rows() != 1 || B.cols() != A.cols())
            throw std::invalid_argument("add_rowvec: bias shape mismatch");
        Matrix C = A;
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j) C(i, j) += B(0, j);
        return push_op(std::move(C), {a, b}, [a, b](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, G);
            if (t.needs(b)) t.accum(b, gnas::col_sums(G));
        });
    }

    /// c is n x 1; out(i,j) = a(i,j) * c(i). Gradient flows into both a and c.
    Var scale_rows(Var a, Var c) {
        const Matrix& A = val(a);
        const Matrix& Cv = val(c);
        if (Cv.rows() != A.rows() || Cv.cols() != 1)
            throw std::invalid_argument("scale_rows: scale shape mismatch");
        Matrix Y = A;
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j) Y(i, j) *= Cv(i, 0);
        return push_op(std::move(Y), {a, c}, [a, c](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            const Matrix& Cv = t.val(c);
            if (t.needs(a)) {
                Matrix D = G;
                for (int i = 0; i < D.rows(); ++i)
                    for (int j = 0; j < D.cols(); ++j) D(i, j) *= Cv(i, 0);
                t.accum(a, D);
            }
            if (t.needs(c)) {
                Matrix D(Cv.rows(), 1);
                for (int i = 0; i < G.rows(); ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < G.cols(); ++j) acc += G(i, j) * A(i, j);
                    D(i, 0) = acc;
                }
                t.accum(c, D);
            }
        });
    }

    /// s is 1 x 1; out = s * a.
    Var scale_by_scalar(Var a, Var s) {
        const Matrix& A = val(a);
        const Matrix& S = val(s);
        if (S.rows() != 1 || S.cols() != 1) throw std::invalid_argument("scale_by_scalar: s not 1x1");
        Matrix Y = gnas::scale(A, S(0, 0));
        return push_op(std::move(Y), {a, s}, [a, s](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) t.accum(a, gnas::scale(G, t.val(s)(0, 0)));
            if (t.needs(s)) {
                double acc = 0.0;
                const Matrix& A = t.val(a);
                for (size_t i = 0; i < G.size(); ++i) acc += G.data()[i] * A.data()[i];
                Matrix D(1, 1);
                D(0, 0) = acc;
                t.accum(s, D);
            }
        });
    }

    /// Elementwise max; ties go to the first argument (deterministic gradients).
    Var elementwise_max(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        require_shape(A, B, "elementwise_max");
        Matrix Y(A.rows(), A.cols());
        auto sel = std::make_shared<std::vector<uint8_t>>(A.size());
        for (size_t i = 0; i < A.size(); ++i) {
            bool first = A.data()[i] >= B.data()[i];
            (*sel)[i] = first;
            Y.data()[i] = first ? A.data()[i] : B.data()[i];
        }
        return push_op(std::move(Y), {a, b}, [a, b, sel](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            if (t.needs(a)) {
                Matrix D(G.rows(), G.cols());
                for (size_t i = 0; i < G.size(); ++i)
                    if ((*sel)[i]) D.data()[i] = G.data()[i];
                t.accum(a, D);
            }
            if (t.needs(b)) {
                Matrix D(G.rows(), G.cols());
                for (size_t i = 0; i < G.size(); ++i)
                    if (!(*sel)[i]) D.data()[i] = G.data()[i];
                t.accum(b, D);
            }
        });
    }

    /// Row softmax restricted to a boolean support (row-major n*m). Entries off
    /// the support are 0 and receive no gradient. Rows with empty support stay 0.
    Var masked_row_softmax(Var a, const std::vector<uint8_t>* support) {
        const Matrix& A = val(a);
        if (support->size() != A.size())
            throw std::invalid_argument("masked_row_softmax: support size mismatch");
        Matrix Y(A.rows(), A.cols());
        for (int i = 0; i < A.rows(); ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < A.cols(); ++j)
                if ((*support)[static_cast<size_t>(i) * A.cols() + j]) mx = std::max(mx, A(i, j));
            if (!std::isfinite(mx)) continue; // empty support row
            double sum = 0.0;
            for (int j = 0; j < A.cols(); ++j)
                if ((*support)[static_cast<size_t>(i) * A.cols() + j])
                    sum += (Y(i, j) = std::exp(A(i, j) - mx));
            for (int j = 0; j < A.cols(); ++j) Y(i, j) /= sum;
        }
        return push_op(std::move(Y), {a}, [a, support](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& Y = t.node_at(self).value;
            Matrix D(G.rows(), G.cols());
            for (int i = 0; i < G.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < G.cols(); ++j)
                    if ((*support)[static_cast<size_t>(i) * G.cols() + j])
                        dot += G(i, j) * Y(i, j);
                for (int j = 0; j < G.cols(); ++j)
                    if ((*support)[static_cast<size_t>(i) * G.cols() + j])
                        D(i, j) = Y(i, j) * (G(i, j) - dot);
            }
            t.accum(a, D);
        });
    }

    /// out(i,j) = sum_k w(0,k) * tanh(u(i,k) + v(j,k)), evaluated on support only.
    /// The tanh intermediates are recomputed in backward instead of stored.
    Var pairwise_tanh_project(Var u, Var v, Var w, const std::vector<uint8_t>* support) {
        const Matrix& U = val(u);
        const Matrix& V = val(v);
        const Matrix& W = val(w);
        if (U.cols() != V.cols() || W.rows() != 1 || W.cols() != U.cols())
            throw std::invalid_argument("pairwise_tanh_project: shape mismatch");
        int n = U.rows(), m = V.rows(), d = U.cols();
        if (support->size() != static_cast<size_t>(n) * m)
            throw std::invalid_argument("pairwise_tanh_project: support size mismatch");
        Matrix Y(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                if (!(*support)[static_cast<size_t>(i) * m + j]) continue;
                double acc = 0.0;
                for (int k = 0; k < d; ++k) acc += W(0, k) * std::tanh(U(i, k) + V(j, k));
                Y(i, j) = acc;
            }
        return push_op(std::move(Y), {u, v, w}, [u, v, w, support](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const Matrix& U = t.val(u);
            const Matrix& V = t.val(v);
            const Matrix& W = t.val(w);
            int n = U.rows(), m = V.rows(), d = U.cols();
            Matrix DU(n, d), DV(m, d), DW(1, d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    if (!(*support)[static_cast<size_t>(i) * m + j]) continue;
                    double g = G(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < d; ++k) {
                        double th = std::tanh(U(i, k) + V(j, k));
                        DW(0, k) += g * th;
                        double common = g * W(0, k) * (1.0 - th * th);
                        DU(i, k) += common;
                        DV(j, k) += common;
                    }
                }
            if (t.needs(u)) t.accum(u, DU);
            if (t.needs(v)) t.accum(v, DV);
            if (t.needs(w)) t.accum(w, DW);
        });
    }

    /// out(i,k) = max over j in nbrs[i] of p(i,j) * h(j,k); gradient flows to the
    /// argmax pair. Ties break toward the lower neighbor index.
    Var neighbor_weighted_max(Var p, Var h, const std::vector<std::vector<int>>* nbrs) {
        const Matrix& P = val(p);
        const Matrix& H = val(h);
        int n = P.rows(), d = H.cols();
        if (P.cols() != H.rows() || static_cast<int>(nbrs->size()) != n)
            throw std::invalid_argument("neighbor_weighted_max: shape mismatch");
        Matrix Y(n, d);
        auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * d, -1);
        for (int i = 0; i < n; ++i) {
            const auto& row = (*nbrs)[i];
            if (row.empty()) throw std::invalid_argument("neighbor_weighted_max: empty neighborhood");
            for (int k = 0; k < d; ++k) {
                double best = -std::numeric_limits<double>::infinity();
                int bj = -1;
                for (int j : row) {
                    double cand = P(i, j) * H(j, k);
                    if (cand > best) {
                        best = cand;
                        bj = j;
                    }
                }
                Y(i, k) = best;
                (*arg)[static_cast<size_t>(i) * d + k] = bj;
            }
        }
        return push_op(std::move(Y), {p, h}, [p, h, arg](Tape& t, int self) {
            const Matrix& G = t.node_at(self).grad;
            const Matrix& P = t.val(p);
            const Matrix& H = t.val(h);
            int n = G.rows(), d = G.cols();
            Matrix DP(P.rows(), P.cols()), DH(H.rows(), H.cols());
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < d; ++k) {
                    int j = (*arg)[static_cast<size_t>(i) * d + k];
                    double g = G(i, k);
                    DP(i, j) += g * H(j, k);
                    DH(j, k) += g * P(i, j);
                }
            if (t.needs(p)) t.accum(p, DP);
            if (t.needs(h)) t.accum(h, DH);
        });
    }

    /// Mean over the masked nodes of -log softmax(logits)[label]. Uses the
    /// log-sum-exp form with a 1e-12 probability floor.
    Var cross_entropy(Var logits, const std::vector<int>& labels, const std::vector<int>& mask) {
        if (mask.empty()) throw std::invalid_argument("cross_entropy: empty mask");
        const Matrix& Z = val(logits);
        auto probs = std::make_shared<Matrix>(static_cast<int>(mask.size()), Z.cols());
        double loss = 0.0;
        for (size_t r = 0; r < mask.size(); ++r) {
            int i = mask[r];
            if (i < 0 || i >= Z.rows()) throw std::invalid_argument("cross_entropy: bad mask index");
            int y = labels[i];
            if (y < 0 || y >= Z.cols()) throw std::invalid_argument("cross_entropy: bad label");
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < Z.cols(); ++j) mx = std::max(mx, Z(i, j));
            double sum = 0.0;
            for (int j = 0; j < Z.cols(); ++j) sum += std::exp(Z(i, j) - mx);
            double lse = mx + std::log(sum);
            loss -= Z(i, y) - lse;
            for (int j = 0; j < Z.cols(); ++j)
                (*probs)(static_cast<int>(r), j) = std::exp(Z(i, j) - lse);
        }
        loss /= static_cast<double>(mask.size());
        loss = std::max(loss, 0.0); // guard tiny negative round-off at saturation
        Matrix L(1, 1);
        L(0, 0) = loss;
        auto ids = std::make_shared<std::vector<int>>(mask);
        auto labs = std::make_shared<std::vector<int>>(labels);
        return push_op(std::move(L), {logits}, [logits, probs, ids, labs](Tape& t, int self) {
            if (!t.needs(logits)) return;
            double g = t.node_at(self).grad(0, 0) / static_cast<double>(ids->size());
            const Matrix& Z = t.val(logits);
            Matrix D(Z.rows(), Z.cols());
            for (size_t r = 0; r < ids->size(); ++r) {
                int i = (*ids)[r];
                int y = (*labs)[i];
                for (int j = 0; j < Z.cols(); ++j)
                    D(i, j) += g * ((*probs)(static_cast<int>(r), j) - (j == y ? 1.0 : 0.0));
            }
            t.accum(logits, D);
        });
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse sweep from `loss` (must be 1x1), then flush gradients into every
    /// bound bank entry that the loss actually reached.
    void backward(Var loss) {
        if (nodes_.empty() || !loss.valid()) throw std::runtime_error("backward without forward");
        const Node& ln = node(loss);
        if (ln.value.rows() != 1 || ln.value.cols() != 1)
            throw std::runtime_error("backward: loss must be scalar");
        Matrix seed(1, 1);
        seed(0, 0) = 1.0;
        accum(loss, seed);
        for (int i = loss.id; i >= 0; --i) {
            Node& nd = nodes_[static_cast<size_t>(i)];
            if (nd.grad_alloc && nd.back) nd.back(*this, i);
        }
        for (auto [id, p] : bindings_) {
            Node& nd = nodes_[static_cast<size_t>(id)];
            if (!nd.grad_alloc) continue;
            p->ensure_grad();
            for (size_t i = 0; i < nd.grad.size(); ++i) p->grad.data()[i] += nd.grad.data()[i];
            p->grad_populated = true;
        }
    }

    // ---- internals used by closures ------------------------------------------

    bool needs(Var x) const { return node(x).needs_grad; }

    void accum(Var x, const Matrix& contribution) {
        Node& nd = nodes_.at(static_cast<size_t>(x.id));
        if (!nd.grad_alloc) {
            nd.grad = Matrix(nd.value.rows(), nd.value.cols());
            nd.grad_alloc = true;
        }
        require_shape(nd.grad, contribution, "grad accum");
        for (size_t i = 0; i < nd.grad.size(); ++i) nd.grad.data()[i] += contribution.data()[i];
    }

    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&, int)> back;
    };

    Node& node_at(int id) { return nodes_.at(static_cast<size_t>(id)); }

private:
    enum class Reduce { Sum, Mean };

    Var row_reduce(Var a, Reduce kind) {
        const Matrix& A = val(a);
        if (A.cols() < 1) throw std::invalid_argument("row reduce: empty rows");
        Matrix Y = gnas::row_sums(A);
        double denom = kind == Reduce::Mean ? static_cast<double>(A.cols()) : 1.0;
        if (kind == Reduce::Mean)
            for (double& v : Y.data()) v /= denom;
        return push_op(std::move(Y), {a}, [a, denom](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            Matrix D(A.rows(), A.cols());
            for (int i = 0; i < A.rows(); ++i)
                for (int j = 0; j < A.cols(); ++j) D(i, j) = G(i, 0) / denom;
            t.accum(a, D);
        });
    }

    template <typename F, typename DF>
    Var unary(Var a, F f, DF df) {
        const Matrix& A = val(a);
        Matrix Y(A.rows(), A.cols());
        for (size_t i = 0; i < A.size(); ++i) Y.data()[i] = f(A.data()[i]);
        return push_op(std::move(Y), {a}, [a, df](Tape& t, int self) {
            if (!t.needs(a)) return;
            const Matrix& G = t.node_at(self).grad;
            const Matrix& A = t.val(a);
            const Matrix& Y = t.node_at(self).value;
            Matrix D(G.rows(), G.cols());
            for (size_t i = 0; i < G.size(); ++i)
                D.data()[i] = G.data()[i] * df(A.data()[i], Y.data()[i]);
            t.accum(a, D);
        });
    }

    const Node& node(Var x) const {
        if (!x.valid()) throw std::runtime_error("use of invalid Var");
        return nodes_.at(static_cast<size_t>(x.id));
    }

    Var push(Matrix v, bool needs, std::function<void(Tape&, int)> back) {
        if (!v.all_finite()) throw std::runtime_error("non-finite value on tape (divergence)");
        Node nd;
        nd.value = std::move(v);
        nd.needs_grad = needs;
        nd.back = std::move(back);
        nodes_.push_back(std::move(nd));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var push_op(Matrix v, std::initializer_list<Var> parents,
                std::function<void(Tape&, int)> back) {
        bool needs = false;
        for (Var p : parents) needs = needs || node(p).needs_grad;
        // the backward closure is only kept when some input is trainable
        return push(std::move(v), needs, needs ? std::move(back) : std::function<void(Tape&, int)>{});
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> bindings_;
    bool with_grad_;
};

} // namespace gnas::ad
