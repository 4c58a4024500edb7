#pragma once

// Central finite-difference gradient oracle for autodiff checks. Re-evaluates a
// scalar-valued forward closure under +/- h perturbations of every coordinate of
// every bank entry and compares against the analytic gradients produced by
// backward(). Kept independent of the tape internals on purpose.

#include <cmath>
#include <functional>
#include <string>

#include "gnas/param_bank.hpp"

namespace gnas::test {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_entry;
    int checked = 0;
};

/// `forward` must rebuild the computation from the bank's *current* values and
/// return the scalar loss. `analytic` holds gradients previously accumulated for
/// the unperturbed bank.
inline GradCheckResult finite_diff_check(ParamBank& bank,
                                         const std::function<double()>& forward,
                                         double h = 1e-5, double floor = 1e-6) {
    GradCheckResult res;
    for (auto& [name, p] : bank.entries) {
        if (!p.grad_populated) continue;
        for (size_t i = 0; i < p.value.size(); ++i) {
            double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            double up = forward();
            p.value.data()[i] = saved - h;
            double down = forward();
            p.value.data()[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = p.grad.data()[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
            double rel = std::abs(numeric - analytic) / denom;
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_entry = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

} // namespace gnas::test
