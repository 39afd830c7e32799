#pragma once

#include <string>
#include <vector>

#include "lidkit/graph.hpp"

namespace lidkit {

struct GradCheckReport {
    double max_rel_err = 0.0;
    i64 elements_checked = 0;
    std::string worst_location;

    bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference gradient check in double precision. `build` receives a
// fresh tape plus leaves for the given inputs and must return a scalar loss;
// it is called once for the analytic pass and twice per element for the
// finite-difference passes.
template <class BuildFn>
GradCheckReport gradcheck(std::vector<Tensor<double>> inputs, BuildFn&& build,
                          double h = 1e-5) {
    Tape<double> tape;
    std::vector<VarId> leaves;
    leaves.reserve(inputs.size());
    for (const auto& p : inputs) leaves.push_back(tape.leaf(p, true));
    const VarId loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (VarId v : leaves) analytic.push_back(tape.grad(v));

    auto eval = [&]() {
        Tape<double> t;
        std::vector<VarId> ls;
        ls.reserve(inputs.size());
        for (const auto& p : inputs) ls.push_back(t.leaf(p, false));
        return t.val(build(t, ls)).data[0];
    };

    GradCheckReport rep;
    for (size_t pi = 0; pi < inputs.size(); ++pi) {
        for (size_t e = 0; e < inputs[pi].data.size(); ++e) {
            const double saved = inputs[pi].data[e];
            auto at = [&](double offset) {
                inputs[pi].data[e] = saved + offset;
                return eval();
            };
            // Fourth-order central difference; the O(h^2) truncation of the
            // plain stencil is visible on stiff spots like near-degenerate
            // layer-norm rows.
            const double fd =
                (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            inputs[pi].data[e] = saved;
            const double an = analytic[pi].data[e];
            // The denominator floor sets an absolute tolerance for tiny
            // gradients: central differences carry ~1e-11 of cancellation
            // noise, so anything below the floor is compared absolutely at
            // floor * rtol instead of relatively.
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
            const double rel = std::abs(fd - an) / denom;
            rep.elements_checked++;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_location =
                    concat("input ", pi, " element ", e, " analytic ", an, " fd ", fd);
            }
        }
    }
    return rep;
}

} // namespace lidkit
