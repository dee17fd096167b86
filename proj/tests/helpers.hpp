#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tkgcn/ops.hpp"
#include "tkgcn/tape.hpp"
#include "tkgcn/tensor.hpp"

namespace tkgcn::testing {

struct FdReport {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central finite-difference check of reverse-mode gradients. `build_loss`
// must rebuild a single-element loss from the inputs' current values; it is
// re-run with each element perturbed by ±h (no tape active, so nothing is
// recorded during the numeric passes).
template <typename F>
FdReport fd_check(std::vector<Tensor> inputs, F&& build_loss, double h = 1e-6) {
    for (Tensor& in : inputs) in.drop_grad();
    {
        Tape tape;
        Tensor loss = build_loss();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (Tensor& in : inputs)
        analytic.push_back(in.has_grad() ? in.grad() : std::vector<double>(in.size(), 0.0));

    FdReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double>& vals = inputs[k].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = build_loss().item();
            vals[i] = orig - h;
            const double fm = build_loss().item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            report.max_rel = std::max(report.max_rel, rel);
            ++report.checked;
        }
    }
    return report;
}

// Random tensor with entries kept away from activation kinks at 0.
inline Tensor random_away_from_zero(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::uniform(rng, lo, hi, std::move(shape), true);
    for (double& v : t.values())
        if (std::abs(v) < 1e-2) v += (v >= 0.0 ? 2e-2 : -2e-2);
    return t;
}

}  // namespace tkgcn::testing
