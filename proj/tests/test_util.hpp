#ifndef SCARNET_TEST_UTIL_HPP
#define SCARNET_TEST_UTIL_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "scarnet/tensor.hpp"

namespace scarnet::testutil {

// Central-difference gradient check for a scalar-valued graph function.
// Inputs flagged requires_grad are checked entry by entry. Returns the worst
// relative error, with the denominator floored to avoid noise blowup where
// both gradients vanish.
inline double fd_check(std::vector<Tensor>& inputs,
                       const std::function<Tensor(std::vector<Tensor>&)>& f, double step = 1e-5,
                       double denom_floor = 1e-6) {
    Tensor loss = f(inputs);
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (Tensor& in : inputs) {
        if (in.requires_grad() && in.has_grad())
            analytic.push_back(in.grad());
        else
            analytic.push_back(std::vector<double>(in.numel(), 0.0));
    }

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!inputs[t].requires_grad())
            continue;
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            const double orig = inputs[t][i];
            double fp, fm;
            {
                NoGradGuard ng;
                inputs[t][i] = orig + step;
                fp = f(inputs).item();
                inputs[t][i] = orig - step;
                fm = f(inputs).item();
                inputs[t][i] = orig;
            }
            const double fd = (fp - fm) / (2.0 * step);
            const double a = analytic[t][i];
            const double denom = std::max({std::fabs(fd), std::fabs(a), denom_floor});
            worst = std::max(worst, std::fabs(a - fd) / denom);
        }
    }
    return worst;
}

} // namespace scarnet::testutil

#endif
