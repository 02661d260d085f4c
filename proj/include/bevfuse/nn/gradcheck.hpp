#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/nn/tensor.hpp"

namespace bevfuse::nn {

// Compares the reverse-mode gradient of `fn` against central finite
// differences (eps = 1e-4). The tensor output is scalarized through a fixed
// random probe so directional bugs cannot cancel. Returns the worst relative
// error |a - n| / max(|a|, |n|, 1e-8) over every element of every input.
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                         std::vector<Tensor> inputs, std::uint64_t seed,
                         double eps = 1e-4) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor out = fn(inputs);
    Rng rng(derive_seed(seed, 0xabcdef));
    std::vector<double> probe(out.size());
    for (auto& p : probe) p = rng.uniform(-1.0, 1.0);

    Tensor scalar = weighted_sum(out, probe);
    scalar.backward();

    auto eval = [&]() {
        const Tensor y = fn(inputs);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y.values()[i];
        return s;
    };

    double worst = 0.0;
    for (auto& t : inputs) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t.values()[i];
            t.values()[i] = saved + eps;
            const double fp = eval();
            t.values()[i] = saved - eps;
            const double fm = eval();
            t.values()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = t.grad()[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace bevfuse::nn
