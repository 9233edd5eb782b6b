#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dtmem/tensor.hpp"

namespace dtmem::testing {

struct GradCheckResult {
    bool ok = true;
    std::string detail;
};

// Central-difference check of d(loss)/d(leaf) for every element of every
// leaf. `loss_fn` must rebuild the graph from the leaves on each call.
inline GradCheckResult check_gradients(const std::vector<Tensor>& leaves,
                                       const std::function<Tensor()>& loss_fn,
                                       double h = 1e-5, double rtol = 1e-4,
                                       double atol = 1e-7) {
    for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
    Tensor loss = loss_fn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const Tensor& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        for (std::int64_t i = 0; i < leaf.size(); ++i) {
            const double orig = leaf.values()[static_cast<std::size_t>(i)];
            leaf.values_mut()[static_cast<std::size_t>(i)] = orig + h;
            const double fp = loss_fn().item();
            leaf.values_mut()[static_cast<std::size_t>(i)] = orig - h;
            const double fm = loss_fn().item();
            leaf.values_mut()[static_cast<std::size_t>(i)] = orig;

            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[li][static_cast<std::size_t>(i)];
            const double err = std::abs(ad - fd);
            const double tol = atol + rtol * std::max(std::abs(ad), std::abs(fd));
            if (!(err <= tol))
                return {false, "leaf " + std::to_string(li) + " elem " + std::to_string(i) +
                                   ": autodiff " + std::to_string(ad) + " vs fd " +
                                   std::to_string(fd) + " (err " + std::to_string(err) + ")"};
        }
    }
    return {};
}

}  // namespace dtmem::testing
