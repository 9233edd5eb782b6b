#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtmem/common.hpp"
#include "dtmem/tensor.hpp"

namespace dtmem {

struct LoraConfig {
    int rank = 4;
    double alpha = 8.0;
    double dropout = 0.0;

    void validate() const {
        if (rank < 1) throw ContractError("lora: rank must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ContractError("lora: dropout in [0, 1)");
    }
};

// A low-rank delta attached to one projection matrix W[d_in x d_out]:
// effective weight is W + (alpha/rank) * down * up. `down` starts at zero so
// a freshly attached adapter is an exact identity.
struct LoraAdapter {
    Tensor down;  // [d_in x rank], zero-init
    Tensor up;    // [rank x d_out], truncated-normal init
    int rank = 4;
    double alpha = 8.0;
    double dropout = 0.0;
    std::string target;

    double scaling() const { return alpha / static_cast<double>(rank); }

    // Dense W + (alpha/rank) * down * up, for merged export and oracles.
    Tensor materialize(const Tensor& base) const {
        return add(base, scale(matmul(down, up), scaling()));
    }
};

// y = x W + (alpha/rank) (drop(x) down) up. Dropout applies only to the
// adapter branch and only in training mode.
inline Tensor adapted_matmul(const Tensor& x, const Tensor& w, const LoraAdapter* adapter,
                             bool training = false, Rng* rng = nullptr) {
    Tensor base = matmul(x, w);
    if (!adapter) return base;
    if (x.cols() != adapter->down.rows() || adapter->up.cols() != w.cols())
        throw ShapeError("adapted_matmul: adapter " + shape_str(adapter->down.shape()) + "*" +
                         shape_str(adapter->up.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
    Tensor xin = x;
    if (training && adapter->dropout > 0.0) {
        if (!rng) throw ContractError("adapted_matmul: dropout requires an rng in training mode");
        xin = dropout(x, adapter->dropout, *rng);
    }
    Tensor delta = matmul(matmul(xin, adapter->down), adapter->up);
    return add(base, scale(delta, adapter->scaling()));
}

}  // namespace dtmem
