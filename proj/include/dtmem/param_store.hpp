#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dtmem/common.hpp"
#include "dtmem/rng.hpp"
#include "dtmem/tensor.hpp"

namespace dtmem {

enum class ParamInit { Zeros, Ones, TruncNormal02 };

// Named trainable tensors. Iteration order is lexicographic (std::map), so
// optimizer sweeps and serialization are deterministic. Initial values are
// drawn from the store's own rng in creation order, which is fixed by the
// model assembly code.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_seed(seed), rng_(seed) {}

    Tensor create(const std::string& path, Shape shape, ParamInit init) {
        if (params_.count(path))
            throw ContractError("param '" + path + "' already exists");
        Tensor t = Tensor::zeros(std::move(shape), true);
        switch (init) {
            case ParamInit::Zeros:
                break;
            case ParamInit::Ones:
                for (double& v : t.values_mut()) v = 1.0;
                break;
            case ParamInit::TruncNormal02:
                for (double& v : t.values_mut()) v = rng_.truncated_normal(0.02);
                break;
        }
        params_.emplace(path, t);
        return t;
    }

    void insert(const std::string& path, Tensor t) {
        if (params_.count(path))
            throw ContractError("param '" + path + "' already exists");
        t.set_requires_grad(true);
        params_.emplace(path, std::move(t));
    }

    bool has(const std::string& path) const { return params_.count(path) != 0; }

    Tensor get(const std::string& path) const {
        auto it = params_.find(path);
        if (it == params_.end()) throw ContractError("unknown param '" + path + "'");
        return it->second;
    }

    void remove_prefix(const std::string& prefix) {
        for (auto it = params_.begin(); it != params_.end();) {
            if (it->first.rfind(prefix, 0) == 0)
                it = params_.erase(it);
            else
                ++it;
        }
    }

    const std::map<std::string, Tensor>& items() const { return params_; }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& [path, t] : params_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [path, t] : params_) t.zero_grad();
    }

    std::uint64_t rng_seed;

private:
    std::map<std::string, Tensor> params_;
    Rng rng_;
};

}  // namespace dtmem
