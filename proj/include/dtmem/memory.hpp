#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dtmem/common.hpp"
#include "dtmem/lora.hpp"
#include "dtmem/param_store.hpp"
#include "dtmem/tensor.hpp"

namespace dtmem {

struct MemoryConfig {
    int slots = 64;  // paper profile: 1290
    int rounds = 1;  // update/retrieve passes per forward

    void validate() const {
        if (slots < 1) throw ContractError("memory: slots must be >= 1");
        if (rounds < 1) throw ContractError("memory: rounds must be >= 1");
    }
};

// The five projections of the working memory: two for content addressing,
// three for the erase/add write. Each may carry a LoRA adapter; these five
// are the only fine-tuning injection points.
struct MemoryParams {
    Tensor address_query;  // applied to memory rows
    Tensor address_key;    // applied to input tokens
    Tensor write_query;    // memory side of the write strength
    Tensor write_key;      // token side of the write strength
    Tensor write_value;    // token content written into slots

    const LoraAdapter* address_query_lora = nullptr;
    const LoraAdapter* address_key_lora = nullptr;
    const LoraAdapter* write_query_lora = nullptr;
    const LoraAdapter* write_key_lora = nullptr;
    const LoraAdapter* write_value_lora = nullptr;
};

inline Tensor init_memory(std::int64_t slots, std::int64_t dim, std::uint64_t seed) {
    if (slots < 1 || dim < 1)
        throw ContractError("init_memory: slots and dim must be positive, got " +
                            std::to_string(slots) + "x" + std::to_string(dim));
    Rng rng(seed);
    Tensor m = Tensor::zeros({slots, dim}, true);
    for (double& v : m.values_mut()) v = rng.truncated_normal(0.02);
    return m;
}

// Content address: w = softmax over slots of (E Wk)(M Wq)^T / sqrt(d).
// Token-major orientation: row j of w is token j's distribution over slots.
inline Tensor memory_address(const Tensor& memory, const Tensor& tokens,
                             const MemoryParams& p, bool training = false, Rng* rng = nullptr) {
    Tensor q = adapted_matmul(memory, p.address_query, p.address_query_lora, training, rng);
    Tensor k = adapted_matmul(tokens, p.address_key, p.address_key_lora, training, rng);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    if (tokens.rows() == 0)
        return Tensor::zeros({0, memory.rows()});
    return softmax_rows(scale(matmul(k, transpose(q)), inv_sqrt_d));
}

// Writing strength beta, same attention shape as the address.
inline Tensor memory_write_strength(const Tensor& memory, const Tensor& tokens,
                                    const MemoryParams& p, bool training = false,
                                    Rng* rng = nullptr) {
    Tensor q = adapted_matmul(memory, p.write_query, p.write_query_lora, training, rng);
    Tensor k = adapted_matmul(tokens, p.write_key, p.write_key_lora, training, rng);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    if (tokens.rows() == 0)
        return Tensor::zeros({0, memory.rows()});
    return softmax_rows(scale(matmul(k, transpose(q)), inv_sqrt_d));
}

// Erase/add update, one token at a time:
//   add    a_j = w_j * beta_j          (elementwise over slots)
//   erase  e_j = w_j * (1 - beta_j)
//   M     <- diag(1 - e_j) M + a_j (x) v_j
// Sequential application keeps every per-slot decay factor inside [0, 1]
// even when several tokens address the same slot.
//
// The erase/add pair is computed as e = w - w*beta, a = w - e. The second
// subtraction is exact (Sterbenz when e >= w/2, representability otherwise),
// so e_j + a_j == w_j holds as an exact floating-point identity while the
// gradients stay the textbook (1-beta, beta) pair.
inline Tensor memory_write(const Tensor& memory, const Tensor& address,
                           const Tensor& write_strength, const Tensor& values) {
    const std::int64_t token_count = address.rows();
    if (write_strength.rows() != token_count || values.rows() != token_count)
        throw ShapeError("memory_write: token count mismatch between address " +
                         shape_str(address.shape()) + ", strength " +
                         shape_str(write_strength.shape()) + ", values " +
                         shape_str(values.shape()));
    Tensor m = memory;
    for (std::int64_t j = 0; j < token_count; ++j) {
        Tensor w_j = row(address, j);
        Tensor erase = sub(w_j, mul(w_j, row(write_strength, j)));
        Tensor add_w = sub(w_j, erase);
        Tensor decay = add_scalar(neg(erase), 1.0);
        m = add(scale_rows(m, decay), outer(add_w, row(values, j)));
    }
    return m;
}

// The exact erase/add split used by memory_write, exposed for invariant
// checks: returns (erase, add) rows for token j.
inline std::pair<Tensor, Tensor> write_split(const Tensor& address,
                                             const Tensor& write_strength, std::int64_t j) {
    Tensor w_j = row(address, j);
    Tensor erase = sub(w_j, mul(w_j, row(write_strength, j)));
    return {erase, sub(w_j, erase)};
}

// Retrieval reads each token's convex combination of slots.
inline Tensor memory_read(const Tensor& address, const Tensor& memory) {
    return matmul(address, memory);
}

struct MemoryForward {
    Tensor retrieved;       // E_out, [L x d]
    Tensor memory_out;      // updated memory, [N x d]
    Tensor address;         // w of the final round, [L x N]
    Tensor write_strength;  // beta of the final round, [L x N]
};

// One full pass: address -> write -> read, re-using the same address for
// write and read. With rounds > 1 the sequence repeats against the updated
// memory. The input memory tensor is never mutated.
inline MemoryForward memory_forward(const Tensor& memory, const Tensor& tokens,
                                    const MemoryParams& p, int rounds = 1,
                                    bool training = false, Rng* rng = nullptr) {
    if (rounds < 1) throw ContractError("memory_forward: rounds must be >= 1");
    MemoryForward out;
    Tensor m = memory;
    for (int r = 0; r < rounds; ++r) {
        Tensor w = memory_address(m, tokens, p, training, rng);
        Tensor beta = memory_write_strength(m, tokens, p, training, rng);
        Tensor values =
            adapted_matmul(tokens, p.write_value, p.write_value_lora, training, rng);
        m = memory_write(m, w, beta, values);
        out.retrieved = memory_read(w, m);
        out.address = w;
        out.write_strength = beta;
    }
    out.memory_out = m;
    return out;
}

}  // namespace dtmem
