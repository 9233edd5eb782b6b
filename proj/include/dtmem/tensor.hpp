#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "dtmem/common.hpp"
#include "dtmem/rng.hpp"

namespace dtmem {

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates into parents' grad
    std::uint64_t mark = 0;                     // traversal stamp

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline thread_local bool no_grad_flag = false;

}  // namespace detail

// Disables graph construction in scope. Forward passes under this guard
// produce plain value tensors (used by evaluation rollouts).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::no_grad_flag) { detail::no_grad_flag = true; }
    ~NoGradGuard() { detail::no_grad_flag = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return !detail::no_grad_flag; }

// Dense 64-bit float tensor, row-major, with reverse-mode autodiff.
// A Tensor is a shared handle to an immutable value buffer; only grad
// buffers (and leaf values, via the optimizer) mutate after creation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return make(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        return make(std::move(shape), v, requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        Tensor t = make(Shape{}, v, requires_grad);
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false) {
        if (numel(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("from_values: " + shape_str(shape) + " holds " +
                             std::to_string(numel(shape)) + " elements, got " +
                             std::to_string(values.size()));
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(values);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(n_->shape.size()); }

    std::int64_t rows() const {
        if (rank() != 2) throw ShapeError("rows: tensor is not rank 2, shape " + shape_str(shape()));
        return n_->shape[0];
    }
    std::int64_t cols() const {
        if (rank() != 2) throw ShapeError("cols: tensor is not rank 2, shape " + shape_str(shape()));
        return n_->shape[1];
    }

    const std::vector<double>& values() const { return n_->value; }
    // Leaf mutation only: parameter init and optimizer updates.
    std::vector<double>& values_mut() { return n_->value; }

    double item() const {
        if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
        return n_->value[0];
    }
    double at(std::int64_t i) const { return n_->value[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i, std::int64_t j) const {
        return n_->value[static_cast<std::size_t>(i * cols() + j)];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw ContractError("grad: buffer not populated; run backward first");
        return n_->grad;
    }
    std::vector<double>& grad_mut() {
        if (!has_grad()) throw ContractError("grad: buffer not populated; run backward first");
        return n_->grad;
    }
    void zero_grad() {
        if (n_) n_->grad.clear();
    }

    std::shared_ptr<detail::TensorNode> node() const { return n_; }

private:
    static Tensor make(Shape shape, double fill, bool requires_grad) {
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->value.assign(static_cast<std::size_t>(numel(shape)), fill);
        t.n_->shape = std::move(shape);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline Tensor result(Shape shape, std::vector<double> value,
                     std::vector<std::shared_ptr<TensorNode>> parents,
                     std::function<void(TensorNode&)> backprop) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(value));
    bool rg = false;
    if (grad_enabled()) {
        for (const auto& p : parents) rg = rg || p->requires_grad;
    }
    if (rg) {
        out.set_requires_grad(true);
        out.node()->parents = std::move(parents);
        out.node()->backprop = std::move(backprop);
    }
    return out;
}

// c = a * b, row-major; the k-inner "ikj" order keeps the j loop contiguous.
inline void mm(const double* a, const double* b, double* c, std::int64_t m,
               std::int64_t k, std::int64_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// da += g * b^T  (g: m x n, b: k x n, da: m x k)
inline void mm_acc_gbT(const double* g, const double* b, double* da,
                       std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* darow = da + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            darow[p] += s;
        }
    }
}

// db += a^T * g  (a: m x k, g: m x n, db: k x n)
inline void mm_acc_aTg(const double* a, const double* g, double* db,
                       std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* dbrow = db + p * n;
            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
    }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::result(a.shape(), std::move(v), {an, bn}, [an, bn](detail::TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::result(a.shape(), std::move(v), {an, bn}, [an, bn](detail::TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] -= out.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::result(a.shape(), std::move(v), {an, bn}, [an, bn](detail::TensorNode& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                an->grad[i] += out.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                bn->grad[i] += out.grad[i] * an->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (double& x : v) x *= c;
    auto an = a.node();
    return detail::result(a.shape(), std::move(v), {an}, [an, c](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += c * out.grad[i];
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (double& x : v) x += c;
    auto an = a.node();
    return detail::result(a.shape(), std::move(v), {an}, [an](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// Elementwise natural log; caller guarantees positive input.
inline Tensor log(const Tensor& a) {
    std::vector<double> v(a.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.values()[i]);
    auto an = a.node();
    return detail::result(a.shape(), std::move(v), {an}, [an](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            an->grad[i] += out.grad[i] / an->value[i];
    });
}

inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    std::vector<double> v(a.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a.values()[i];
        v[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    auto an = a.node();
    return detail::result(a.shape(), std::move(v), {an}, [an](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double x = an->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            an->grad[i] += out.grad[i] * (cdf + x * pdf);
        }
    });
}

// Inverted dropout; draws one uniform per element from `rng`. Call sites are
// expected to skip the call entirely outside training.
inline Tensor dropout(const Tensor& a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
    if (p == 0.0) return a;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(a.values().size());
    std::vector<double> v(a.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double m = rng.uniform() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        v[i] = a.values()[i] * m;
    }
    auto an = a.node();
    return detail::result(a.shape(), std::move(v), {an}, [an, mask](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            an->grad[i] += out.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(static_cast<std::size_t>(m * n));
    detail::mm(a.values().data(), b.values().data(), v.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return detail::result({m, n}, std::move(v), {an, bn},
                          [an, bn, m, k, n](detail::TensorNode& out) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  detail::mm_acc_gbT(out.grad.data(), bn->value.data(),
                                                     an->grad.data(), m, k, n);
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  detail::mm_acc_aTg(an->value.data(), out.grad.data(),
                                                     bn->grad.data(), m, k, n);
                              }
                          });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(a.shape()));
    const std::int64_t r = a.rows(), c = a.cols();
    std::vector<double> v(static_cast<std::size_t>(r * c));
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) v[static_cast<std::size_t>(j * r + i)] = a.at(i, j);
    auto an = a.node();
    return detail::result({c, r}, std::move(v), {an}, [an, r, c](detail::TensorNode& out) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j)
                an->grad[static_cast<std::size_t>(i * c + j)] +=
                    out.grad[static_cast<std::size_t>(j * r + i)];
    });
}

// m[r x c] + v[c] broadcast over rows.
inline Tensor add_row_vector(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.shape()[0] != m.cols())
        throw ShapeError("add_row_vector: " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
    const std::int64_t r = m.rows(), c = m.cols();
    std::vector<double> out_v(m.values());
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out_v[static_cast<std::size_t>(i * c + j)] += v.at(j);
    auto mn = m.node();
    auto vn = v.node();
    return detail::result(m.shape(), std::move(out_v), {mn, vn},
                          [mn, vn, r, c](detail::TensorNode& out) {
                              if (mn->requires_grad) {
                                  mn->ensure_grad();
                                  for (std::size_t i = 0; i < out.grad.size(); ++i)
                                      mn->grad[i] += out.grad[i];
                              }
                              if (vn->requires_grad) {
                                  vn->ensure_grad();
                                  for (std::int64_t i = 0; i < r; ++i)
                                      for (std::int64_t j = 0; j < c; ++j)
                                          vn->grad[static_cast<std::size_t>(j)] +=
                                              out.grad[static_cast<std::size_t>(i * c + j)];
                              }
                          });
}

// Rows of m scaled by per-row factors s[r].
inline Tensor scale_rows(const Tensor& m, const Tensor& s) {
    if (m.rank() != 2 || s.rank() != 1 || s.shape()[0] != m.rows())
        throw ShapeError("scale_rows: " + shape_str(m.shape()) + " vs " + shape_str(s.shape()));
    const std::int64_t r = m.rows(), c = m.cols();
    std::vector<double> v(m.values());
    for (std::int64_t i = 0; i < r; ++i) {
        const double f = s.at(i);
        for (std::int64_t j = 0; j < c; ++j) v[static_cast<std::size_t>(i * c + j)] *= f;
    }
    auto mn = m.node();
    auto sn = s.node();
    return detail::result(m.shape(), std::move(v), {mn, sn},
                          [mn, sn, r, c](detail::TensorNode& out) {
                              if (mn->requires_grad) {
                                  mn->ensure_grad();
                                  for (std::int64_t i = 0; i < r; ++i) {
                                      const double f = sn->value[static_cast<std::size_t>(i)];
                                      for (std::int64_t j = 0; j < c; ++j)
                                          mn->grad[static_cast<std::size_t>(i * c + j)] +=
                                              f * out.grad[static_cast<std::size_t>(i * c + j)];
                                  }
                              }
                              if (sn->requires_grad) {
                                  sn->ensure_grad();
                                  for (std::int64_t i = 0; i < r; ++i) {
                                      double dot = 0.0;
                                      for (std::int64_t j = 0; j < c; ++j)
                                          dot += out.grad[static_cast<std::size_t>(i * c + j)] *
                                                 mn->value[static_cast<std::size_t>(i * c + j)];
                                      sn->grad[static_cast<std::size_t>(i)] += dot;
                                  }
                              }
                          });
}

inline Tensor outer(const Tensor& u, const Tensor& v) {
    if (u.rank() != 1 || v.rank() != 1)
        throw ShapeError("outer: need two vectors, got " + shape_str(u.shape()) + " and " +
                         shape_str(v.shape()));
    const std::int64_t r = u.shape()[0], c = v.shape()[0];
    std::vector<double> out_v(static_cast<std::size_t>(r * c));
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out_v[static_cast<std::size_t>(i * c + j)] = u.at(i) * v.at(j);
    auto un = u.node();
    auto vn = v.node();
    return detail::result({r, c}, std::move(out_v), {un, vn},
                          [un, vn, r, c](detail::TensorNode& out) {
                              if (un->requires_grad) {
                                  un->ensure_grad();
                                  for (std::int64_t i = 0; i < r; ++i) {
                                      double s = 0.0;
                                      for (std::int64_t j = 0; j < c; ++j)
                                          s += out.grad[static_cast<std::size_t>(i * c + j)] *
                                               vn->value[static_cast<std::size_t>(j)];
                                      un->grad[static_cast<std::size_t>(i)] += s;
                                  }
                              }
                              if (vn->requires_grad) {
                                  vn->ensure_grad();
                                  for (std::int64_t i = 0; i < r; ++i) {
                                      const double uv = un->value[static_cast<std::size_t>(i)];
                                      for (std::int64_t j = 0; j < c; ++j)
                                          vn->grad[static_cast<std::size_t>(j)] +=
                                              out.grad[static_cast<std::size_t>(i * c + j)] * uv;
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// row selection / assembly

inline Tensor gather_rows(const Tensor& t, std::vector<std::int64_t> idx) {
    if (t.rank() != 2) throw ShapeError("gather_rows: need rank 2, got " + shape_str(t.shape()));
    const std::int64_t c = t.cols();
    for (std::int64_t i : idx)
        if (i < 0 || i >= t.rows())
            throw ContractError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                                std::to_string(t.rows()) + ")");
    std::vector<double> v(idx.size() * static_cast<std::size_t>(c));
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(t.values().begin() + idx[k] * c, c, v.begin() + static_cast<std::int64_t>(k) * c);
    auto tn = t.node();
    auto ids = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
    return detail::result({static_cast<std::int64_t>(ids->size()), c}, std::move(v), {tn},
                          [tn, ids, c](detail::TensorNode& out) {
                              if (!tn->requires_grad) return;
                              tn->ensure_grad();
                              for (std::size_t k = 0; k < ids->size(); ++k) {
                                  const std::int64_t r = (*ids)[k];
                                  for (std::int64_t j = 0; j < c; ++j)
                                      tn->grad[static_cast<std::size_t>(r * c + j)] +=
                                          out.grad[k * static_cast<std::size_t>(c) +
                                                   static_cast<std::size_t>(j)];
                              }
                          });
}

// Single row as a rank-1 vector.
inline Tensor row(const Tensor& t, std::int64_t i) {
    if (t.rank() != 2) throw ShapeError("row: need rank 2, got " + shape_str(t.shape()));
    if (i < 0 || i >= t.rows())
        throw ContractError("row: index " + std::to_string(i) + " out of range");
    const std::int64_t c = t.cols();
    std::vector<double> v(t.values().begin() + i * c, t.values().begin() + (i + 1) * c);
    auto tn = t.node();
    return detail::result({c}, std::move(v), {tn}, [tn, i, c](detail::TensorNode& out) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::int64_t j = 0; j < c; ++j)
            tn->grad[static_cast<std::size_t>(i * c + j)] += out.grad[static_cast<std::size_t>(j)];
    });
}

// Round-robin row interleave: output row t*n + k is row t of inputs[k].
// All inputs share shape [K x c]; output is [(n*K) x c].
inline Tensor interleave_rows(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw ContractError("interleave_rows: no inputs");
    const std::int64_t kk = inputs[0].rows(), c = inputs[0].cols();
    const auto n = static_cast<std::int64_t>(inputs.size());
    for (const Tensor& t : inputs) detail::check_same_shape(inputs[0], t, "interleave_rows");
    std::vector<double> v(static_cast<std::size_t>(n * kk * c));
    for (std::int64_t t = 0; t < kk; ++t)
        for (std::int64_t k = 0; k < n; ++k)
            std::copy_n(inputs[static_cast<std::size_t>(k)].values().begin() + t * c, c,
                        v.begin() + (t * n + k) * c);
    std::vector<std::shared_ptr<detail::TensorNode>> parents;
    for (const Tensor& t : inputs) parents.push_back(t.node());
    auto ps = parents;
    return detail::result({n * kk, c}, std::move(v), std::move(parents),
                          [ps, n, kk, c](detail::TensorNode& out) {
                              for (std::int64_t k = 0; k < n; ++k) {
                                  auto& p = ps[static_cast<std::size_t>(k)];
                                  if (!p->requires_grad) continue;
                                  p->ensure_grad();
                                  for (std::int64_t t = 0; t < kk; ++t)
                                      for (std::int64_t j = 0; j < c; ++j)
                                          p->grad[static_cast<std::size_t>(t * c + j)] +=
                                              out.grad[static_cast<std::size_t>((t * n + k) * c + j)];
                              }
                          });
}

// Rows offset, offset+stride, offset+2*stride, ... Requires rows % stride == 0.
inline Tensor stride_rows(const Tensor& t, std::int64_t offset, std::int64_t stride) {
    if (t.rank() != 2) throw ShapeError("stride_rows: need rank 2, got " + shape_str(t.shape()));
    if (stride < 1 || offset < 0 || offset >= stride || t.rows() % stride != 0)
        throw ContractError("stride_rows: invalid offset/stride for " + shape_str(t.shape()));
    const std::int64_t c = t.cols(), count = t.rows() / stride;
    std::vector<double> v(static_cast<std::size_t>(count * c));
    for (std::int64_t k = 0; k < count; ++k)
        std::copy_n(t.values().begin() + (offset + k * stride) * c, c, v.begin() + k * c);
    auto tn = t.node();
    return detail::result({count, c}, std::move(v), {tn},
                          [tn, offset, stride, count, c](detail::TensorNode& out) {
                              if (!tn->requires_grad) return;
                              tn->ensure_grad();
                              for (std::int64_t k = 0; k < count; ++k)
                                  for (std::int64_t j = 0; j < c; ++j)
                                      tn->grad[static_cast<std::size_t>(
                                          (offset + k * stride) * c + j)] +=
                                          out.grad[static_cast<std::size_t>(k * c + j)];
                          });
}

inline Tensor slice_cols(const Tensor& t, std::int64_t start, std::int64_t n) {
    if (t.rank() != 2) throw ShapeError("slice_cols: need rank 2, got " + shape_str(t.shape()));
    if (start < 0 || n < 1 || start + n > t.cols())
        throw ContractError("slice_cols: [" + std::to_string(start) + ", " +
                            std::to_string(start + n) + ") outside " + shape_str(t.shape()));
    const std::int64_t r = t.rows(), c = t.cols();
    std::vector<double> v(static_cast<std::size_t>(r * n));
    for (std::int64_t i = 0; i < r; ++i)
        std::copy_n(t.values().begin() + i * c + start, n, v.begin() + i * n);
    auto tn = t.node();
    return detail::result({r, n}, std::move(v), {tn},
                          [tn, start, n, r, c](detail::TensorNode& out) {
                              if (!tn->requires_grad) return;
                              tn->ensure_grad();
                              for (std::int64_t i = 0; i < r; ++i)
                                  for (std::int64_t j = 0; j < n; ++j)
                                      tn->grad[static_cast<std::size_t>(i * c + start + j)] +=
                                          out.grad[static_cast<std::size_t>(i * n + j)];
                          });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::int64_t r = parts[0].rows();
    std::int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != r)
            throw ShapeError("concat_cols: row mismatch, " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        total += p.cols();
    }
    std::vector<double> v(static_cast<std::size_t>(r * total));
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
        const std::int64_t c = p.cols();
        for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(p.values().begin() + i * c, c, v.begin() + i * total + off);
        off += c;
    }
    std::vector<std::shared_ptr<detail::TensorNode>> parents;
    for (const Tensor& p : parts) parents.push_back(p.node());
    auto ps = parents;
    return detail::result({r, total}, std::move(v), std::move(parents),
                          [ps, r, total](detail::TensorNode& out) {
                              std::int64_t off2 = 0;
                              for (auto& p : ps) {
                                  const std::int64_t c = p->shape[1];
                                  if (p->requires_grad) {
                                      p->ensure_grad();
                                      for (std::int64_t i = 0; i < r; ++i)
                                          for (std::int64_t j = 0; j < c; ++j)
                                              p->grad[static_cast<std::size_t>(i * c + j)] +=
                                                  out.grad[static_cast<std::size_t>(
                                                      i * total + off2 + j)];
                                  }
                                  off2 += c;
                              }
                          });
}

// ---------------------------------------------------------------------------
// normalization / reductions

// Row-wise softmax with max subtraction. Rejects non-finite input.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: need rank 2, got " + shape_str(x.shape()));
    for (double v : x.values())
        if (!std::isfinite(v)) throw NumericError("softmax_rows: non-finite input");
    const std::int64_t r = x.rows(), c = x.cols();
    std::vector<double> y(static_cast<std::size_t>(r * c));
    for (std::int64_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double* yi = y.data() + i * c;
        double mx = xi[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        const double inv = 1.0 / s;
        for (std::int64_t j = 0; j < c; ++j) yi[j] *= inv;
    }
    auto xn = x.node();
    auto yv = std::make_shared<std::vector<double>>(y);
    return detail::result({r, c}, std::move(y), {xn}, [xn, yv, r, c](detail::TensorNode& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
            const double* yi = yv->data() + i * c;
            const double* gi = out.grad.data() + i * c;
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
            for (std::int64_t j = 0; j < c; ++j)
                xn->grad[static_cast<std::size_t>(i * c + j)] += yi[j] * (gi[j] - dot);
        }
    });
}

// Softmax of a square score matrix where row i attends to columns 0..i only.
// Masked entries are structurally zero so future positions cannot leak.
inline Tensor softmax_rows_causal(const Tensor& x) {
    if (x.rank() != 2 || x.rows() != x.cols())
        throw ShapeError("softmax_rows_causal: need square rank 2, got " + shape_str(x.shape()));
    for (double v : x.values())
        if (!std::isfinite(v)) throw NumericError("softmax_rows_causal: non-finite input");
    const std::int64_t n = x.rows();
    std::vector<double> y(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x.values().data() + i * n;
        double* yi = y.data() + i * n;
        double mx = xi[0];
        for (std::int64_t j = 1; j <= i; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j <= i; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        const double inv = 1.0 / s;
        for (std::int64_t j = 0; j <= i; ++j) yi[j] *= inv;
    }
    auto xn = x.node();
    auto yv = std::make_shared<std::vector<double>>(y);
    return detail::result({n, n}, std::move(y), {xn}, [xn, yv, n](detail::TensorNode& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double* yi = yv->data() + i * n;
            const double* gi = out.grad.data() + i * n;
            double dot = 0.0;
            for (std::int64_t j = 0; j <= i; ++j) dot += gi[j] * yi[j];
            for (std::int64_t j = 0; j <= i; ++j)
                xn->grad[static_cast<std::size_t>(i * n + j)] += yi[j] * (gi[j] - dot);
        }
    });
}

inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.shape()[0] != x.cols() ||
        bias.shape()[0] != x.cols())
        throw ShapeError("layer_norm_rows: " + shape_str(x.shape()) + " with gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    const std::int64_t r = x.rows(), c = x.cols();
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r * c));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    std::vector<double> y(static_cast<std::size_t>(r * c));
    for (std::int64_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double mean = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mean += xi[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(c);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = istd;
        for (std::int64_t j = 0; j < c; ++j) {
            const double xh = (xi[j] - mean) * istd;
            (*xhat)[static_cast<std::size_t>(i * c + j)] = xh;
            y[static_cast<std::size_t>(i * c + j)] = gain.at(j) * xh + bias.at(j);
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return detail::result(
        x.shape(), std::move(y), {xn, gn, bn},
        [xn, gn, bn, xhat, inv_std, r, c](detail::TensorNode& out) {
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        gn->grad[static_cast<std::size_t>(j)] +=
                            out.grad[static_cast<std::size_t>(i * c + j)] *
                            (*xhat)[static_cast<std::size_t>(i * c + j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        bn->grad[static_cast<std::size_t>(j)] +=
                            out.grad[static_cast<std::size_t>(i * c + j)];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i) {
                    const double istd = (*inv_std)[static_cast<std::size_t>(i)];
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double gh = out.grad[static_cast<std::size_t>(i * c + j)] *
                                          gn->value[static_cast<std::size_t>(j)];
                        mean_gh += gh;
                        mean_ghx += gh * (*xhat)[static_cast<std::size_t>(i * c + j)];
                    }
                    mean_gh /= static_cast<double>(c);
                    mean_ghx /= static_cast<double>(c);
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double gh = out.grad[static_cast<std::size_t>(i * c + j)] *
                                          gn->value[static_cast<std::size_t>(j)];
                        const double xh = (*xhat)[static_cast<std::size_t>(i * c + j)];
                        xn->grad[static_cast<std::size_t>(i * c + j)] +=
                            istd * (gh - mean_gh - xh * mean_ghx);
                    }
                }
            }
        });
}

inline Tensor sum(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    auto tn = t.node();
    return detail::result({}, {s}, {tn}, [tn](detail::TensorNode& out) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        const double g = out.grad[0];
        for (double& x : tn->grad) x += g;
    });
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode sweep from a scalar loss. Gradients accumulate into existing
// buffers; call zero_grad on leaves (or rebuild the graph) between steps.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw ContractError("backward: loss is not connected to any requires_grad tensor");

    static thread_local std::uint64_t epoch = 0;
    const std::uint64_t stamp = ++epoch;

    // Iterative post-order DFS over requires_grad ancestors.
    std::vector<detail::TensorNode*> topo;
    std::vector<std::pair<detail::TensorNode*, bool>> stack;
    stack.emplace_back(loss.node().get(), false);
    while (!stack.empty()) {
        auto [node, expanded] = stack.back();
        stack.pop_back();
        if (expanded) {
            topo.push_back(node);
            continue;
        }
        if (node->mark == stamp) continue;
        node->mark = stamp;
        stack.emplace_back(node, true);
        for (const auto& p : node->parents)
            if (p->requires_grad && p->mark != stamp) stack.emplace_back(p.get(), false);
    }

    // Interior nodes get a fresh flow buffer per sweep; leaf grads accumulate
    // across sweeps (documented behavior of repeated backward calls).
    for (detail::TensorNode* n : topo) {
        if (n->backprop)
            n->grad.assign(n->value.size(), 0.0);
        else
            n->ensure_grad();
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace dtmem
