#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xmdpt/rng.hpp"

// Reverse-mode autodiff over dense row-major tensors. Ops compute values
// eagerly and, when a Tape is active and an input requires gradients, push a
// backward closure onto that tape. Tape::backward replays the closures in
// reverse. Values are identical whether or not recording is active; the
// kernels do not branch on it.

namespace xmdpt {

bool finite_checks_enabled();
void set_finite_checks(bool on);

template <typename T>
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient first lands here
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, T v, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<T> data,
                     bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);
  static Tensor randn(Rng& rng, std::vector<std::size_t> shape, T stddev,
                      bool requires_grad = false);
  static Tensor uniform(Rng& rng, std::vector<std::size_t> shape, T lo, T hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Allocates (zeroed) on first touch.
  std::vector<T>& grad();
  void zero_grad();

  T item() const;
  T operator[](std::size_t flat) const { return node_->value[flat]; }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

// Constructing a Tape makes it the active recorder for this thread until it
// is destroyed (scopes nest). NoGrad suspends recording the same way.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  std::size_t num_ops() const { return ops_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

  void record(std::function<void()> back) { ops_.push_back(std::move(back)); }
  void backward(const Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

template <typename T>
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

std::string shape_str(const std::vector<std::size_t>& s);

// --- ops -------------------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
// x is [R x C] (or a length-C vector), v is length C, broadcast over rows.
template <typename T> Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v);
template <typename T> Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// Softmax along the last axis of a rank-1 or rank-2 tensor, max-subtracted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
// Non-affine layer norm along the last axis.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, T eps);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
// x is [C x D], w is length C, b is a scalar tensor; returns length D.
template <typename T>
Tensor<T> conv_1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> shape);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx);
// Copy of base with base[idx[j], :] replaced by rows[j, :]; idx must be
// duplicate-free.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, std::vector<std::size_t> idx,
                       const Tensor<T>& rows);
template <typename T> Tensor<T> repeat_row(const Tensor<T>& v, std::size_t rows);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& xs);
template <typename T> Tensor<T> detach(const Tensor<T>& x);

// Element-type conversion; the result is a constant (no grad link back).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<To>(x.values()[i]);
  return Tensor<To>::from(x.shape(), std::move(out));
}

// Splits a [H, W, C] latent into p x p patches, one token per patch, flattened
// as (py, px, channel) row-major; token order scans the patch grid row-major.
// unpatchify is the exact inverse permutation.
template <typename T> Tensor<T> patchify(const Tensor<T>& latent, std::size_t p);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t h, std::size_t w,
                     std::size_t c, std::size_t p);

}  // namespace xmdpt
