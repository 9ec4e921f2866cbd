#include "xmdpt/tensor.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "xmdpt/kernels.hpp"

namespace xmdpt {

namespace {

bool g_finite_checks =
#ifdef NDEBUG
    false;
#else
    true;
#endif

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
void ensure_grad(TensorNode<T>* n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
}

template <typename T>
void check_finite(const char* op, const TensorNode<T>& n) {
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    if (!std::isfinite(static_cast<double>(n.value[i])))
      throw std::runtime_error(std::string(op) + ": non-finite output at flat index " +
                               std::to_string(i));
  }
}

template <typename T>
thread_local std::vector<Tape<T>*> g_tape_stack;

std::size_t num_elems(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Rank-1 tensors pass through rowwise ops as a single row.
template <typename T>
void rows_cols(const Tensor<T>& x, std::size_t& rows, std::size_t& cols) {
  require(x.rank() == 1 || x.rank() == 2,
          "expected rank 1 or 2, got shape " + shape_str(x.shape()));
  rows = x.rank() == 2 ? x.dim(0) : 1;
  cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
}

// Registers the backward closure if recording is active and any input needs
// gradients. `back` runs only when a gradient actually reached the output.
template <typename T>
void finalize(const char* op, Tensor<T>& out,
              const std::vector<const Tensor<T>*>& inputs,
              std::function<void()> back) {
  if (g_finite_checks) check_finite(op, *out.node());
  Tape<T>* tape = Tape<T>::current();
  if (!tape) return;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (!any) return;
  out.node()->requires_grad = true;
  tape->record([on = out.node(), back = std::move(back)] {
    if (on->grad.empty()) return;
    back();
  });
}

}  // namespace

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// --- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode<T>>();
  n->value.assign(num_elems(shape), T(0));
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<std::size_t> shape, T v, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  kern::fill(t.data(), v, t.size());
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<std::size_t> shape, std::vector<T> data,
                          bool requires_grad) {
  require(num_elems(shape) == data.size(),
          "from: data size " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return from({}, {v}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Rng& rng, std::vector<std::size_t> shape, T stddev,
                           bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Rng& rng, std::vector<std::size_t> shape, T lo, T hi,
                             bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(double(lo), double(hi)));
  return t;
}

template <typename T>
std::vector<T>& Tensor<T>::grad() {
  ensure_grad(node_.get());
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) kern::fill(node_->grad.data(), T(0), node_->grad.size());
}

template <typename T>
T Tensor<T>::item() const {
  require(size() == 1, "item: tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

// --- Tape --------------------------------------------------------------------

template <typename T>
Tape<T>::Tape() {
  g_tape_stack<T>.push_back(this);
}

template <typename T>
Tape<T>::~Tape() {
  assert(!g_tape_stack<T>.empty() && g_tape_stack<T>.back() == this);
  g_tape_stack<T>.pop_back();
}

template <typename T>
Tape<T>* Tape<T>::current() {
  return g_tape_stack<T>.empty() ? nullptr : g_tape_stack<T>.back();
}

template <typename T>
void Tape<T>::reset() {
  ops_.clear();
  consumed_ = false;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_)
    throw std::runtime_error("tape already consumed; reset() before reusing it");
  require(loss.defined() && loss.size() == 1, "backward expects a scalar loss");
  require(loss.requires_grad(),
          "loss does not require gradients; was it built while this tape was active?");
  ensure_grad(loss.node().get());
  loss.node()->grad[0] = T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  consumed_ = true;
}

template <typename T>
NoGrad<T>::NoGrad() {
  g_tape_stack<T>.push_back(nullptr);
}

template <typename T>
NoGrad<T>::~NoGrad() {
  assert(!g_tape_stack<T>.empty() && g_tape_stack<T>.back() == nullptr);
  g_tape_stack<T>.pop_back();
}

// --- ops ---------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ: " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  kern::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
  finalize("matmul", out, {&a, &b},
           [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
             const T* g = on->grad.data();
             if (an->requires_grad) {
               ensure_grad(an.get());
               kern::gemm_nt(g, bn->value.data(), an->grad.data(), m, n, k, true);
             }
             if (bn->requires_grad) {
               ensure_grad(bn.get());
               kern::gemm_tn(an->value.data(), g, bn->grad.data(), m, k, n, true);
             }
           });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out = Tensor<T>::zeros({c, r});
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  finalize("transpose", out, {&a}, [an = a.node(), on = out.node(), r, c] {
    if (!an->requires_grad) return;
    ensure_grad(an.get());
    const T* g = on->grad.data();
    T* ga = an->grad.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
  return out;
}

namespace {

template <typename T>
Tensor<T> binary_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b,
                            void (*fwd)(const T*, const T*, T*, std::size_t),
                            std::function<void()> (*make_back)(
                                std::shared_ptr<TensorNode<T>>,
                                std::shared_ptr<TensorNode<T>>,
                                std::shared_ptr<TensorNode<T>>)) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  fwd(a.data(), b.data(), out.data(), a.size());
  finalize(op, out, {&a, &b}, make_back(a.node(), b.node(), out.node()));
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_same_shape<T>(
      "add", a, b, &kern::add<T>,
      +[](std::shared_ptr<TensorNode<T>> an, std::shared_ptr<TensorNode<T>> bn,
          std::shared_ptr<TensorNode<T>> on) -> std::function<void()> {
        return [an, bn, on] {
          const T* g = on->grad.data();
          const std::size_t n = on->grad.size();
          if (an->requires_grad) {
            ensure_grad(an.get());
            kern::axpy(T(1), g, an->grad.data(), n);
          }
          if (bn->requires_grad) {
            ensure_grad(bn.get());
            kern::axpy(T(1), g, bn->grad.data(), n);
          }
        };
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_same_shape<T>(
      "sub", a, b, &kern::sub<T>,
      +[](std::shared_ptr<TensorNode<T>> an, std::shared_ptr<TensorNode<T>> bn,
          std::shared_ptr<TensorNode<T>> on) -> std::function<void()> {
        return [an, bn, on] {
          const T* g = on->grad.data();
          const std::size_t n = on->grad.size();
          if (an->requires_grad) {
            ensure_grad(an.get());
            kern::axpy(T(1), g, an->grad.data(), n);
          }
          if (bn->requires_grad) {
            ensure_grad(bn.get());
            kern::axpy(T(-1), g, bn->grad.data(), n);
          }
        };
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_same_shape<T>(
      "mul", a, b, &kern::mul<T>,
      +[](std::shared_ptr<TensorNode<T>> an, std::shared_ptr<TensorNode<T>> bn,
          std::shared_ptr<TensorNode<T>> on) -> std::function<void()> {
        return [an, bn, on] {
          const T* g = on->grad.data();
          const std::size_t n = on->grad.size();
          std::vector<T> scratch(n);
          if (an->requires_grad) {
            ensure_grad(an.get());
            kern::mul(g, bn->value.data(), scratch.data(), n);
            kern::axpy(T(1), scratch.data(), an->grad.data(), n);
          }
          if (bn->requires_grad) {
            ensure_grad(bn.get());
            kern::mul(g, an->value.data(), scratch.data(), n);
            kern::axpy(T(1), scratch.data(), bn->grad.data(), n);
          }
        };
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kern::scale(a.data(), s, out.data(), a.size());
  finalize("scale", out, {&a}, [an = a.node(), on = out.node(), s] {
    if (!an->requires_grad) return;
    ensure_grad(an.get());
    kern::axpy(s, on->grad.data(), an->grad.data(), on->grad.size());
  });
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = src[i] + s;
  finalize("add_scalar", out, {&a}, [an = a.node(), on = out.node()] {
    if (!an->requires_grad) return;
    ensure_grad(an.get());
    kern::axpy(T(1), on->grad.data(), an->grad.data(), on->grad.size());
  });
  return out;
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  std::size_t rows, cols;
  rows_cols(x, rows, cols);
  require(v.rank() == 1 && v.dim(0) == cols,
          "add_rowvec: vector shape " + shape_str(v.shape()) +
              " does not match row width of " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    kern::add(x.data() + r * cols, v.data(), out.data() + r * cols, cols);
  finalize("add_rowvec", out, {&x, &v},
           [xn = x.node(), vn = v.node(), on = out.node(), rows, cols] {
             const T* g = on->grad.data();
             if (xn->requires_grad) {
               ensure_grad(xn.get());
               kern::axpy(T(1), g, xn->grad.data(), rows * cols);
             }
             if (vn->requires_grad) {
               ensure_grad(vn.get());
               for (std::size_t r = 0; r < rows; ++r)
                 kern::axpy(T(1), g + r * cols, vn->grad.data(), cols);
             }
           });
  return out;
}

template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  std::size_t rows, cols;
  rows_cols(x, rows, cols);
  require(v.rank() == 1 && v.dim(0) == cols,
          "mul_rowvec: vector shape " + shape_str(v.shape()) +
              " does not match row width of " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    kern::mul(x.data() + r * cols, v.data(), out.data() + r * cols, cols);
  finalize("mul_rowvec", out, {&x, &v},
           [xn = x.node(), vn = v.node(), on = out.node(), rows, cols] {
             const T* g = on->grad.data();
             std::vector<T> scratch(cols);
             if (xn->requires_grad) {
               ensure_grad(xn.get());
               for (std::size_t r = 0; r < rows; ++r) {
                 kern::mul(g + r * cols, vn->value.data(), scratch.data(), cols);
                 kern::axpy(T(1), scratch.data(), xn->grad.data() + r * cols, cols);
               }
             }
             if (vn->requires_grad) {
               ensure_grad(vn.get());
               for (std::size_t r = 0; r < rows; ++r) {
                 kern::mul(g + r * cols, xn->value.data() + r * cols, scratch.data(),
                           cols);
                 kern::axpy(T(1), scratch.data(), vn->grad.data(), cols);
               }
             }
           });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  static constexpr double kA = 0.044715;
  static constexpr double kS = 0.7978845608028654;  // sqrt(2/pi)
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double xi = double(src[i]);
    double t = std::tanh(kS * (xi + kA * xi * xi * xi));
    dst[i] = T(0.5 * xi * (1.0 + t));
  }
  finalize("gelu", out, {&x}, [xn = x.node(), on = out.node()] {
    if (!xn->requires_grad) return;
    ensure_grad(xn.get());
    const T* g = on->grad.data();
    const T* src = xn->value.data();
    T* gx = xn->grad.data();
    for (std::size_t i = 0; i < xn->value.size(); ++i) {
      double xi = double(src[i]);
      double u = kS * (xi + kA * xi * xi * xi);
      double t = std::tanh(u);
      double d = 0.5 * (1.0 + t) +
                 0.5 * xi * (1.0 - t * t) * kS * (1.0 + 3.0 * kA * xi * xi);
      gx[i] += T(double(g[i]) * d);
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  std::size_t rows, cols;
  rows_cols(x, rows, cols);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * cols;
    T* dst = out.data() + r * cols;
    T mx = kern::max_value(src, cols);
    T total = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    kern::scale(dst, T(1) / total, dst, cols);
  }
  finalize("softmax_rows", out, {&x}, [xn = x.node(), on = out.node(), rows, cols] {
    if (!xn->requires_grad) return;
    ensure_grad(xn.get());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = on->value.data() + r * cols;
      const T* g = on->grad.data() + r * cols;
      T* gx = xn->grad.data() + r * cols;
      T s = kern::dot(y, g, cols);
      for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (g[j] - s);
    }
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
  std::size_t rows, cols;
  rows_cols(x, rows, cols);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * cols;
    T* dst = out.data() + r * cols;
    T mean = kern::sum(src, cols) / T(cols);
    T var = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      T c = src[j] - mean;
      dst[j] = c;
      var += c * c;
    }
    var /= T(cols);
    inv[r] = T(1) / std::sqrt(var + eps);
    kern::scale(dst, inv[r], dst, cols);
  }
  finalize("layer_norm", out, {&x},
           [xn = x.node(), on = out.node(), inv = std::move(inv), rows, cols] {
             if (!xn->requires_grad) return;
             ensure_grad(xn.get());
             for (std::size_t r = 0; r < rows; ++r) {
               const T* xh = on->value.data() + r * cols;
               const T* g = on->grad.data() + r * cols;
               T* gx = xn->grad.data() + r * cols;
               T m1 = kern::sum(g, cols) / T(cols);
               T m2 = kern::dot(g, xh, cols) / T(cols);
               for (std::size_t j = 0; j < cols; ++j)
                 gx[j] += inv[r] * (g[j] - m1 - xh[j] * m2);
             }
           });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  return add_rowvec(mul_rowvec(layer_norm(x, eps), gain), bias);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(kern::sum(x.data(), x.size()));
  finalize("sum_all", out, {&x}, [xn = x.node(), on = out.node()] {
    if (!xn->requires_grad) return;
    ensure_grad(xn.get());
    const T g = on->grad[0];
    T* gx = xn->grad.data();
    for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  require(x.size() > 0, "mean_all: empty tensor");
  const T invn = T(1) / T(x.size());
  Tensor<T> out = Tensor<T>::scalar(kern::sum(x.data(), x.size()) * invn);
  finalize("mean_all", out, {&x}, [xn = x.node(), on = out.node(), invn] {
    if (!xn->requires_grad) return;
    ensure_grad(xn.get());
    const T g = on->grad[0] * invn;
    T* gx = xn->grad.data();
    for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> conv_1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 2, "conv_1x1: expected [channels, width] input, got " +
                             shape_str(x.shape()));
  const std::size_t c = x.dim(0), d = x.dim(1);
  require(w.rank() == 1 && w.dim(0) == c,
          "conv_1x1: weight shape " + shape_str(w.shape()) + " does not match " +
              std::to_string(c) + " channels");
  require(b.size() == 1, "conv_1x1: bias must be a single element");
  Tensor<T> out = Tensor<T>::full({d}, b[0]);
  for (std::size_t i = 0; i < c; ++i)
    kern::axpy(w[i], x.data() + i * d, out.data(), d);
  finalize("conv_1x1", out, {&x, &w, &b},
           [xn = x.node(), wn = w.node(), bn = b.node(), on = out.node(), c, d] {
             const T* g = on->grad.data();
             if (xn->requires_grad) {
               ensure_grad(xn.get());
               for (std::size_t i = 0; i < c; ++i)
                 kern::axpy(wn->value[i], g, xn->grad.data() + i * d, d);
             }
             if (wn->requires_grad) {
               ensure_grad(wn.get());
               for (std::size_t i = 0; i < c; ++i)
                 wn->grad[i] += kern::dot(g, xn->value.data() + i * d, d);
             }
             if (bn->requires_grad) {
               ensure_grad(bn.get());
               bn->grad[0] += kern::sum(g, d);
             }
           });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> shape) {
  require(num_elems(shape) == x.size(), "reshape: cannot view " +
                                            shape_str(x.shape()) + " as " +
                                            shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.values());
  finalize("reshape", out, {&x}, [xn = x.node(), on = out.node()] {
    if (!xn->requires_grad) return;
    ensure_grad(xn.get());
    kern::axpy(T(1), on->grad.data(), xn->grad.data(), on->grad.size());
  });
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
  require(x.rank() == 2, "gather_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t cols = x.dim(1);
  for (auto i : idx)
    require(i < x.dim(0), "gather_rows: index " + std::to_string(i) +
                              " out of range for " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * cols, x.data() + idx[r] * cols, cols * sizeof(T));
  finalize("gather_rows", out, {&x},
           [xn = x.node(), on = out.node(), idx = std::move(idx), cols] {
             if (!xn->requires_grad) return;
             ensure_grad(xn.get());
             for (std::size_t r = 0; r < idx.size(); ++r)
               kern::axpy(T(1), on->grad.data() + r * cols,
                          xn->grad.data() + idx[r] * cols, cols);
           });
  return out;
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, std::vector<std::size_t> idx,
                       const Tensor<T>& rows) {
  require(base.rank() == 2 && rows.rank() == 2,
          "scatter_rows: expected rank-2 base and rows");
  require(rows.dim(0) == idx.size() && rows.dim(1) == base.dim(1),
          "scatter_rows: rows shape " + shape_str(rows.shape()) +
              " does not match " + std::to_string(idx.size()) + " indices into " +
              shape_str(base.shape()));
  const std::size_t cols = base.dim(1);
  for (auto i : idx)
    require(i < base.dim(0), "scatter_rows: index " + std::to_string(i) +
                                 " out of range for " + shape_str(base.shape()));
  Tensor<T> out = Tensor<T>::from(base.shape(), base.values());
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + idx[r] * cols, rows.data() + r * cols, cols * sizeof(T));
  finalize("scatter_rows", out, {&base, &rows},
           [bn = base.node(), rn = rows.node(), on = out.node(),
            idx = std::move(idx), cols] {
             const T* g = on->grad.data();
             if (rn->requires_grad) {
               ensure_grad(rn.get());
               for (std::size_t r = 0; r < idx.size(); ++r)
                 kern::axpy(T(1), g + idx[r] * cols, rn->grad.data() + r * cols, cols);
             }
             if (bn->requires_grad) {
               ensure_grad(bn.get());
               std::vector<char> replaced(bn->value.size() / cols, 0);
               for (auto i : idx) replaced[i] = 1;
               for (std::size_t r = 0; r < replaced.size(); ++r)
                 if (!replaced[r])
                   kern::axpy(T(1), g + r * cols, bn->grad.data() + r * cols, cols);
             }
           });
  return out;
}

template <typename T>
Tensor<T> repeat_row(const Tensor<T>& v, std::size_t rows) {
  require(v.rank() == 1, "repeat_row: expected rank 1, got " + shape_str(v.shape()));
  const std::size_t cols = v.dim(0);
  Tensor<T> out = Tensor<T>::zeros({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * cols, v.data(), cols * sizeof(T));
  finalize("repeat_row", out, {&v}, [vn = v.node(), on = out.node(), rows, cols] {
    if (!vn->requires_grad) return;
    ensure_grad(vn.get());
    for (std::size_t r = 0; r < rows; ++r)
      kern::axpy(T(1), on->grad.data() + r * cols, vn->grad.data(), cols);
  });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  require(x.rank() == 2, "slice_cols: expected rank 2, got " + shape_str(x.shape()));
  require(c0 < c1 && c1 <= x.dim(1),
          "slice_cols: bad column range [" + std::to_string(c0) + ", " +
              std::to_string(c1) + ") for " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
  Tensor<T> out = Tensor<T>::zeros({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * w, x.data() + r * cols + c0, w * sizeof(T));
  finalize("slice_cols", out, {&x},
           [xn = x.node(), on = out.node(), rows, cols, c0, w] {
             if (!xn->requires_grad) return;
             ensure_grad(xn.get());
             for (std::size_t r = 0; r < rows; ++r)
               kern::axpy(T(1), on->grad.data() + r * w,
                          xn->grad.data() + r * cols + c0, w);
           });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat_cols: no inputs");
  const std::size_t rank = xs[0].rank();
  require(rank == 1 || rank == 2, "concat_cols: expected rank 1 or 2 inputs");
  std::size_t rows = rank == 2 ? xs[0].dim(0) : 1;
  std::size_t total = 0;
  for (const auto& x : xs) {
    require(x.rank() == rank, "concat_cols: mixed ranks");
    std::size_t r = rank == 2 ? x.dim(0) : 1;
    require(r == rows, "concat_cols: row counts differ");
    total += rank == 2 ? x.dim(1) : x.dim(0);
  }
  std::vector<std::size_t> out_shape =
      rank == 2 ? std::vector<std::size_t>{rows, total}
                : std::vector<std::size_t>{total};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    std::size_t w = rank == 2 ? x.dim(1) : x.dim(0);
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * total + off, x.data() + r * w, w * sizeof(T));
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  std::vector<const Tensor<T>*> refs;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& x : xs) {
    refs.push_back(&x);
    nodes.push_back(x.node());
  }
  finalize("concat_cols", out, refs,
           [nodes = std::move(nodes), on = out.node(), offsets = std::move(offsets),
            widths = std::move(widths), rows, total] {
             for (std::size_t i = 0; i < nodes.size(); ++i) {
               if (!nodes[i]->requires_grad) continue;
               ensure_grad(nodes[i].get());
               for (std::size_t r = 0; r < rows; ++r)
                 kern::axpy(T(1), on->grad.data() + r * total + offsets[i],
                            nodes[i]->grad.data() + r * widths[i], widths[i]);
             }
           });
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat_rows: no inputs");
  const std::size_t cols = xs[0].rank() == 2 ? xs[0].dim(1) : 0;
  require(cols > 0, "concat_rows: expected rank-2 inputs");
  std::size_t rows = 0;
  for (const auto& x : xs) {
    require(x.rank() == 2 && x.dim(1) == cols,
            "concat_rows: input " + shape_str(x.shape()) + " does not have " +
                std::to_string(cols) + " columns");
    rows += x.dim(0);
  }
  Tensor<T> out = Tensor<T>::zeros({rows, cols});
  std::size_t row_off = 0;
  std::vector<std::size_t> row_offsets;
  for (const auto& x : xs) {
    std::memcpy(out.data() + row_off * cols, x.data(), x.size() * sizeof(T));
    row_offsets.push_back(row_off);
    row_off += x.dim(0);
  }
  std::vector<const Tensor<T>*> refs;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& x : xs) {
    refs.push_back(&x);
    nodes.push_back(x.node());
  }
  finalize("concat_rows", out, refs,
           [nodes = std::move(nodes), on = out.node(),
            row_offsets = std::move(row_offsets), cols] {
             for (std::size_t i = 0; i < nodes.size(); ++i) {
               if (!nodes[i]->requires_grad) continue;
               ensure_grad(nodes[i].get());
               kern::axpy(T(1), on->grad.data() + row_offsets[i] * cols,
                          nodes[i]->grad.data(), nodes[i]->value.size());
             }
           });
  return out;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), x.values());
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& latent, std::size_t p) {
  require(latent.rank() == 3, "patchify: expected [H, W, C] input, got " +
                                  shape_str(latent.shape()));
  const std::size_t h = latent.dim(0), w = latent.dim(1), c = latent.dim(2);
  require(p > 0 && h % p == 0 && w % p == 0,
          "patchify: patch size " + std::to_string(p) + " does not divide " +
              shape_str(latent.shape()));
  const std::size_t gh = h / p, gw = w / p, tok = p * p * c;
  Tensor<T> out = Tensor<T>::zeros({gh * gw, tok});
  const T* src = latent.data();
  T* dst = out.data();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          std::memcpy(dst + (gy * gw + gx) * tok + (py * p + px) * c,
                      src + ((gy * p + py) * w + gx * p + px) * c, c * sizeof(T));
  finalize("patchify", out, {&latent},
           [ln = latent.node(), on = out.node(), gh, gw, p, c, w, tok] {
             if (!ln->requires_grad) return;
             ensure_grad(ln.get());
             const T* g = on->grad.data();
             for (std::size_t gy = 0; gy < gh; ++gy)
               for (std::size_t gx = 0; gx < gw; ++gx)
                 for (std::size_t py = 0; py < p; ++py)
                   for (std::size_t px = 0; px < p; ++px)
                     kern::axpy(T(1), g + (gy * gw + gx) * tok + (py * p + px) * c,
                                ln->grad.data() +
                                    ((gy * p + py) * w + gx * p + px) * c,
                                c);
           });
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t h, std::size_t w,
                     std::size_t c, std::size_t p) {
  require(tokens.rank() == 2, "unpatchify: expected rank-2 tokens, got " +
                                  shape_str(tokens.shape()));
  require(p > 0 && h % p == 0 && w % p == 0, "unpatchify: bad patch size");
  const std::size_t gh = h / p, gw = w / p, tok = p * p * c;
  require(tokens.dim(0) == gh * gw && tokens.dim(1) == tok,
          "unpatchify: token shape " + shape_str(tokens.shape()) +
              " does not match target " + shape_str({h, w, c}) + " with p=" +
              std::to_string(p));
  Tensor<T> out = Tensor<T>::zeros({h, w, c});
  const T* src = tokens.data();
  T* dst = out.data();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          std::memcpy(dst + ((gy * p + py) * w + gx * p + px) * c,
                      src + (gy * gw + gx) * tok + (py * p + px) * c, c * sizeof(T));
  finalize("unpatchify", out, {&tokens},
           [tn = tokens.node(), on = out.node(), gh, gw, p, c, w, tok] {
             if (!tn->requires_grad) return;
             ensure_grad(tn.get());
             const T* g = on->grad.data();
             for (std::size_t gy = 0; gy < gh; ++gy)
               for (std::size_t gx = 0; gx < gw; ++gx)
                 for (std::size_t py = 0; py < p; ++py)
                   for (std::size_t px = 0; px < p; ++px)
                     kern::axpy(T(1), g + ((gy * p + py) * w + gx * p + px) * c,
                                tn->grad.data() + (gy * gw + gx) * tok +
                                    (py * p + px) * c,
                                c);
           });
  return out;
}

// --- instantiation -----------------------------------------------------------

#define XMDPT_INSTANTIATE_ENGINE(T)                                               \
  template class Tensor<T>;                                                       \
  template class Tape<T>;                                                         \
  template class NoGrad<T>;                                                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> transpose<T>(const Tensor<T>&);                              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                               \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                          \
  template Tensor<T> add_rowvec<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mul_rowvec<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                   \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                           \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, T);                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&,            \
                                   const Tensor<T>&, T);                          \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                               \
  template Tensor<T> conv_1x1<T>(const Tensor<T>&, const Tensor<T>&,              \
                                 const Tensor<T>&);                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<std::size_t>);      \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::vector<std::size_t>);  \
  template Tensor<T> scatter_rows<T>(const Tensor<T>&, std::vector<std::size_t>,  \
                                     const Tensor<T>&);                           \
  template Tensor<T> repeat_row<T>(const Tensor<T>&, std::size_t);                \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);   \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);               \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);               \
  template Tensor<T> detach<T>(const Tensor<T>&);                                 \
  template Tensor<T> patchify<T>(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> unpatchify<T>(const Tensor<T>&, std::size_t, std::size_t,    \
                                   std::size_t, std::size_t);

XMDPT_INSTANTIATE_ENGINE(float)
XMDPT_INSTANTIATE_ENGINE(double)
#undef XMDPT_INSTANTIATE_ENGINE

}  // namespace xmdpt
