#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "medcam/errors.hpp"

namespace medcam {

/// Dense row-major float64 tensor with an optional gradient buffer.
/// Handles share storage: copying a Tensor copies a reference, not the data.
/// The gradient buffer is allocated lazily on first use.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<Impl>()) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(checked_numel(t.impl_->shape), 0.0);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (static_cast<long long>(values.size()) != checked_numel(shape)) {
      throw DimensionError("Tensor::from: value count does not match shape");
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  long long numel() const { return static_cast<long long>(impl_->data.size()); }

  double* data() const { return impl_->data.data(); }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor is not scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) const { impl_->requires_grad = v; }

  bool grad_allocated() const { return !impl_->grad.empty(); }

  /// Gradient buffer, allocated (zeroed) on demand.
  double* grad_data() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad.data();
  }

  /// Copy of the gradient; zeros when no gradient was ever accumulated.
  std::vector<double> grad_or_zeros() const {
    if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
  }

  void zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  /// Drops the gradient buffer entirely.
  void release_grad() const {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }

  /// Deep copy of the values with no gradient tracking.
  Tensor detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = false;
    return t;
  }

  /// Deep copy of the values into a different shape with the same numel.
  Tensor with_shape(std::vector<int> shape) const {
    if (checked_numel(shape) != numel()) {
      throw DimensionError("Tensor::with_shape: numel mismatch");
    }
    Tensor t = detach();
    t.impl_->shape = std::move(shape);
    return t;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    std::vector<int> shape{1};
    std::vector<double> data{0.0};
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  static long long checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("Tensor: empty shape");
    long long n = 1;
    for (int d : shape) {
      if (d < 1) throw DimensionError("Tensor: dimensions must be >= 1");
      n *= d;
    }
    return n;
  }

  std::shared_ptr<Impl> impl_;
};

/// Records backward closures during a forward pass and replays them in
/// reverse. A tape is rebuilt from scratch for every optimization step.
///
/// backward() first zeroes the gradients of all op outputs recorded on the
/// tape, so intermediate gradients always reflect exactly one sweep while
/// leaf gradients keep accumulating across repeated calls.
class Tape {
 public:
  void record(Tensor output, std::function<void()> back) {
    nodes_.push_back(Node{std::move(output), std::move(back)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  friend void backward(const Tensor& loss, Tape& tape);

 private:
  struct Node {
    Tensor output;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

/// Reverse-mode sweep from a scalar loss through every node the tape
/// recorded. Leaf gradients accumulate; callers zero them between steps.
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  for (auto& node : tape.nodes_) node.output.zero_grad();
  loss.grad_data()[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    it->back();
  }
}

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
  const double* p = t.data();
  const long long n = t.numel();
  for (long long i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(op) + ": non-finite input");
    }
  }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch");
  }
}

// Elementwise binary op with optional scalar broadcast on either side.
// fwd(a, b) -> out; dl/da and dl/db supplied as value-level lambdas.
template <class Fwd, class DA, class DB>
Tensor binary_op(Tape& tape, const char* name, const Tensor& a, const Tensor& b,
                 Fwd fwd, DA da, DB db) {
  check_finite(name, a);
  check_finite(name, b);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) require_same_shape(name, a, b);

  const Tensor& big = a_scalar ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  const long long n = big.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) {
    od[i] = fwd(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  }

  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      if (a.requires_grad()) {
        double* ag = a.grad_data();
        for (long long i = 0; i < n; ++i) {
          const double av = ad[a_scalar ? 0 : i];
          const double bv = bd[b_scalar ? 0 : i];
          ag[a_scalar ? 0 : i] += da(av, bv) * og[i];
        }
      }
      if (b.requires_grad()) {
        double* bg = b.grad_data();
        for (long long i = 0; i < n; ++i) {
          const double av = ad[a_scalar ? 0 : i];
          const double bv = bd[b_scalar ? 0 : i];
          bg[b_scalar ? 0 : i] += db(av, bv) * og[i];
        }
      }
    });
  }
  return out;
}

// Elementwise unary op. fwd maps value -> value, dv maps value -> d out / d in.
template <class Fwd, class Dv>
Tensor unary_op(Tape& tape, const char* name, const Tensor& x, Fwd fwd, Dv dv) {
  check_finite(name, x);
  Tensor out = Tensor::zeros(x.shape());
  const long long n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) od[i] = fwd(xd[i]);

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (long long i = 0; i < n; ++i) xg[i] += dv(xd[i]) * og[i];
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      tape, "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double v) {
        double s;
        if (v >= 0.0) {
          s = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          s = e / (1.0 + e);
        }
        return s * (1.0 - s);
      });
}

inline Tensor square(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, "square", x, [](double v) { return v * v; },
      [](double v) { return 2.0 * v; });
}

inline Tensor sqrt_op(Tape& tape, const Tensor& x) {
  detail::check_finite("sqrt", x);
  const double* xd = x.data();
  for (long long i = 0; i < x.numel(); ++i) {
    if (xd[i] < 0.0) throw NumericError("sqrt: negative input");
  }
  return detail::unary_op(
      tape, "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double v) { return v > 0.0 ? 0.5 / std::sqrt(v) : 0.0; });
}

constexpr double kLogFloor = 1e-12;

/// log(max(x, 1e-12)); the clamp keeps cross-entropy and KL finite for
/// vanishing probabilities. Below the floor the derivative is zero.
inline Tensor log_clamped(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, "log", x,
      [](double v) { return std::log(v < kLogFloor ? kLogFloor : v); },
      [](double v) { return v < kLogFloor ? 0.0 : 1.0 / v; });
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  return detail::unary_op(
      tape, "scale", x, [c](double v) { return c * v; },
      [c](double) { return c; });
}

inline Tensor add_const(Tape& tape, const Tensor& x, double c) {
  return detail::unary_op(
      tape, "add_const", x, [c](double v) { return v + c; },
      [](double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape& tape, const Tensor& x) {
  detail::check_finite("sum", x);
  const long long n = x.numel();
  const double* xd = x.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) acc += xd[i];
  Tensor out = Tensor::scalar(acc);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double g = out.grad_data()[0];
      double* xg = x.grad_data();
      for (long long i = 0; i < n; ++i) xg[i] += g;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  detail::check_finite("mean", x);
  const long long n = x.numel();
  const double* xd = x.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) acc += xd[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double g = out.grad_data()[0] / static_cast<double>(n);
      double* xg = x.grad_data();
      for (long long i = 0; i < n; ++i) xg[i] += g;
    });
  }
  return out;
}

/// Sum of absolute values. At exactly zero the subgradient 0 is used.
inline Tensor abs_sum(Tape& tape, const Tensor& x) {
  detail::check_finite("abs_sum", x);
  const long long n = x.numel();
  const double* xd = x.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) acc += std::fabs(xd[i]);
  Tensor out = Tensor::scalar(acc);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double g = out.grad_data()[0];
      double* xg = x.grad_data();
      for (long long i = 0; i < n; ++i) {
        xg[i] += (xd[i] > 0.0 ? 1.0 : (xd[i] < 0.0 ? -1.0 : 0.0)) * g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and indexing
// ---------------------------------------------------------------------------

/// Row-wise softmax of a [C] vector or an [N, C] batch. Numerically stable
/// (max-shifted); rows sum to 1 to within 1e-12.
inline Tensor softmax(Tape& tape, const Tensor& x) {
  detail::check_finite("softmax", x);
  if (x.ndim() > 2) throw DimensionError("softmax: expects [C] or [N, C]");
  const int cols = x.ndim() == 2 ? x.dim(1) : x.dim(0);
  const int rows = x.ndim() == 2 ? x.dim(0) : 1;

  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = xd + static_cast<long long>(r) * cols;
    double* orow = od + static_cast<long long>(r) * cols;
    double mx = xr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double denom = 0.0;
    for (int c = 0; c < cols; ++c) {
      orow[c] = std::exp(xr[c] - mx);
      denom += orow[c];
    }
    for (int c = 0; c < cols; ++c) orow[c] /= denom;
  }

  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (int r = 0; r < rows; ++r) {
        const double* p = od + static_cast<long long>(r) * cols;
        const double* g = og + static_cast<long long>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += g[c] * p[c];
        double* xr = xg + static_cast<long long>(r) * cols;
        for (int c = 0; c < cols; ++c) xr[c] += p[c] * (g[c] - dot);
      }
    });
  }
  return out;
}

/// Extract one element (by flat index) as a scalar tensor.
inline Tensor select(Tape& tape, const Tensor& x, long long index) {
  if (index < 0 || index >= x.numel()) {
    throw ContractError("select: index out of range");
  }
  Tensor out = Tensor::scalar(x.data()[index]);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() { x.grad_data()[index] += out.grad_data()[0]; });
  }
  return out;
}

/// Index of the largest element; exact ties resolve to the lowest index.
inline int argmax_index(const Tensor& t) {
  const double* p = t.data();
  int best = 0;
  for (long long i = 1; i < t.numel(); ++i) {
    if (p[i] > p[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace medcam
