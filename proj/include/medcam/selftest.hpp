#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "medcam/nn_ops.hpp"
#include "medcam/optim.hpp"
#include "medcam/rng.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

// ---------------------------------------------------------------------------
// Independent reference implementations (oracles)
// ---------------------------------------------------------------------------

/// Plain quadruple-loop cross-correlation, deliberately independent of the
/// conv2d kernel in nn_ops.hpp.
inline Tensor naive_conv2d_reference(const Tensor& input, const Tensor& kernel,
                                     int stride, int padding) {
  const int n_batch = input.dim(0), channels = input.dim(1);
  const int in_h = input.dim(2), in_w = input.dim(3);
  const int n_kernels = kernel.dim(0);
  const int k_h = kernel.dim(2), k_w = kernel.dim(3);
  const int out_h = (in_h + 2 * padding - k_h) / stride + 1;
  const int out_w = (in_w + 2 * padding - k_w) / stride + 1;
  Tensor out = Tensor::zeros({n_batch, n_kernels, out_h, out_w});
  auto in_at = [&](int n, int c, int y, int x) -> double {
    if (y < 0 || x < 0 || y >= in_h || x >= in_w) return 0.0;
    return input.data()[((static_cast<long long>(n) * channels + c) * in_h + y) * in_w + x];
  };
  auto k_at = [&](int k, int c, int y, int x) -> double {
    return kernel.data()[((static_cast<long long>(k) * channels + c) * k_h + y) * k_w + x];
  };
  for (int n = 0; n < n_batch; ++n) {
    for (int k = 0; k < n_kernels; ++k) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = 0.0;
          for (int c = 0; c < channels; ++c) {
            for (int ky = 0; ky < k_h; ++ky) {
              for (int kx = 0; kx < k_w; ++kx) {
                acc += in_at(n, c, oy * stride + ky - padding, ox * stride + kx - padding) *
                       k_at(k, c, ky, kx);
              }
            }
          }
          out.data()[((static_cast<long long>(n) * n_kernels + k) * out_h + oy) * out_w +
                     ox] = acc;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generic finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCase {
  std::vector<Tensor> inputs;              // leaves with requires_grad = true
  std::function<Tensor(Tape&)> forward;    // pure in the inputs' current data
};

using GradCaseBuilder = std::function<GradCase(Rng&)>;

struct GradCheckOutcome {
  double max_rel_err = 0.0;
  std::string worst;  // where the worst error occurred
};

constexpr double kFdStep = 1e-5;
constexpr double kGradTolerance = 1e-4;

/// Central finite differences (h = 1e-5) against the tape gradients over
/// `trials` random instances. Relative error uses a small absolute floor so
/// near-zero derivative components do not amplify FD noise.
/// `negate_analytic` flips the analytic gradient before comparison; it
/// simulates a sign error in a backward rule and must make the check fail.
inline GradCheckOutcome gradient_check(const GradCaseBuilder& builder, int trials,
                                       Rng& rng, bool negate_analytic = false) {
  GradCheckOutcome outcome;
  for (int trial = 0; trial < trials; ++trial) {
    GradCase c = builder(rng);
    Tape tape;
    Tensor loss = c.forward(tape);
    backward(loss, tape);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(c.inputs.size());
    for (const Tensor& in : c.inputs) analytic.push_back(in.grad_or_zeros());

    for (std::size_t ti = 0; ti < c.inputs.size(); ++ti) {
      Tensor in = c.inputs[ti];
      double* d = in.data();
      for (long long i = 0; i < in.numel(); ++i) {
        const double keep = d[i];
        d[i] = keep + kFdStep;
        Tape t1;
        const double f_plus = c.forward(t1).item();
        d[i] = keep - kFdStep;
        Tape t2;
        const double f_minus = c.forward(t2).item();
        d[i] = keep;
        const double fd = (f_plus - f_minus) / (2.0 * kFdStep);
        double a = analytic[ti][static_cast<std::size_t>(i)];
        if (negate_analytic) a = -a;
        const double rel =
            std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-3});
        if (rel > outcome.max_rel_err) {
          outcome.max_rel_err = rel;
          char buf[128];
          std::snprintf(buf, sizeof(buf),
                        "trial %d input %zu elem %lld: analytic %.8g fd %.8g", trial,
                        ti, i, a, fd);
          outcome.worst = buf;
        }
      }
    }
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Random input helpers
// ---------------------------------------------------------------------------

namespace selftest_detail {

inline Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -2.0,
                            double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (long long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, for kinked ops (relu, |.|).
inline Tensor random_tensor_off_kink(Rng& rng, std::vector<int> shape,
                                     double min_abs = 1e-2) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (long long i = 0; i < t.numel(); ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    t.data()[i] = sign * rng.uniform(min_abs, 2.0);
  }
  return t;
}

/// Random projection to a scalar so one FD probe exercises every output
/// component at once.
inline std::function<Tensor(Tape&, const Tensor&)> projector(Rng& rng) {
  const std::uint64_t seed = rng.next_u64();
  return [seed](Tape& tape, const Tensor& out) {
    Rng local(seed);
    Tensor w = Tensor::zeros(out.shape());
    for (long long i = 0; i < w.numel(); ++i) w.data()[i] = local.uniform(-1.0, 1.0);
    return sum(tape, mul(tape, out, w));
  };
}

/// Mask-like field whose neighbor differences stay away from the |.| kink.
inline Tensor random_mask_field(Rng& rng, int h, int w) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Tensor t = random_tensor(rng, {h, w}, 0.0, 1.0);
    bool ok = true;
    const double* d = t.data();
    for (int y = 0; y < h && ok; ++y) {
      for (int x = 0; x < w && ok; ++x) {
        if (y + 1 < h && std::fabs(d[y * w + x] - d[(y + 1) * w + x]) < 1e-3) ok = false;
        if (x + 1 < w && std::fabs(d[y * w + x] - d[y * w + x + 1]) < 1e-3) ok = false;
      }
    }
    if (ok) return t;
  }
  throw ContractError("random_mask_field: rejection sampling failed");
}

}  // namespace selftest_detail

// ---------------------------------------------------------------------------
// Selftest driver
// ---------------------------------------------------------------------------

struct SelftestOptions {
  int trials_per_op = 50;
  std::uint64_t seed = 20240607;
  bool inject_fault = false;  // adds a deliberately sign-flipped canary check
};

struct SelftestLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestResult {
  std::vector<SelftestLine> lines;
  bool all_pass = true;
  double seconds = 0.0;
};

inline SelftestResult run_selftest(const SelftestOptions& opt = {}) {
  using selftest_detail::projector;
  using selftest_detail::random_mask_field;
  using selftest_detail::random_tensor;
  using selftest_detail::random_tensor_off_kink;

  const auto t0 = std::chrono::steady_clock::now();
  SelftestResult result;
  Rng master(opt.seed);

  auto add_line = [&result](const std::string& name, bool pass, std::string detail) {
    result.lines.push_back({name, pass, std::move(detail)});
    result.all_pass = result.all_pass && pass;
  };

  auto grad_entry = [&](const std::string& name, const GradCaseBuilder& builder,
                        bool negate = false) {
    Rng rng = master.fork(fnv1a64(name.data(), name.size()));
    const auto out = gradient_check(builder, opt.trials_per_op, rng, negate);
    const bool pass = out.max_rel_err < kGradTolerance;
    char buf[192];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g (%s)", out.max_rel_err,
                  out.worst.empty() ? "-" : out.worst.c_str());
    add_line(name, pass, buf);
  };

  auto rand_shape_small = [](Rng& rng) {
    return std::vector<int>{2 + rng.uniform_int(3), 2 + rng.uniform_int(3)};
  };

  // --- elementwise binaries, including scalar broadcast ---
  auto binary_builder = [&](auto op_fn, bool safe_denominator) {
    return GradCaseBuilder([=](Rng& rng) {
      GradCase c;
      const auto shape = rand_shape_small(rng);
      const int mode = rng.uniform_int(3);  // 0 same, 1 scalar rhs, 2 scalar lhs
      Tensor a = mode == 2 ? random_tensor(rng, {1}) : random_tensor(rng, shape);
      Tensor b = mode == 1 ? random_tensor(rng, {1}) : random_tensor(rng, shape);
      if (safe_denominator) {
        for (long long i = 0; i < b.numel(); ++i) {
          const double sign = b.data()[i] < 0.0 ? -1.0 : 1.0;
          b.data()[i] = sign * (0.5 + std::fabs(b.data()[i]));
        }
      }
      c.inputs = {a, b};
      auto proj = projector(rng);
      c.forward = [=](Tape& tape) -> Tensor { return proj(tape, op_fn(tape, a, b)); };
      return c;
    });
  };

  grad_entry("grad/add", binary_builder(
                             [](Tape& t, const Tensor& a, const Tensor& b) {
                               return add(t, a, b);
                             },
                             false));
  grad_entry("grad/sub", binary_builder(
                             [](Tape& t, const Tensor& a, const Tensor& b) {
                               return sub(t, a, b);
                             },
                             false));
  grad_entry("grad/mul", binary_builder(
                             [](Tape& t, const Tensor& a, const Tensor& b) {
                               return mul(t, a, b);
                             },
                             false));
  grad_entry("grad/div", binary_builder(
                             [](Tape& t, const Tensor& a, const Tensor& b) {
                               return div(t, a, b);
                             },
                             true));

  // --- elementwise unaries ---
  auto unary_entry = [&](const std::string& name, auto make_input, auto op_fn) {
    grad_entry(name, GradCaseBuilder([=](Rng& rng) {
                 GradCase c;
                 Tensor x = make_input(rng);
                 c.inputs = {x};
                 auto proj = projector(rng);
                 c.forward = [=](Tape& tape) -> Tensor {
                   return proj(tape, op_fn(tape, x));
                 };
                 return c;
               }));
  };

  unary_entry(
      "grad/relu",
      [&](Rng& rng) { return random_tensor_off_kink(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return relu(t, x); });
  unary_entry(
      "grad/sigmoid", [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return sigmoid(t, x); });
  unary_entry(
      "grad/square", [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return square(t, x); });
  unary_entry(
      "grad/sqrt",
      [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng), 0.1, 3.0); },
      [](Tape& t, const Tensor& x) { return sqrt_op(t, x); });
  unary_entry(
      "grad/log_clamped",
      [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng), 0.05, 3.0); },
      [](Tape& t, const Tensor& x) { return log_clamped(t, x); });
  unary_entry(
      "grad/scale", [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return scale(t, x, 1.7); });
  unary_entry(
      "grad/add_const",
      [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return add_const(t, x, -0.3); });

  // --- reductions ---
  unary_entry(
      "grad/sum", [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return sum(t, x); });
  unary_entry(
      "grad/mean", [&](Rng& rng) { return random_tensor(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return mean(t, x); });
  unary_entry(
      "grad/abs_sum",
      [&](Rng& rng) { return random_tensor_off_kink(rng, rand_shape_small(rng)); },
      [](Tape& t, const Tensor& x) { return abs_sum(t, x); });

  // --- softmax / select ---
  grad_entry("grad/softmax", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const int rows = 1 + rng.uniform_int(3);
               const int cols = 2 + rng.uniform_int(4);
               Tensor x = random_tensor(rng, {rows, cols}, -3.0, 3.0);
               c.inputs = {x};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, softmax(tape, x));
               };
               return c;
             }));
  grad_entry("grad/select", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(rng, rand_shape_small(rng));
               const long long idx = rng.uniform_int(static_cast<int>(x.numel()));
               c.inputs = {x};
               c.forward = [=](Tape& tape) -> Tensor {
                 return scale(tape, select(tape, x, idx), 1.3);
               };
               return c;
             }));

  // --- structured ops ---
  grad_entry("grad/conv2d", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const int n = 1 + rng.uniform_int(2);
               const int ch = 1 + rng.uniform_int(3);
               const int k = 1 + rng.uniform_int(3);
               const int h = 4 + rng.uniform_int(4);
               const int w = 4 + rng.uniform_int(4);
               const int kh = 1 + rng.uniform_int(3);
               const int kw = 1 + rng.uniform_int(3);
               const int stride = 1 + rng.uniform_int(2);
               const int pad = rng.uniform_int(3);
               Tensor x = random_tensor(rng, {n, ch, h, w});
               Tensor kk = random_tensor(rng, {k, ch, kh, kw});
               c.inputs = {x, kk};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, conv2d(tape, x, kk, stride, pad));
               };
               return c;
             }));
  grad_entry("grad/bias_add", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const bool conv_form = rng.uniform() < 0.5;
               Tensor x = conv_form
                              ? random_tensor(rng, {1 + rng.uniform_int(2),
                                                    1 + rng.uniform_int(3), 3, 4})
                              : random_tensor(rng, {2 + rng.uniform_int(3),
                                                    2 + rng.uniform_int(4)});
               Tensor b = random_tensor(rng, {x.dim(1)});
               c.inputs = {x, b};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, bias_add(tape, x, b));
               };
               return c;
             }));
  grad_entry("grad/linear", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const int n = 1 + rng.uniform_int(3);
               const int f = 2 + rng.uniform_int(4);
               const int o = 1 + rng.uniform_int(4);
               Tensor x = random_tensor(rng, {n, f});
               Tensor w = random_tensor(rng, {o, f});
               c.inputs = {x, w};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, linear(tape, x, w));
               };
               return c;
             }));
  grad_entry("grad/avg_pool2", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(
                   rng, {1 + rng.uniform_int(2), 1 + rng.uniform_int(2),
                         2 * (2 + rng.uniform_int(2)), 2 * (2 + rng.uniform_int(2))});
               c.inputs = {x};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, avg_pool2(tape, x));
               };
               return c;
             }));
  grad_entry("grad/global_avg_pool", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(rng, {1 + rng.uniform_int(2),
                                              1 + rng.uniform_int(3), 3, 5});
               c.inputs = {x};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, global_avg_pool(tape, x));
               };
               return c;
             }));
  grad_entry("grad/upsample_nearest2x", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(rng, {1, 1 + rng.uniform_int(3),
                                              2 + rng.uniform_int(3),
                                              2 + rng.uniform_int(3)});
               c.inputs = {x};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, upsample_nearest2x(tape, x));
               };
               return c;
             }));
  grad_entry("grad/concat_channels", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const int n = 1 + rng.uniform_int(2);
               const int h = 2 + rng.uniform_int(3);
               const int w = 2 + rng.uniform_int(3);
               Tensor a = random_tensor(rng, {n, 1 + rng.uniform_int(3), h, w});
               Tensor b = random_tensor(rng, {n, 1 + rng.uniform_int(3), h, w});
               c.inputs = {a, b};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, concat_channels(tape, a, b));
               };
               return c;
             }));
  grad_entry("grad/repeat_channels", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(rng, {1, 1, 3 + rng.uniform_int(3),
                                              3 + rng.uniform_int(3)});
               const int ch = 2 + rng.uniform_int(3);
               c.inputs = {x};
               auto proj = projector(rng);
               c.forward = [=](Tape& tape) -> Tensor {
                 return proj(tape, repeat_channels(tape, x, ch));
               };
               return c;
             }));
  grad_entry("grad/cross_entropy", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               const int n = 1 + rng.uniform_int(4);
               const int cols = 2 + rng.uniform_int(4);
               Tensor z = random_tensor(rng, {n, cols}, -3.0, 3.0);
               std::vector<int> labels(static_cast<std::size_t>(n));
               for (auto& l : labels) l = rng.uniform_int(cols);
               c.inputs = {z};
               c.forward = [=](Tape& tape) -> Tensor {
                 return cross_entropy_logits(tape, z, labels);
               };
               return c;
             }));
  grad_entry("grad/tv", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor m = random_mask_field(rng, 4 + rng.uniform_int(3),
                                            4 + rng.uniform_int(3));
               m.set_requires_grad(true);
               c.inputs = {m};
               c.forward = [=](Tape& tape) -> Tensor { return tv_aniso_mean(tape, m); };
               return c;
             }));

  // Composite chain shaped like the classifier forward pass.
  grad_entry("grad/composite_cnn", GradCaseBuilder([&](Rng& rng) {
               GradCase c;
               Tensor x = random_tensor(rng, {1, 2, 8, 8}, 0.0, 1.0);
               Tensor k1 = random_tensor(rng, {3, 2, 3, 3}, -0.7, 0.7);
               Tensor b1 = random_tensor(rng, {3}, -0.3, 0.3);
               Tensor w = random_tensor(rng, {3, 3}, -0.9, 0.9);
               std::vector<int> labels = {rng.uniform_int(3)};
               c.inputs = {x, k1, b1, w};
               c.forward = [=](Tape& tape) -> Tensor {
                 Tensor h = relu(tape, bias_add(tape, conv2d(tape, x, k1, 1, 1), b1));
                 h = avg_pool2(tape, h);
                 h = global_avg_pool(tape, h);
                 Tensor logits = linear(tape, h, w);
                 return cross_entropy_logits(tape, logits, labels);
               };
               return c;
             }));

  if (opt.inject_fault) {
    // Canary: a correct op whose analytic gradient gets sign-flipped before
    // the comparison. The harness must flag it.
    grad_entry("canary/sign_flipped_backward",
               GradCaseBuilder([&](Rng& rng) {
                 GradCase c;
                 Tensor x = random_tensor(rng, rand_shape_small(rng));
                 c.inputs = {x};
                 auto proj = projector(rng);
                 c.forward = [=](Tape& tape) -> Tensor {
                   return proj(tape, sigmoid(tape, x));
                 };
                 return c;
               }),
               /*negate=*/true);
  }

  // --- value oracles ---
  {
    Rng rng = master.fork(0x636f6e76ULL);
    double worst = 0.0;
    for (int trial = 0; trial < opt.trials_per_op; ++trial) {
      const int n = 1 + rng.uniform_int(2);
      const int ch = 1 + rng.uniform_int(3);
      const int k = 1 + rng.uniform_int(4);
      const int h = 3 + rng.uniform_int(7);
      const int w = 3 + rng.uniform_int(7);
      const int kh = 1 + rng.uniform_int(3);
      const int kw = 1 + rng.uniform_int(3);
      const int stride = 1 + rng.uniform_int(2);
      const int pad = rng.uniform_int(3);
      Tensor x = random_tensor(rng, {n, ch, h, w});
      Tensor kk = random_tensor(rng, {k, ch, kh, kw});
      Tape tape;
      const Tensor got = conv2d(tape, x, kk, stride, pad);
      const Tensor want = naive_conv2d_reference(x, kk, stride, pad);
      for (long long i = 0; i < got.numel(); ++i) {
        worst = std::max(worst, std::fabs(got.data()[i] - want.data()[i]));
      }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3g", worst);
    add_line("oracle/conv2d_vs_naive_loop", worst < 1e-12, buf);
  }
  {
    Rng rng = master.fork(0x736f6674ULL);
    double worst = 0.0;
    for (int trial = 0; trial < opt.trials_per_op; ++trial) {
      const int cols = 2 + rng.uniform_int(6);
      // Alternate moderate gaps (strict interior holds) with extreme gaps
      // (normalization still holds; bounds only closed).
      const bool extreme = trial % 2 == 1;
      Tensor v = extreme ? random_tensor(rng, {cols}, -350.0, 350.0)
                         : random_tensor(rng, {cols}, -15.0, 15.0);
      Tape tape;
      const Tensor p = softmax(tape, v);
      double s = 0.0;
      bool in_range = true;
      for (long long i = 0; i < p.numel(); ++i) {
        s += p.data()[i];
        in_range = in_range && (extreme ? (p.data()[i] >= 0.0 && p.data()[i] <= 1.0)
                                        : (p.data()[i] > 0.0 && p.data()[i] < 1.0));
      }
      if (!in_range) worst = 1.0;
      worst = std::max(worst, std::fabs(s - 1.0));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max |sum-1| %.3g", worst);
    add_line("oracle/softmax_normalization", worst < 1e-12, buf);
  }
  {
    // Two identical forward/backward passes must produce bit-identical
    // gradients.
    auto run_once = [&](std::uint64_t seed) {
      Rng rng(seed);
      Tensor x = random_tensor(rng, {1, 2, 8, 8}, 0.0, 1.0);
      Tensor k1 = random_tensor(rng, {3, 2, 3, 3}, -0.7, 0.7);
      Tape tape;
      Tensor h = relu(tape, conv2d(tape, x, k1, 1, 1));
      Tensor loss = mean(tape, square(tape, h));
      backward(loss, tape);
      return std::make_pair(x.grad_or_zeros(), k1.grad_or_zeros());
    };
    const auto a = run_once(0xdecafULL);
    const auto b = run_once(0xdecafULL);
    const bool same = a.first == b.first && a.second == b.second;
    add_line("determinism/tape_replay", same,
             same ? "bit-identical gradients" : "gradient mismatch");
  }
  {
    // Scalar Adam on f(w) = (w-3)^2 against an inline reference loop.
    Tensor w = Tensor::scalar(0.0, true);
    Adam adam({w}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 100; ++step) {
      Tape tape;
      Tensor loss = square(tape, add_const(tape, w, -3.0));
      adam.zero_grad();
      backward(loss, tape);
      adam.step();
    }
    double wr = 0.0, m1 = 0.0, m2 = 0.0;
    for (int step = 1; step <= 100; ++step) {
      const double g = 2.0 * (wr - 3.0);
      m1 = 0.9 * m1 + 0.1 * g;
      m2 = 0.999 * m2 + 0.001 * g * g;
      const double mh = m1 / (1.0 - std::pow(0.9, step));
      const double vh = m2 / (1.0 - std::pow(0.999, step));
      wr -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    const double diff = std::fabs(w.item() - wr);
    const double dist = std::fabs(w.item() - 3.0);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "engine %.12g reference %.12g", w.item(), wr);
    add_line("oracle/adam_scalar_reference", diff < 1e-12 && dist < 0.1, buf);
  }

  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace medcam
