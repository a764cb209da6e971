#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "medcam/tensor.hpp"

namespace medcam {

namespace detail {

inline int ceil_div(int a, int b) { return a > 0 ? (a + b - 1) / b : a / b; }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output positions o for which o*stride + k - pad lands inside [0, in_size).
struct ValidRange {
  int lo, hi;  // half-open
};
inline ValidRange valid_out_range(int k, int pad, int stride, int in_size,
                                  int out_size) {
  int lo = std::max(0, ceil_div(pad - k, stride));
  int hi = std::min(out_size, floor_div(in_size - 1 + pad - k, stride) + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of [N,C,H,W] with kernels [K,C,kh,kw]
// ---------------------------------------------------------------------------

inline Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel,
                     int stride = 1, int padding = 0) {
  if (input.ndim() != 4 || kernel.ndim() != 4) {
    throw DimensionError("conv2d: expects input [N,C,H,W], kernel [K,C,kh,kw]");
  }
  if (stride < 1) throw ContractError("conv2d: stride must be positive");
  if (padding < 0) throw ContractError("conv2d: padding must be non-negative");
  const int n_batch = input.dim(0), channels = input.dim(1);
  const int in_h = input.dim(2), in_w = input.dim(3);
  const int n_kernels = kernel.dim(0), k_channels = kernel.dim(1);
  const int k_h = kernel.dim(2), k_w = kernel.dim(3);
  if (k_channels != channels) {
    throw DimensionError("conv2d: kernel channels (" + std::to_string(k_channels) +
                         ") do not match input channels (" +
                         std::to_string(channels) + ")");
  }
  if (k_h > in_h + 2 * padding || k_w > in_w + 2 * padding) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const int out_h = (in_h + 2 * padding - k_h) / stride + 1;
  const int out_w = (in_w + 2 * padding - k_w) / stride + 1;
  if (out_h < 1 || out_w < 1) throw DimensionError("conv2d: empty output");

  Tensor out = Tensor::zeros({n_batch, n_kernels, out_h, out_w});
  const double* in = input.data();
  const double* w = kernel.data();
  double* o = out.data();

  const long long in_cs = static_cast<long long>(in_h) * in_w;
  const long long out_cs = static_cast<long long>(out_h) * out_w;

  for (int n = 0; n < n_batch; ++n) {
    for (int k = 0; k < n_kernels; ++k) {
      double* out_map = o + (static_cast<long long>(n) * n_kernels + k) * out_cs;
      for (int c = 0; c < channels; ++c) {
        const double* in_map = in + (static_cast<long long>(n) * channels + c) * in_cs;
        const double* w_map = w + (static_cast<long long>(k) * channels + c) * k_h * k_w;
        for (int ky = 0; ky < k_h; ++ky) {
          const auto ry = detail::valid_out_range(ky, padding, stride, in_h, out_h);
          for (int kx = 0; kx < k_w; ++kx) {
            const double wv = w_map[ky * k_w + kx];
            if (wv == 0.0) continue;
            const auto rx = detail::valid_out_range(kx, padding, stride, in_w, out_w);
            const int base = kx - padding;
            for (int oy = ry.lo; oy < ry.hi; ++oy) {
              const int iy = oy * stride + ky - padding;
              const double* in_row = in_map + static_cast<long long>(iy) * in_w;
              double* out_row = out_map + static_cast<long long>(oy) * out_w;
              if (stride == 1) {
                // Contiguous saxpy; the hot path for every conv in this
                // project, and the one the vectorizer can handle.
                const double* in_base = in_row + base;
                for (int ox = rx.lo; ox < rx.hi; ++ox) {
                  out_row[ox] += wv * in_base[ox];
                }
              } else {
                for (int ox = rx.lo; ox < rx.hi; ++ox) {
                  out_row[ox] += wv * in_row[ox * stride + base];
                }
              }
            }
          }
        }
      }
    }
  }

  if (input.requires_grad() || kernel.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      if (input.requires_grad()) {
        double* ig = input.grad_data();
        for (int n = 0; n < n_batch; ++n) {
          for (int k = 0; k < n_kernels; ++k) {
            const double* og_map = og + (static_cast<long long>(n) * n_kernels + k) * out_cs;
            for (int c = 0; c < channels; ++c) {
              double* ig_map = ig + (static_cast<long long>(n) * channels + c) * in_cs;
              const double* w_map = w + (static_cast<long long>(k) * channels + c) * k_h * k_w;
              for (int ky = 0; ky < k_h; ++ky) {
                const auto ry = detail::valid_out_range(ky, padding, stride, in_h, out_h);
                for (int kx = 0; kx < k_w; ++kx) {
                  const double wv = w_map[ky * k_w + kx];
                  if (wv == 0.0) continue;
                  const auto rx = detail::valid_out_range(kx, padding, stride, in_w, out_w);
                  const int base = kx - padding;
                  for (int oy = ry.lo; oy < ry.hi; ++oy) {
                    const int iy = oy * stride + ky - padding;
                    double* ig_row = ig_map + static_cast<long long>(iy) * in_w;
                    const double* og_row = og_map + static_cast<long long>(oy) * out_w;
                    if (stride == 1) {
                      double* ig_base = ig_row + base;
                      for (int ox = rx.lo; ox < rx.hi; ++ox) {
                        ig_base[ox] += wv * og_row[ox];
                      }
                    } else {
                      for (int ox = rx.lo; ox < rx.hi; ++ox) {
                        ig_row[ox * stride + base] += wv * og_row[ox];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (kernel.requires_grad()) {
        double* wg = kernel.grad_data();
        for (int n = 0; n < n_batch; ++n) {
          for (int k = 0; k < n_kernels; ++k) {
            const double* og_map = og + (static_cast<long long>(n) * n_kernels + k) * out_cs;
            for (int c = 0; c < channels; ++c) {
              const double* in_map = in + (static_cast<long long>(n) * channels + c) * in_cs;
              double* wg_map = wg + (static_cast<long long>(k) * channels + c) * k_h * k_w;
              for (int ky = 0; ky < k_h; ++ky) {
                const auto ry = detail::valid_out_range(ky, padding, stride, in_h, out_h);
                for (int kx = 0; kx < k_w; ++kx) {
                  const auto rx = detail::valid_out_range(kx, padding, stride, in_w, out_w);
                  const int base = kx - padding;
                  double acc = 0.0;
                  for (int oy = ry.lo; oy < ry.hi; ++oy) {
                    const int iy = oy * stride + ky - padding;
                    const double* in_row = in_map + static_cast<long long>(iy) * in_w;
                    const double* og_row = og_map + static_cast<long long>(oy) * out_w;
                    if (stride == 1) {
                      // Four independent lanes so the dot product vectorizes
                      // without reassociating the full sum.
                      const double* in_base = in_row + base;
                      double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                      int ox = rx.lo;
                      for (; ox + 3 < rx.hi; ox += 4) {
                        a0 += in_base[ox] * og_row[ox];
                        a1 += in_base[ox + 1] * og_row[ox + 1];
                        a2 += in_base[ox + 2] * og_row[ox + 2];
                        a3 += in_base[ox + 3] * og_row[ox + 3];
                      }
                      acc += (a0 + a1) + (a2 + a3);
                      for (; ox < rx.hi; ++ox) acc += in_base[ox] * og_row[ox];
                    } else {
                      for (int ox = rx.lo; ox < rx.hi; ++ox) {
                        acc += in_row[ox * stride + base] * og_row[ox];
                      }
                    }
                  }
                  wg_map[ky * k_w + kx] += acc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bias, linear
// ---------------------------------------------------------------------------

/// Adds b[C] across the channel axis of [N,C,H,W], or b[F] across rows of
/// [N,F].
inline Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& b) {
  if (b.ndim() != 1) throw DimensionError("bias_add: bias must be 1-D");
  const int n_bias = b.dim(0);
  long long repeat, plane;
  if (x.ndim() == 4) {
    if (x.dim(1) != n_bias) throw DimensionError("bias_add: channel mismatch");
    repeat = x.dim(0);
    plane = static_cast<long long>(x.dim(2)) * x.dim(3);
  } else if (x.ndim() == 2) {
    if (x.dim(1) != n_bias) throw DimensionError("bias_add: feature mismatch");
    repeat = x.dim(0);
    plane = 1;
  } else {
    throw DimensionError("bias_add: expects [N,C,H,W] or [N,F]");
  }

  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data();
  const double* bd = b.data();
  double* od = out.data();
  for (long long r = 0; r < repeat; ++r) {
    for (int c = 0; c < n_bias; ++c) {
      const long long off = (r * n_bias + c) * plane;
      const double bv = bd[c];
      for (long long i = 0; i < plane; ++i) od[off + i] = xd[off + i] + bv;
    }
  }

  if (x.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      if (x.requires_grad()) {
        double* xg = x.grad_data();
        const long long n = x.numel();
        for (long long i = 0; i < n; ++i) xg[i] += og[i];
      }
      if (b.requires_grad()) {
        double* bg = b.grad_data();
        for (long long r = 0; r < repeat; ++r) {
          for (int c = 0; c < n_bias; ++c) {
            const long long off = (r * n_bias + c) * plane;
            double acc = 0.0;
            for (long long i = 0; i < plane; ++i) acc += og[off + i];
            bg[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

/// Fully connected layer: x[N,F] with weights w[O,F] -> [N,O].
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw DimensionError("linear: expects x [N,F], w [O,F]");
  }
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor out = Tensor::zeros({n, o});
  const double* xd = x.data();
  const double* wd = w.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < o; ++j) {
      double acc = 0.0;
      const double* xr = xd + static_cast<long long>(i) * f;
      const double* wr = wd + static_cast<long long>(j) * f;
      for (int k = 0; k < f; ++k) acc += xr[k] * wr[k];
      od[static_cast<long long>(i) * o + j] = acc;
    }
  }

  if (x.requires_grad() || w.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      if (x.requires_grad()) {
        double* xg = x.grad_data();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < o; ++j) {
            const double g = og[static_cast<long long>(i) * o + j];
            const double* wr = wd + static_cast<long long>(j) * f;
            double* xr = xg + static_cast<long long>(i) * f;
            for (int k = 0; k < f; ++k) xr[k] += g * wr[k];
          }
        }
      }
      if (w.requires_grad()) {
        double* wg = w.grad_data();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < o; ++j) {
            const double g = og[static_cast<long long>(i) * o + j];
            const double* xr = xd + static_cast<long long>(i) * f;
            double* wr = wg + static_cast<long long>(j) * f;
            for (int k = 0; k < f; ++k) wr[k] += g * xr[k];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling, resampling, channel plumbing
// ---------------------------------------------------------------------------

inline Tensor avg_pool2(Tape& tape, const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("avg_pool2: expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("avg_pool2: spatial dims must be even");
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  const double* xd = x.data();
  double* od = out.data();
  const long long maps = static_cast<long long>(n) * c;
  for (long long m = 0; m < maps; ++m) {
    const double* in_map = xd + m * h * w;
    double* out_map = od + m * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xph = 0; xph < ow; ++xph) {
        const double* r0 = in_map + static_cast<long long>(2 * y) * w + 2 * xph;
        const double* r1 = r0 + w;
        out_map[static_cast<long long>(y) * ow + xph] =
            0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (long long m = 0; m < maps; ++m) {
        const double* og_map = og + m * oh * ow;
        double* xg_map = xg + m * h * w;
        for (int y = 0; y < oh; ++y) {
          for (int xph = 0; xph < ow; ++xph) {
            const double g = 0.25 * og_map[static_cast<long long>(y) * ow + xph];
            double* r0 = xg_map + static_cast<long long>(2 * y) * w + 2 * xph;
            double* r1 = r0 + w;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
        }
      }
    });
  }
  return out;
}

inline Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("global_avg_pool: expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const long long plane = static_cast<long long>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  const double* xd = x.data();
  double* od = out.data();
  for (long long m = 0; m < static_cast<long long>(n) * c; ++m) {
    double acc = 0.0;
    const double* p = xd + m * plane;
    for (long long i = 0; i < plane; ++i) acc += p[i];
    od[m] = acc / static_cast<double>(plane);
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (long long m = 0; m < static_cast<long long>(n) * c; ++m) {
        const double g = og[m] / static_cast<double>(plane);
        double* p = xg + m * plane;
        for (long long i = 0; i < plane; ++i) p[i] += g;
      }
    });
  }
  return out;
}

/// Each pixel becomes a 2x2 block; the backward pass sums the block.
inline Tensor upsample_nearest2x(Tape& tape, const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("upsample_nearest2x: expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  const double* xd = x.data();
  double* od = out.data();
  const long long maps = static_cast<long long>(n) * c;
  for (long long m = 0; m < maps; ++m) {
    const double* in_map = xd + m * h * w;
    double* out_map = od + m * oh * ow;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const double v = in_map[static_cast<long long>(y) * w + xx];
        double* r0 = out_map + static_cast<long long>(2 * y) * ow + 2 * xx;
        double* r1 = r0 + ow;
        r0[0] = v;
        r0[1] = v;
        r1[0] = v;
        r1[1] = v;
      }
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (long long m = 0; m < maps; ++m) {
        const double* og_map = og + m * oh * ow;
        double* xg_map = xg + m * h * w;
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < w; ++xx) {
            const double* r0 = og_map + static_cast<long long>(2 * y) * ow + 2 * xx;
            const double* r1 = r0 + ow;
            xg_map[static_cast<long long>(y) * w + xx] += r0[0] + r0[1] + r1[0] + r1[1];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: incompatible shapes");
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const long long plane = static_cast<long long>(a.dim(2)) * a.dim(3);
  Tensor out = Tensor::zeros({n, ca + cb, a.dim(2), a.dim(3)});
  double* od = out.data();
  const double* ad = a.data();
  const double* bd = b.data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(od + (static_cast<long long>(i) * (ca + cb)) * plane,
                ad + static_cast<long long>(i) * ca * plane,
                sizeof(double) * ca * plane);
    std::memcpy(od + (static_cast<long long>(i) * (ca + cb) + ca) * plane,
                bd + static_cast<long long>(i) * cb * plane,
                sizeof(double) * cb * plane);
  }
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      for (int i = 0; i < n; ++i) {
        if (a.requires_grad()) {
          double* ag = a.grad_data() + static_cast<long long>(i) * ca * plane;
          const double* src = og + (static_cast<long long>(i) * (ca + cb)) * plane;
          for (long long j = 0; j < ca * plane; ++j) ag[j] += src[j];
        }
        if (b.requires_grad()) {
          double* bg = b.grad_data() + static_cast<long long>(i) * cb * plane;
          const double* src = og + (static_cast<long long>(i) * (ca + cb) + ca) * plane;
          for (long long j = 0; j < cb * plane; ++j) bg[j] += src[j];
        }
      }
    });
  }
  return out;
}

/// Broadcast a single-channel map [N,1,H,W] to [N,C,H,W]; the backward pass
/// sums over the replicated channels.
inline Tensor repeat_channels(Tape& tape, const Tensor& x, int channels) {
  if (x.ndim() != 4 || x.dim(1) != 1) {
    throw DimensionError("repeat_channels: expects [N,1,H,W]");
  }
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  Tensor out = Tensor::zeros({n, channels, h, w});
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      std::memcpy(od + (static_cast<long long>(i) * channels + c) * plane,
                  xd + static_cast<long long>(i) * plane, sizeof(double) * plane);
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double* og = out.grad_data();
      double* xg = x.grad_data();
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < channels; ++c) {
          const double* src = og + (static_cast<long long>(i) * channels + c) * plane;
          double* dst = xg + static_cast<long long>(i) * plane;
          for (long long j = 0; j < plane; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of logits [N,C] against integer labels, computed with
/// the log-sum-exp trick. Used for classifier training.
inline Tensor cross_entropy_logits(Tape& tape, const Tensor& logits,
                                   const std::vector<int>& labels) {
  detail::check_finite("cross_entropy", logits);
  if (logits.ndim() != 2) throw DimensionError("cross_entropy: expects [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("cross_entropy: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw ContractError("cross_entropy: label out of range");
  }
  const double* zd = logits.data();
  double total = 0.0;
  std::vector<double> probs(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    const double* z = zd + static_cast<long long>(i) * c;
    double mx = z[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      probs[static_cast<std::size_t>(i) * c + j] = std::exp(z[j] - mx);
      denom += probs[static_cast<std::size_t>(i) * c + j];
    }
    for (int j = 0; j < c; ++j) probs[static_cast<std::size_t>(i) * c + j] /= denom;
    total += (mx + std::log(denom)) - z[labels[static_cast<std::size_t>(i)]];
  }
  Tensor out = Tensor::scalar(total / n);
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double g = out.grad_data()[0] / n;
      double* zg = logits.grad_data();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
          double d = probs[static_cast<std::size_t>(i) * c + j];
          if (j == labels[static_cast<std::size_t>(i)]) d -= 1.0;
          zg[static_cast<long long>(i) * c + j] += g * d;
        }
      }
    });
  }
  return out;
}

/// Anisotropic total variation of a single-channel map, normalized by the
/// number of neighbor pairs: (H-1)*W vertical + H*(W-1) horizontal.
inline Tensor tv_aniso_mean(Tape& tape, const Tensor& m) {
  int h, w;
  if (m.ndim() == 2) {
    h = m.dim(0);
    w = m.dim(1);
  } else if (m.ndim() == 4 && m.dim(0) == 1 && m.dim(1) == 1) {
    h = m.dim(2);
    w = m.dim(3);
  } else {
    throw DimensionError("tv_aniso_mean: expects [H,W] or [1,1,H,W]");
  }
  detail::check_finite("tv", m);
  const long long pairs = static_cast<long long>(h - 1) * w +
                          static_cast<long long>(h) * (w - 1);
  if (pairs == 0) return Tensor::scalar(0.0);

  const double* md = m.data();
  double acc = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = md[static_cast<long long>(y) * w + x];
      if (y + 1 < h) acc += std::fabs(v - md[static_cast<long long>(y + 1) * w + x]);
      if (x + 1 < w) acc += std::fabs(v - md[static_cast<long long>(y) * w + x + 1]);
    }
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(pairs));
  if (m.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [=]() {
      const double g = out.grad_data()[0] / static_cast<double>(pairs);
      double* mg = m.grad_data();
      auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const long long i = static_cast<long long>(y) * w + x;
          if (y + 1 < h) {
            const double s = sgn(md[i] - md[i + w]);
            mg[i] += g * s;
            mg[i + w] -= g * s;
          }
          if (x + 1 < w) {
            const double s = sgn(md[i] - md[i + 1]);
            mg[i] += g * s;
            mg[i + 1] -= g * s;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace medcam
