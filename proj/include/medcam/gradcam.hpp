#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "medcam/classifier.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

/// Gradient-weighted class activation map, upsampled to input resolution and
/// min-max normalized to [0,1]. all_zero marks the degenerate case where the
/// raw map vanished (the target logit does not depend on the tapped layer).
struct Heatmap {
  std::vector<double> values;  // row-major, [0,1]
  int width = 0;
  int height = 0;
  std::string source_layer;
  bool all_zero = false;
};

/// Standard Grad-CAM at a named tap: channel weights are the spatial means
/// of d logit[target] / d activation, the map is ReLU of the weighted channel
/// sum, then nearest-neighbor upsampling and min-max normalization.
inline Heatmap gradcam(const ClassifierModel& model, const Tensor& image,
                       int target_class, const std::string& layer) {
  if (target_class < 0 || target_class >= model.num_classes()) {
    throw ContractError("gradcam: target class out of range");
  }
  const auto taps = model.tap_names();
  if (std::find(taps.begin(), taps.end(), layer) == taps.end()) {
    throw ContractError("gradcam: unknown tap '" + layer + "'");
  }

  // The input is marked as requiring gradients so the backward sweep reaches
  // the tapped intermediate activation.
  Tensor x = image.detach();
  x.set_requires_grad(true);
  Tape tape;
  const auto fw = model.forward_with_taps(tape, x);
  const Tensor logit = select(tape, fw.logits, target_class);
  backward(logit, tape);

  const Tensor& act = fw.taps.at(layer);
  const int channels = act.dim(1), h = act.dim(2), w = act.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  const double* a = act.data();
  const std::vector<double> grad = act.grad_or_zeros();

  std::vector<double> cam(static_cast<std::size_t>(plane), 0.0);
  for (int c = 0; c < channels; ++c) {
    double weight = 0.0;
    for (long long i = 0; i < plane; ++i) weight += grad[static_cast<std::size_t>(c * plane + i)];
    weight /= static_cast<double>(plane);
    for (long long i = 0; i < plane; ++i) {
      cam[static_cast<std::size_t>(i)] += weight * a[c * plane + i];
    }
  }
  for (double& v : cam) v = v > 0.0 ? v : 0.0;

  // Upsample to input resolution.
  const int size = model.image_size();
  if (size % h != 0 || size % w != 0) {
    throw ContractError("gradcam: tap resolution does not divide input size");
  }
  const int fy = size / h, fx = size / w;
  Heatmap hm;
  hm.width = size;
  hm.height = size;
  hm.source_layer = layer;
  hm.values.assign(static_cast<std::size_t>(size) * size, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int xx = 0; xx < size; ++xx) {
      hm.values[static_cast<std::size_t>(y) * size + xx] =
          cam[static_cast<std::size_t>(y / fy) * w + xx / fx];
    }
  }

  double mn = hm.values[0], mx = hm.values[0];
  for (double v : hm.values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mx == 0.0) {
    hm.all_zero = true;
    return hm;
  }
  if (mx - mn < 1e-300) {
    // Constant positive map; normalization pins it at 1.
    std::fill(hm.values.begin(), hm.values.end(), 1.0);
    return hm;
  }
  for (double& v : hm.values) v = (v - mn) / (mx - mn);
  return hm;
}

/// Marks the top-k heatmap pixels; ties break toward the smaller row-major
/// index, so the output is deterministic.
inline std::vector<std::uint8_t> threshold_topk(const Heatmap& h, long long k) {
  const long long n = static_cast<long long>(h.values.size());
  if (k < 0 || k > n) throw ContractError("threshold_topk: k out of range");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return h.values[static_cast<std::size_t>(a)] > h.values[static_cast<std::size_t>(b)];
  });
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (long long i = 0; i < k; ++i) mask[static_cast<std::size_t>(idx[i])] = 1;
  return mask;
}

/// Marks the top round(keep_fraction * H * W) pixels.
inline std::vector<std::uint8_t> threshold_heatmap(const Heatmap& h,
                                                   double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ParameterError("threshold_heatmap: keep_fraction must lie in (0,1]");
  }
  const long long n = static_cast<long long>(h.values.size());
  const long long k = std::llround(keep_fraction * static_cast<double>(n));
  return threshold_topk(h, std::min(k, n));
}

}  // namespace medcam
