#pragma once

#include <string>
#include <vector>

#include "medcam/errors.hpp"
#include "medcam/rng.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

enum class BackgroundKind { uniform_noise, gaussian_noise, corpus_shuffle };

inline const char* to_string(BackgroundKind k) {
  switch (k) {
    case BackgroundKind::uniform_noise: return "uniform";
    case BackgroundKind::gaussian_noise: return "gaussian";
    case BackgroundKind::corpus_shuffle: return "corpus";
  }
  return "?";
}

inline BackgroundKind background_kind_from_string(const std::string& s) {
  if (s == "uniform") return BackgroundKind::uniform_noise;
  if (s == "gaussian") return BackgroundKind::gaussian_noise;
  if (s == "corpus") return BackgroundKind::corpus_shuffle;
  throw ParameterError("unknown background kind '" + s + "'");
}

/// Draws a replacement background for the non-evidence region.
///   uniform_noise  : i.i.d. U[0,1)
///   gaussian_noise : clamp(0.5 + 0.25 * N(0,1), 0, 1)
///   corpus_shuffle : a different pool image, chosen uniformly
/// For corpus_shuffle, `exclude_index` marks the pool entry holding the image
/// being explained; it is never returned.
inline Tensor sample_background(const std::vector<int>& shape, BackgroundKind kind,
                                Rng& rng, const std::vector<Tensor>* pool = nullptr,
                                int exclude_index = -1) {
  if (kind == BackgroundKind::corpus_shuffle) {
    if (pool == nullptr || pool->empty() ||
        (pool->size() == 1 && exclude_index == 0)) {
      throw DataError("sample_background: corpus_shuffle needs a non-empty pool");
    }
    const int usable = static_cast<int>(pool->size()) -
                       (exclude_index >= 0 &&
                                exclude_index < static_cast<int>(pool->size())
                            ? 1
                            : 0);
    int pick = rng.uniform_int(usable);
    if (exclude_index >= 0 && pick >= exclude_index) ++pick;
    const Tensor& chosen = (*pool)[static_cast<std::size_t>(pick)];
    if (chosen.shape() != shape) {
      throw DimensionError("sample_background: pool image shape mismatch");
    }
    return chosen.detach();
  }

  Tensor out = Tensor::zeros(shape);
  double* d = out.data();
  const long long n = out.numel();
  if (kind == BackgroundKind::uniform_noise) {
    for (long long i = 0; i < n; ++i) d[i] = rng.uniform();
  } else {
    for (long long i = 0; i < n; ++i) {
      double v = 0.5 + 0.25 * rng.normal();
      d[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
  }
  return out;
}

}  // namespace medcam
