#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "medcam/classifier.hpp"
#include "medcam/explainer.hpp"
#include "medcam/gradcam.hpp"
#include "medcam/metrics.hpp"
#include "medcam/synth.hpp"

namespace medcam {

struct EvaluateOptions {
  std::vector<std::string> methods = {"medcam", "gradcam", "random"};
  int n_images = 100;
  std::uint64_t seed = 42;
  int workers = 1;
  ExplainerConfig explainer;
  std::string gradcam_layer = "block3";
  // Area budget for gradcam/random when medcam is not among the methods.
  double fallback_keep_fraction = 0.25;
};

struct EvaluateResult {
  std::vector<EvidenceReport> reports;  // sorted by (image_id, method)
  std::vector<SummaryRow> summary;
};

namespace evaluate_detail {

/// k distinct pixels, uniformly without replacement (partial Fisher-Yates).
inline std::vector<std::uint8_t> random_mask(long long n_pixels, long long k, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n_pixels));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_pixels), 0);
  for (long long i = 0; i < k; ++i) {
    const long long j = i + rng.uniform_int(static_cast<int>(n_pixels - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  }
  return mask;
}

inline double binary_mask_tv(const std::vector<std::uint8_t>& mask, int h, int w) {
  Tape tape;
  std::vector<double> vals(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) vals[i] = mask[i] ? 1.0 : 0.0;
  return tv_aniso_mean(tape, Tensor::from({h, w}, std::move(vals))).item();
}

/// Round-robin over classes, preserving within-class order, until n picked.
inline std::vector<const SynthImage*> select_images(
    const std::vector<SynthImage>& images, int n) {
  std::vector<std::vector<const SynthImage*>> per_class;
  for (const auto& img : images) {
    if (img.label >= static_cast<int>(per_class.size())) {
      per_class.resize(static_cast<std::size_t>(img.label) + 1);
    }
    per_class[static_cast<std::size_t>(img.label)].push_back(&img);
  }
  std::vector<const SynthImage*> out;
  std::size_t offset = 0;
  while (static_cast<int>(out.size()) < n) {
    bool any = false;
    for (auto& group : per_class) {
      if (offset < group.size() && static_cast<int>(out.size()) < n) {
        out.push_back(group[offset]);
        any = true;
      }
    }
    if (!any) break;  // ran out of images
    ++offset;
  }
  return out;
}

}  // namespace evaluate_detail

/// Measures an externally supplied binary mask the same way explain()
/// measures its own: decision preservation, area, smoothness, robustness
/// against fresh backgrounds, and IoU against the (possibly empty) truth.
inline EvidenceReport measure_mask(const ClassifierModel& model,
                                   const std::string& image_id, const Tensor& batch,
                                   const std::vector<std::uint8_t>& truth,
                                   const std::vector<std::uint8_t>& mask,
                                   const std::string& method, int y, double conf_x,
                                   BackgroundKind bg, int rob_trials,
                                   std::uint64_t seed) {
  EvidenceReport rep;
  rep.image_id = image_id;
  rep.method = method;
  rep.y = y;
  rep.conf_x = conf_x;
  const auto [preserved, conf_e] = decision_preservation(model, batch, mask, y);
  rep.decision_preserved = preserved;
  rep.conf_e = conf_e;
  long long on = 0;
  for (auto v : mask) on += v;
  rep.area_fraction = static_cast<double>(on) / static_cast<double>(mask.size());
  rep.bin_fraction = 1.0;  // the mask is already binary
  rep.tv_norm = evaluate_detail::binary_mask_tv(mask, batch.dim(2), batch.dim(3));
  rep.rob_pass_rate = robustness_rate(model, batch, mask, y, rob_trials, bg,
                                      Rng::mix(seed, 0x726f6232ULL));
  rep.truth_iou = truth_iou(mask, truth);
  rep.seed = seed;
  return rep;
}

/// Runs every requested method over up to n_images held-out images and
/// aggregates per-method statistics. gradcam and random masks are matched to
/// the per-image medcam area budget so the comparison is area-fair. Images
/// are processed independently (optionally across threads); per-image seeds
/// derive from (seed, selection index), so the result does not depend on the
/// worker count.
inline EvaluateResult evaluate(const ClassifierModel& model,
                               const std::vector<SynthImage>& images,
                               const EvaluateOptions& opt) {
  if (opt.n_images < 1) throw ParameterError("evaluate: n must be >= 1");
  if (opt.workers < 1) throw ParameterError("evaluate: workers must be >= 1");
  for (const auto& m : opt.methods) {
    if (m != "medcam" && m != "gradcam" && m != "random") {
      throw ParameterError("evaluate: unknown method '" + m + "'");
    }
  }
  if (opt.methods.empty()) throw ParameterError("evaluate: no methods given");
  const auto selected = evaluate_detail::select_images(images, opt.n_images);
  if (selected.empty()) throw DataError("evaluate: no images to evaluate");

  const bool want_medcam =
      std::find(opt.methods.begin(), opt.methods.end(), "medcam") != opt.methods.end();
  const bool want_gradcam =
      std::find(opt.methods.begin(), opt.methods.end(), "gradcam") != opt.methods.end();
  const bool want_random =
      std::find(opt.methods.begin(), opt.methods.end(), "random") != opt.methods.end();

  // Background pool, only materialized for corpus_shuffle runs.
  std::vector<Tensor> pool;
  if (opt.explainer.background == BackgroundKind::corpus_shuffle) {
    pool.reserve(selected.size());
    for (const auto* img : selected) pool.push_back(img->batch());
  }
  const std::vector<Tensor>* pool_ptr = pool.empty() ? nullptr : &pool;

  std::vector<std::vector<EvidenceReport>> slots(selected.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= selected.size()) return;
      try {
        const SynthImage& img = *selected[i];
        const Tensor batch = img.batch();
        const std::uint64_t img_seed = Rng::mix(opt.seed, static_cast<std::uint64_t>(i));
        const long long n_pixels = static_cast<long long>(img.size()) * img.size();

        std::vector<EvidenceReport>& out = slots[i];
        long long area_budget =
            std::llround(opt.fallback_keep_fraction * static_cast<double>(n_pixels));
        int y;
        double conf_x;
        {
          const Tensor logits = model.logits(batch);
          y = argmax_index(logits);
          conf_x = softmax_probs(logits)[static_cast<std::size_t>(y)];
        }

        if (want_medcam) {
          ExplainerConfig cfg = opt.explainer;
          cfg.seed = img_seed;
          ExplainResult res = explain(batch, model, cfg, img.id, pool_ptr,
                                      pool_ptr ? static_cast<int>(i) : -1);
          res.report.truth_iou = truth_iou(res.mask.binarized, img.truth_mask);
          long long on = 0;
          for (auto v : res.mask.binarized) on += v;
          if (on > 0) area_budget = on;
          out.push_back(res.report);
        }
        if (want_gradcam) {
          const auto t0 = std::chrono::steady_clock::now();
          const Heatmap hm = gradcam(model, batch, y, opt.gradcam_layer);
          const auto mask = threshold_topk(hm, area_budget);
          EvidenceReport rep = measure_mask(
              model, img.id, batch, img.truth_mask, mask, "gradcam", y, conf_x,
              opt.explainer.background, opt.explainer.rob_eval_trials, img_seed);
          rep.wall_seconds =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
          out.push_back(std::move(rep));
        }
        if (want_random) {
          const auto t0 = std::chrono::steady_clock::now();
          Rng rng(Rng::mix(img_seed, 0x726e6421ULL));
          const auto mask = evaluate_detail::random_mask(n_pixels, area_budget, rng);
          EvidenceReport rep = measure_mask(
              model, img.id, batch, img.truth_mask, mask, "random", y, conf_x,
              opt.explainer.background, opt.explainer.rob_eval_trials, img_seed);
          rep.wall_seconds =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
          out.push_back(std::move(rep));
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  if (opt.workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    const int n_threads = std::min<int>(opt.workers, static_cast<int>(selected.size()));
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  EvaluateResult result;
  for (auto& slot : slots) {
    for (auto& rep : slot) result.reports.push_back(std::move(rep));
  }
  std::sort(result.reports.begin(), result.reports.end(),
            [](const EvidenceReport& a, const EvidenceReport& b) {
              return a.image_id != b.image_id ? a.image_id < b.image_id
                                              : a.method < b.method;
            });
  result.summary = aggregate(result.reports);
  return result;
}

}  // namespace medcam
