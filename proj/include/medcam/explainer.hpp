#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "medcam/background.hpp"
#include "medcam/classifier.hpp"
#include "medcam/masknet.hpp"
#include "medcam/metrics.hpp"
#include "medcam/nn_ops.hpp"
#include "medcam/optim.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

enum class DistanceKind { mse, cosine };

inline const char* to_string(DistanceKind k) {
  return k == DistanceKind::mse ? "mse" : "cosine";
}

inline DistanceKind distance_kind_from_string(const std::string& s) {
  if (s == "mse") return DistanceKind::mse;
  if (s == "cosine") return DistanceKind::cosine;
  throw ParameterError("unknown distance kind '" + s + "'");
}

/// All knobs of one per-image explanation run. Presets encode the published
/// group ratios (activation-matching : minimality : robustness); within each
/// group the split is act:ce:kl = 1:1:1 and area:bin:tv = 1:0.5:0.5.
struct ExplainerConfig {
  double lambda_act = 10.0 / 3;
  double lambda_ce = 10.0 / 3;
  double lambda_kl = 10.0 / 3;
  double lambda_area = 50.0;
  double lambda_bin = 25.0;
  double lambda_tv = 25.0;
  double lambda_rob = 10.0;
  std::map<std::string, double> alpha_per_layer;  // empty -> uniform 1.0
  DistanceKind distance = DistanceKind::mse;
  int steps = 300;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  double binarize_threshold = 0.5;
  int rob_samples_per_step = 1;
  BackgroundKind background = BackgroundKind::uniform_noise;
  int rob_eval_trials = 20;  // fresh backgrounds scored after optimization

  void validate() const {
    if (steps < 1) throw ParameterError("explainer: steps must be >= 1");
    if (!(lr > 0.0)) throw ParameterError("explainer: lr must be positive");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
      throw ParameterError("explainer: binarize_threshold must lie in (0,1)");
    }
    const double lambdas[] = {lambda_act, lambda_ce, lambda_kl, lambda_area,
                              lambda_bin, lambda_tv, lambda_rob};
    for (double l : lambdas) {
      if (l < 0.0 || !std::isfinite(l)) {
        throw ParameterError("explainer: lambda coefficients must be finite and >= 0");
      }
    }
    if (lambda_act == 0.0 && lambda_ce == 0.0 && lambda_kl == 0.0) {
      throw ParameterError(
          "explainer: at least one of lambda_act/lambda_ce/lambda_kl must be positive");
    }
    if (rob_samples_per_step < 0) {
      throw ParameterError("explainer: rob_samples_per_step must be >= 0");
    }
    if (rob_eval_trials < 1) {
      throw ParameterError("explainer: rob_eval_trials must be >= 1");
    }
    for (const auto& [k, v] : alpha_per_layer) {
      if (v < 0.0) throw ParameterError("explainer: alpha for '" + k + "' must be >= 0");
    }
  }
};

inline ExplainerConfig make_lambda_preset(double am_group, double min_group,
                                          double rob_group) {
  ExplainerConfig cfg;
  cfg.lambda_act = cfg.lambda_ce = cfg.lambda_kl = am_group / 3.0;
  cfg.lambda_area = min_group / 2.0;
  cfg.lambda_bin = min_group / 4.0;
  cfg.lambda_tv = min_group / 4.0;
  cfg.lambda_rob = rob_group;
  return cfg;
}

/// 10:100:10 group ratio.
inline ExplainerConfig preset_bach() { return make_lambda_preset(10, 100, 10); }
/// 10:150:20 group ratio.
inline ExplainerConfig preset_ham() { return make_lambda_preset(10, 150, 20); }
inline ExplainerConfig preset_default() { return preset_bach(); }

inline ExplainerConfig preset_by_name(const std::string& name) {
  if (name == "bach") return preset_bach();
  if (name == "ham") return preset_ham();
  if (name == "default") return preset_default();
  throw ParameterError("unknown preset '" + name + "'");
}

/// Soft mask plus its optional thresholded form.
struct Mask {
  std::vector<double> values;  // row-major, in [0,1]
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> binarized;
  double threshold = 0.5;

  void binarize(double thr) {
    threshold = thr;
    binarized.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      binarized[i] = values[i] >= thr ? 1 : 0;
    }
  }

  double area_fraction() const {
    if (binarized.empty()) throw ContractError("Mask: binarize() first");
    long long c = 0;
    for (auto v : binarized) c += v;
    return static_cast<double>(c) / static_cast<double>(binarized.size());
  }

  /// Fraction of pixels already close to 0 or 1 (min(m, 1-m) < 0.1).
  double crisp_fraction() const {
    long long c = 0;
    for (double v : values) {
      if (std::min(v, 1.0 - v) < 0.1) ++c;
    }
    return static_cast<double>(c) / static_cast<double>(values.size());
  }
};

/// Raw (unweighted) loss values of one optimization step; `total` is the
/// lambda-weighted sum actually optimized.
struct LossBreakdown {
  double act = 0.0, kl = 0.0, ce = 0.0;
  double area = 0.0, bin = 0.0, tv = 0.0, rob = 0.0;
  double total = 0.0;
  int step = 0;

  double weighted_sum(const ExplainerConfig& cfg) const {
    return cfg.lambda_act * act + cfg.lambda_ce * ce + cfg.lambda_kl * kl +
           cfg.lambda_area * area + cfg.lambda_bin * bin + cfg.lambda_tv * tv +
           cfg.lambda_rob * rob;
  }
};

/// The optimization left the finite domain. Carries the failing step index
/// and the last fully finite loss breakdown.
struct DivergenceError : Error {
  DivergenceError(int step_idx, LossBreakdown last, const std::string& what)
      : Error("explain: diverged at step " + std::to_string(step_idx) + ": " + what),
        step(step_idx),
        last_finite(last) {}
  int step;
  LossBreakdown last_finite;
};

// ---------------------------------------------------------------------------
// Loss operations
// ---------------------------------------------------------------------------

/// e = m (.) x, broadcasting the single-channel mask across image channels.
inline Tensor apply_mask(Tape& tape, const Tensor& image, const Tensor& mask) {
  if (image.ndim() != 4 || mask.ndim() != 4 || mask.dim(1) != 1 ||
      image.dim(0) != mask.dim(0) || image.dim(2) != mask.dim(2) ||
      image.dim(3) != mask.dim(3)) {
    throw DimensionError("apply_mask: expects image [1,C,H,W], mask [1,1,H,W]");
  }
  return mul(tape, repeat_channels(tape, mask, image.dim(1)), image);
}

namespace explain_detail {

inline Tensor distance(Tape& tape, const Tensor& reference, const Tensor& candidate,
                       DistanceKind kind) {
  if (kind == DistanceKind::mse) {
    return mean(tape, square(tape, sub(tape, candidate, reference)));
  }
  // 1 - <a,b> / (|a| |b| + 1e-12), on flattened activations.
  Tensor dot = sum(tape, mul(tape, candidate, reference));
  Tensor na = sqrt_op(tape, sum(tape, square(tape, candidate)));
  Tensor nb = sqrt_op(tape, sum(tape, square(tape, reference)));
  Tensor denom = add_const(tape, mul(tape, na, nb), 1e-12);
  Tensor cos_sim = div(tape, dot, denom);
  return add_const(tape, scale(tape, cos_sim, -1.0), 1.0);
}

}  // namespace explain_detail

/// Sum over taps of alpha_l * d(phi_l(x), phi_l(e)). The reference
/// activations must be detached; the key sets must match exactly.
inline Tensor loss_act(Tape& tape, const ActivationSet& acts_x,
                       const ActivationSet& acts_e,
                       const std::map<std::string, double>& alpha,
                       DistanceKind kind) {
  if (acts_x.entries.size() != acts_e.entries.size()) {
    throw ContractError("loss_act: activation key sets differ");
  }
  if (!alpha.empty()) {
    for (const auto& [name, _] : acts_x.entries) {
      if (alpha.find(name) == alpha.end()) {
        throw ContractError("loss_act: missing alpha for tap '" + name + "'");
      }
    }
  }
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < acts_x.entries.size(); ++i) {
    const auto& [name_x, phi_x] = acts_x.entries[i];
    const auto& [name_e, phi_e] = acts_e.entries[i];
    if (name_x != name_e) throw ContractError("loss_act: activation key sets differ");
    if (phi_x.shape() != phi_e.shape()) {
      throw ContractError("loss_act: activation shape mismatch for '" + name_x + "'");
    }
    const double a = alpha.empty() ? 1.0 : alpha.at(name_x);
    if (a == 0.0) continue;
    total = add(tape, total,
                scale(tape, explain_detail::distance(tape, phi_x, phi_e, kind), a));
  }
  return total;
}

/// D_KL(softmax(logits_x) || softmax(logits_e)) with the x side held as a
/// constant target. Probabilities are offset by the 1e-12 log floor before
/// the (clamped) log, which keeps the loss finite like a bare clamp but
/// leaves a recovery gradient when the mask has driven p(y) to zero.
inline Tensor loss_kl(Tape& tape, const Tensor& logits_x, const Tensor& logits_e) {
  if (logits_x.numel() != logits_e.numel()) {
    throw DimensionError("loss_kl: logit length mismatch");
  }
  detail::check_finite("loss_kl", logits_x);
  const auto px = softmax_probs(logits_x);
  std::vector<double> log_px(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    log_px[i] = std::log(px[i] + kLogFloor);
  }
  Tensor px_const = Tensor::from(logits_e.shape(), std::vector<double>(px));
  Tensor log_px_const = Tensor::from(logits_e.shape(), std::move(log_px));
  Tensor log_pe =
      log_clamped(tape, add_const(tape, softmax(tape, logits_e), kLogFloor));
  return sum(tape, mul(tape, px_const, sub(tape, log_px_const, log_pe)));
}

/// -log(softmax(logits_e)[y] + floor), clamped log.
inline Tensor loss_ce(Tape& tape, const Tensor& logits_e, int y) {
  if (y < 0 || y >= logits_e.numel()) throw ContractError("loss_ce: label out of range");
  Tensor p = softmax(tape, logits_e);
  return scale(tape, log_clamped(tape, add_const(tape, select(tape, p, y), kLogFloor)),
               -1.0);
}

/// Mean mask activation (L1 normalized by pixel count; mask values are
/// non-negative).
inline Tensor loss_area(Tape& tape, const Tensor& mask) { return mean(tape, mask); }

/// |m - m^2| averaged over pixels; zero exactly when the mask is binary.
inline Tensor loss_bin(Tape& tape, const Tensor& mask) {
  Tensor diff = sub(tape, mask, square(tape, mask));
  return scale(tape, abs_sum(tape, diff), 1.0 / static_cast<double>(mask.numel()));
}

/// Anisotropic total variation, normalized by the neighbor-pair count.
inline Tensor loss_tv(Tape& tape, const Tensor& mask) {
  return tv_aniso_mean(tape, mask);
}

/// Builds e~ = m (.) x + (1-m) (.) r, forwards it through the frozen model,
/// and returns -log p(y).
inline Tensor loss_rob(Tape& tape, const Tensor& image, const Tensor& mask,
                       const Tensor& background, const ClassifierModel& model, int y) {
  if (image.shape() != background.shape()) {
    throw DimensionError("loss_rob: background shape mismatch");
  }
  const Tensor m3 = repeat_channels(tape, mask, image.dim(1));
  const Tensor keep = mul(tape, m3, image);
  const Tensor fill = mul(tape, sub(tape, Tensor::scalar(1.0), m3), background);
  const Tensor composite = add(tape, keep, fill);
  const Tensor logits = model.forward_with_taps(tape, composite).logits;
  return loss_ce(tape, logits, y);
}

// ---------------------------------------------------------------------------
// Per-image optimization
// ---------------------------------------------------------------------------

struct ExplainResult {
  Mask mask;
  Tensor masked_image;  // binarized mask applied to the input
  EvidenceReport report;
  std::vector<LossBreakdown> trajectory;
  int y = 0;
  double conf_x = 0.0;
};

/// Optimizes a fresh MaskNet against the composite objective for one image.
///
/// The label target y = argmax f(x) and the reference activations are fixed
/// once up front; every step forwards the soft-masked image, assembles the
/// weighted loss, and updates only MaskNet parameters. The returned mask is
/// binarized at cfg.binarize_threshold and the decision check runs on the
/// binarized masked image.
inline ExplainResult explain(const Tensor& image, const ClassifierModel& model,
                             const ExplainerConfig& cfg,
                             const std::string& image_id = "",
                             const std::vector<Tensor>* pool = nullptr,
                             int exclude_index = -1) {
  cfg.validate();
  if (!model.frozen()) throw ContractError("explain: classifier must be frozen");
  const auto t_start = std::chrono::steady_clock::now();

  // References from the original image; nothing here tracks gradients.
  Tensor x = image.detach();
  ActivationSet acts_x;
  Tensor logits_x;
  {
    Tape tape;
    auto fw = model.forward_with_taps(tape, x);
    logits_x = fw.logits.detach();
    acts_x = fw.taps.detached();
  }
  const int y = argmax_index(logits_x);
  const double conf_x = softmax_probs(logits_x)[static_cast<std::size_t>(y)];

  MaskNet net(cfg.seed, model.in_channels());
  Adam adam(net.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng bg_rng(Rng::mix(cfg.seed, 0x62616f6bULL));

  std::vector<LossBreakdown> trajectory;
  trajectory.reserve(static_cast<std::size_t>(cfg.steps));
  LossBreakdown last_finite;

  for (int step = 0; step < cfg.steps; ++step) {
    try {
      Tape tape;
      const Tensor m = net.forward(tape, x);
      const Tensor e = apply_mask(tape, x, m);

      Tensor logits_e;
      ActivationSet acts_e;
      {
        auto fw = model.forward_with_taps(tape, e);
        logits_e = fw.logits;
        acts_e = fw.taps;
      }

      LossBreakdown bd;
      bd.step = step;
      Tensor total = Tensor::scalar(0.0);
      auto accumulate = [&](double lambda, Tensor term, double& slot) {
        slot = term.item();
        if (lambda > 0.0) total = add(tape, total, scale(tape, term, lambda));
      };

      if (cfg.lambda_act > 0.0) {
        accumulate(cfg.lambda_act,
                   loss_act(tape, acts_x, acts_e, cfg.alpha_per_layer, cfg.distance),
                   bd.act);
      }
      if (cfg.lambda_ce > 0.0) {
        accumulate(cfg.lambda_ce, loss_ce(tape, logits_e, y), bd.ce);
      }
      if (cfg.lambda_kl > 0.0) {
        accumulate(cfg.lambda_kl, loss_kl(tape, logits_x, logits_e), bd.kl);
      }
      if (cfg.lambda_area > 0.0) {
        accumulate(cfg.lambda_area, loss_area(tape, m), bd.area);
      }
      if (cfg.lambda_bin > 0.0) {
        accumulate(cfg.lambda_bin, loss_bin(tape, m), bd.bin);
      }
      if (cfg.lambda_tv > 0.0) {
        accumulate(cfg.lambda_tv, loss_tv(tape, m), bd.tv);
      }
      if (cfg.lambda_rob > 0.0 && cfg.rob_samples_per_step > 0) {
        Tensor rob_total = Tensor::scalar(0.0);
        for (int sample = 0; sample < cfg.rob_samples_per_step; ++sample) {
          const Tensor r =
              sample_background(x.shape(), cfg.background, bg_rng, pool, exclude_index);
          rob_total = add(tape, rob_total, loss_rob(tape, x, m, r, model, y));
        }
        accumulate(cfg.lambda_rob,
                   scale(tape, rob_total, 1.0 / cfg.rob_samples_per_step), bd.rob);
      }

      bd.total = total.item();
      if (!std::isfinite(bd.total)) {
        throw DivergenceError(step, last_finite, "total loss is not finite");
      }
      trajectory.push_back(bd);
      last_finite = bd;

      adam.zero_grad();
      backward(total, tape);
      adam.step();
    } catch (const NumericError& e) {
      throw DivergenceError(step, last_finite, e.what());
    }
  }

  // Final mask from the trained network.
  ExplainResult result;
  result.y = y;
  result.conf_x = conf_x;
  result.trajectory = std::move(trajectory);
  {
    Tape tape;
    const Tensor m = net.forward(tape, x);
    result.mask.width = m.dim(3);
    result.mask.height = m.dim(2);
    result.mask.values = m.values();
  }
  result.mask.binarize(cfg.binarize_threshold);
  result.masked_image = apply_binary_mask(x, result.mask.binarized);

  const auto [preserved, conf_e] =
      decision_preservation(model, x, result.mask.binarized, y);

  EvidenceReport& rep = result.report;
  rep.image_id = image_id;
  rep.method = "medcam";
  rep.y = y;
  rep.conf_x = conf_x;
  rep.conf_e = conf_e;
  rep.decision_preserved = preserved;
  rep.area_fraction = result.mask.area_fraction();
  rep.bin_fraction = result.mask.crisp_fraction();
  {
    Tape tape;
    Tensor m = Tensor::from({1, 1, result.mask.height, result.mask.width},
                            std::vector<double>(result.mask.values));
    rep.tv_norm = loss_tv(tape, m).item();
  }
  rep.rob_pass_rate =
      robustness_rate(model, x, result.mask.binarized, y, cfg.rob_eval_trials,
                      cfg.background, Rng::mix(cfg.seed, 0x726f6276ULL), pool,
                      exclude_index);
  rep.seed = cfg.seed;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace medcam
