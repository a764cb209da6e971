#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "medcam/tensor.hpp"

namespace medcam {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are owned per parameter; a
/// parameter whose gradient buffer was never touched is treated as having
/// zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ContractError("Adam: learning rate must be positive");
    if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0) ||
        !(cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0)) {
      throw ContractError("Adam: betas must lie in (0,1)");
    }
    if (!(cfg_.epsilon > 0.0)) throw ContractError("Adam: epsilon must be positive");
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const Tensor& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      const std::vector<double> g = p.grad_or_zeros();
      if (static_cast<long long>(g.size()) != p.numel()) {
        throw DimensionError("Adam: gradient shape mismatch");
      }
      double* v = p.data();
      double* m1 = first_[pi].data();
      double* m2 = second_[pi].data();
      for (long long i = 0; i < p.numel(); ++i) {
        m1[i] = cfg_.beta1 * m1[i] + (1.0 - cfg_.beta1) * g[i];
        m2[i] = cfg_.beta2 * m2[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m1[i] / bc1;
        const double vhat = m2[i] / bc2;
        v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  long long step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long long step_count_ = 0;
};

}  // namespace medcam
