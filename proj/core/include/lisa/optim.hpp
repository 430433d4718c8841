#pragma once

#include <cstdint>
#include <vector>

#include "lisa/layers.hpp"

namespace lisa {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Adam with decoupled weight decay:
///   p <- p * (1 - lr * wd);  p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(std::vector<Param*> params, const AdamWConfig& cfg);

  void step();
  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  /// First and second moment tensors, parallel to the parameter list.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::vector<Param*> params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace lisa
