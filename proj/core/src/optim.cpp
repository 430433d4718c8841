#include "lisa/optim.hpp"

#include <cmath>

#include "lisa/errors.hpp"

namespace lisa {

AdamW::AdamW(std::vector<Param*> params, const AdamWConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg.learning_rate < 0.0 || cfg.weight_decay < 0.0) {
    throw InvalidArgument("AdamW: learning rate and weight decay must be >= 0");
  }
  for (Param* p : params_) {
    m_.push_back(Tensor::zeros_like(p->value));
    v_.push_back(Tensor::zeros_like(p->value));
  }
}

void AdamW::step() {
  ++t_;
  const double lr = cfg_.learning_rate;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k]->value;
    const Tensor& g = params_[k]->grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      p[i] = p[i] * decay - lr * update;
    }
  }
}

}  // namespace lisa
