#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>

#include "graphcl/params.hpp"

namespace graphcl {

// lr = base * decay^floor(iter / period)
inline real lr_schedule(std::int64_t iter, real base_lr, real decay, std::int64_t period) {
  if (period <= 0) throw ConfigError("lr_schedule: period must be > 0");
  return base_lr * std::pow(decay, static_cast<real>(iter / period));
}

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // In-place update; grads must be name/shape aligned with params for every
  // name present in grads (a subset of params is allowed).
  virtual void step(ParamStore& params, const ParamStore& grads, real lr) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(real momentum = 0.9) : momentum_(momentum) {}
  void step(ParamStore& params, const ParamStore& grads, real lr) override;

 private:
  real momentum_;
  std::unordered_map<std::string, Tensor> velocity_;
};

class Adam : public Optimizer {
 public:
  Adam(real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& params, const ParamStore& grads, real lr) override;

 private:
  real beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, real momentum = 0.9);

}  // namespace graphcl
