#include "graphcl/optim.hpp"

namespace graphcl {

namespace {

void check_grad(const std::string& name, const Tensor& p, const Tensor& g) {
  if (g.shape != p.shape)
    throw ConfigError("optimizer: gradient shape mismatch for '" + name + "'");
  if (!g.all_finite())
    throw NumericError("optimizer: non-finite gradient for '" + name + "'");
}

}  // namespace

void Sgd::step(ParamStore& params, const ParamStore& grads, real lr) {
  for (const auto& [name, g] : grads.items()) {
    Tensor& p = params.at(name);
    check_grad(name, p, g);
    auto [it, fresh] = velocity_.try_emplace(name, Tensor::zeros(p.shape));
    Tensor& v = it->second;
    v.data = momentum_ * v.data + g.data;
    p.data -= lr * v.data;
  }
}

void Adam::step(ParamStore& params, const ParamStore& grads, real lr) {
  ++t_;
  const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
  for (const auto& [name, g] : grads.items()) {
    Tensor& p = params.at(name);
    check_grad(name, p, g);
    Tensor& m = m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    m.data = beta1_ * m.data + (1.0 - beta1_) * g.data;
    v.data = beta2_ * v.data + (1.0 - beta2_) * g.data.square();
    p.data -= lr * (m.data / bc1) / ((v.data / bc2).sqrt() + eps_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, real momentum) {
  if (name == "sgd") return std::make_unique<Sgd>(momentum);
  if (name == "adam") return std::make_unique<Adam>();
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

}  // namespace graphcl
