#include "cvlnm/optim.hpp"

#include <cmath>

namespace cvlnm {

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& [name, p] : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  // Validate every gradient before mutating anything.
  for (auto& [name, p] : params_) {
    for (Scalar g : p.grad())
      if (!std::isfinite(g))
        throw NumericsError("adam: non-finite gradient in parameter '" + name + "'");
  }
  ++t_;
  Scalar bc1 = 1.0 - std::pow(config_.beta1, static_cast<Scalar>(t_));
  Scalar bc2 = 1.0 - std::pow(config_.beta2, static_cast<Scalar>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    auto& data = p.data();
    auto& grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      Scalar g = grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      Scalar mhat = m[j] / bc1;
      Scalar vhat = v[j] / bc2;
      data[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

Adam::State Adam::state() const { return State{t_, m_, v_}; }

void Adam::restore(const State& state) {
  if (state.m.size() != m_.size() || state.v.size() != v_.size())
    throw ConfigError("adam: optimizer state does not match parameter set");
  t_ = state.t;
  m_ = state.m;
  v_ = state.v;
}

}  // namespace cvlnm
