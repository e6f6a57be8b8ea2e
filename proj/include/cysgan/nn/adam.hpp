#pragma once

#include <cmath>
#include <vector>

#include "cysgan/nn/autograd.hpp"

namespace cysgan::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list. Parameters without a
/// gradient are skipped (their moments still decay on the shared step count).
template <typename S>
class Adam {
 public:
  using Vector = typename Tensor<S>::Vector;

  Adam() = default;
  Adam(std::vector<Var<S>> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const Var<S>& p : params_) {
      m_.push_back(Vector::Zero(p.value().numel()));
      v_.push_back(Vector::Zero(p.value().numel()));
    }
  }

  void zero_grad() {
    for (Var<S>& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
    const S c2 = static_cast<S>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
    const S lr = static_cast<S>(config_.lr), eps = static_cast<S>(config_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Var<S>& p = params_[k];
      if (!p.has_grad()) continue;
      const Vector& g = p.grad().data;
      m_[k] = b1 * m_[k] + (S(1) - b1) * g;
      v_[k] = b2 * v_[k] + (S(1) - b2) * g.cwiseProduct(g);
      p.mutable_value().data.array() -=
          lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps);
    }
  }

  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }
  std::vector<Vector>& first_moments() { return m_; }
  std::vector<Vector>& second_moments() { return v_; }
  const std::vector<Vector>& first_moments() const { return m_; }
  const std::vector<Vector>& second_moments() const { return v_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Var<S>> params_;
  AdamConfig config_;
  std::vector<Vector> m_, v_;
  long long t_ = 0;
};

}  // namespace cysgan::nn
