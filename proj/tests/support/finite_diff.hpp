#pragma once

// Central finite differences against the reverse-mode gradients.

#include <cmath>
#include <random>
#include <vector>

#include "cysgan/nn/autograd.hpp"

namespace cysgan::test {

template <typename S>
nn::Tensor<S> random_tensor(const nn::Shape5& s, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nn::Tensor<S> t(s);
  for (Index i = 0; i < t.numel(); ++i) t.data[i] = static_cast<S>(u(rng));
  return t;
}

/// Relative L2 error between analytic gradients (computed in scalar type A)
/// and central differences of the same function evaluated in double.
/// `f` is a generic callable taking std::vector<nn::Var<T>>& and returning a
/// scalar Var<T>. Only inputs flagged in `differentiate` are checked.
template <typename A, typename F>
double gradient_error(F&& f, const std::vector<nn::Tensor<double>>& inputs, const std::vector<bool>& differentiate,
                      double h = 1e-6) {
  std::vector<nn::Var<A>> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.emplace_back(inputs[k].template cast<A>(), differentiate[k]);
  nn::Var<A> out = f(vars);
  nn::backward(out);

  double num = 0, den = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!differentiate[k]) continue;
    std::vector<nn::Var<double>> probe;
    for (const auto& t : inputs) probe.emplace_back(t, false);
    for (Index i = 0; i < inputs[k].numel(); ++i) {
      const double x0 = inputs[k].data[i];
      probe[k].mutable_value().data[i] = x0 + h;
      const double fp = f(probe).item();
      probe[k].mutable_value().data[i] = x0 - h;
      const double fm = f(probe).item();
      probe[k].mutable_value().data[i] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double an = vars[k].has_grad() ? static_cast<double>(vars[k].grad().data[i]) : 0.0;
      num += (an - fd) * (an - fd);
      den += fd * fd;
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace cysgan::test
