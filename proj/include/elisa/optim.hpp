#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "elisa/autodiff.hpp"
#include "elisa/tensor.hpp"

namespace elisa {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

/// Collects a model's parameters through its for_each_parameter visitor.
template <typename T, typename Model>
std::vector<NamedParam<T>> parameters_of(Model& model) {
  std::vector<NamedParam<T>> out;
  model.for_each_parameter([&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
struct AdamState {
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
  };

  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
};

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having zero gradient.
template <typename T>
void adam_step(std::span<const NamedParam<T>> params, const GradientMap<T>& grads, AdamState<T>& state) {
  for (const auto& p : params) {
    const Tensor<T>* g = grads.find(*p.tensor);
    if (g && g->shape() != p.tensor->shape()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + p.name);
    }
    auto it = state.moments.find(p.name);
    if (it != state.moments.end() && it->second.m.shape() != p.tensor->shape()) {
      throw std::invalid_argument("adam_step: optimizer state shape mismatch for " + p.name);
    }
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (const auto& p : params) {
    Tensor<T>& theta = *p.tensor;
    auto [it, inserted] = state.moments.try_emplace(p.name);
    auto& mom = it->second;
    if (inserted) {
      mom.m = Tensor<T>(theta.shape());
      mom.v = Tensor<T>(theta.shape());
    }
    const Tensor<T>* g = grads.find(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
      const double m = b1 * static_cast<double>(mom.m[i]) + (1.0 - b1) * gi;
      const double v = b2 * static_cast<double>(mom.v[i]) + (1.0 - b2) * gi * gi;
      mom.m[i] = static_cast<T>(m);
      mom.v[i] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

template <typename T>
double global_norm(const GradientMap<T>& grads) {
  double sq = 0.0;
  for (const auto& [param, g] : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

/// Rescales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(GradientMap<T>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [param, g] : grads)
      for (T& v : g.values()) v = static_cast<T>(static_cast<double>(v) * s);
  }
  return norm;
}

}  // namespace elisa
