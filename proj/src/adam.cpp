#include "pitrans/adam.hpp"

#include <cmath>

#include "pitrans/errors.hpp"

namespace pitrans {

double adam_update(double param, double grad, double& m, double& v, std::int64_t t, const AdamSettings& s) {
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = s.beta2 * v + (1.0 - s.beta2) * grad * grad;
  const double m_hat = m / (1.0 - std::pow(s.beta1, static_cast<double>(t)));
  const double v_hat = v / (1.0 - std::pow(s.beta2, static_cast<double>(t)));
  return param - s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
}

Adam::Adam(const TensorList& params, AdamSettings settings) : settings_(settings) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    slots_.push_back({p.name, p.tensor, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void Adam::step() {
  for (const auto& s : slots_)
    if (!s.param.has_grad()) throw ContractError("adam: parameter '" + s.name + "' has no gradient");
  ++t_;
  for (auto& s : slots_) {
    auto p = s.param.mutable_data();
    const auto g = s.param.grad();
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = static_cast<float>(adam_update(p[i], g[i], s.m[i], s.v[i], t_, settings_));
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace pitrans
