#include "rlvr/optimizer.hpp"

#include <cmath>

#include "rlvr/error.hpp"

namespace rlvr {

void Adam::step(Checkpoint& params, const Checkpoint& grad, const std::vector<bool>& trainable,
                double lr) {
  if (!mergeCompatible(params, grad)) throw ContractViolation("gradient layout does not match parameters");
  if (trainable.size() != params.entries.size()) throw ContractViolation("trainable mask size mismatch");
  if (lr == 0.0) return;
  if (m_.empty()) {
    for (const auto& e : params.entries) {
      m_.emplace_back(e.tensor.size(), 0.0);
      v_.emplace_back(e.tensor.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (!trainable[i]) continue;
    auto p = params.entries[i].tensor.data();
    auto g = grad.entries[i].tensor.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      if (config_.weightDecay != 0.0) p[j] -= lr * config_.weightDecay * p[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
    }
  }
}

double globalNorm(const Checkpoint& grad) {
  double sq = 0.0;
  for (const auto& e : grad.entries)
    for (double v : e.tensor.data()) sq += v * v;
  return std::sqrt(sq);
}

bool allFinite(const Checkpoint& ckpt) {
  for (const auto& e : ckpt.entries)
    if (!e.tensor.allFinite()) return false;
  return true;
}

}  // namespace rlvr
