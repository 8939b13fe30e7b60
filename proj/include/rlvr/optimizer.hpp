#pragma once

#include <cstddef>
#include <vector>

#include "rlvr/tensor.hpp"

namespace rlvr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled (AdamW-style) decay; 0 gives plain Adam.
  double weightDecay = 0.0;
};

// Adam with optional decoupled weight decay. Moment buffers are created
// lazily to match the first parameter set it sees.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Minimizes: moves trainable entries against `grad`. A zero learning rate
  // leaves parameters and moments untouched.
  void step(Checkpoint& params, const Checkpoint& grad, const std::vector<bool>& trainable, double lr);

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Euclidean norm over all entries.
double globalNorm(const Checkpoint& grad);
bool allFinite(const Checkpoint& ckpt);

}  // namespace rlvr
