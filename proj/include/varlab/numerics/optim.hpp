#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "varlab/numerics/tensor.hpp"

namespace varlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct MomentBuffers {
  std::vector<float> first;
  std::vector<float> second;
};

// One bias-corrected AdamW update on a single parameter buffer; `step` is the
// 1-based index of this update. Decay is decoupled (applied to the weight,
// not folded into the gradient).
void adam_update(std::span<float> param, std::span<const float> grad, MomentBuffers& moments,
                 const AdamConfig& cfg, std::int64_t step, bool decay);

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<MomentBuffers> moments;
};

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamConfig cfg);

  // Applies one update from the gradients currently stored on the params.
  // Params without a gradient are treated as having a zero gradient.
  void step();
  void zero_grad();

  void set_lr(double lr) { state_.config.lr = lr; }
  const OptimizerState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  OptimizerState state_;
};

// Functional form: explicit grads, explicit state.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
               OptimizerState& state);

}  // namespace varlab
