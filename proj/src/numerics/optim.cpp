#include "varlab/numerics/optim.hpp"

#include <cmath>
#include <string>

#include "varlab/errors.hpp"

namespace varlab {

void adam_update(std::span<float> param, std::span<const float> grad, MomentBuffers& moments,
                 const AdamConfig& cfg, std::int64_t step, bool decay) {
  expects(step >= 1, "adam_update: step index must be >= 1");
  expects(grad.empty() || grad.size() == param.size(), "adam_update: gradient/parameter shape mismatch");
  if (moments.first.size() != param.size()) {
    moments.first.assign(param.size(), 0.0f);
    moments.second.assign(param.size(), 0.0f);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    const double m = cfg.beta1 * moments.first[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * moments.second[i] + (1.0 - cfg.beta2) * g * g;
    moments.first[i] = static_cast<float>(m);
    moments.second[i] = static_cast<float>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    double p = param[i];
    p -= cfg.lr * wd * p;
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    param[i] = static_cast<float>(p);
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)) {
  state_.config = cfg;
  state_.moments.resize(params_.size());
}

void AdamW::step() {
  ++state_.step;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    adam_update(p.mutable_data(), p.grad(), state_.moments[i], state_.config, state_.step, p.rank() >= 2);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
               OptimizerState& state) {
  expects(params.size() == grads.size(), "adam_step: one gradient per parameter required");
  expects(state.step >= 0, "adam_step: negative step counter");
  if (state.moments.size() != params.size()) state.moments.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    expects(grads[i].size() == params[i].numel(),
            "adam_step: gradient " + std::to_string(i) + " does not match parameter shape");
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params[i].mutable_data(), grads[i], state.moments[i], state.config, state.step,
                params[i].rank() >= 2);
  }
}

}  // namespace varlab
