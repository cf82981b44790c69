#pragma once

// One randomised finite-difference check per layer kind; shared by the
// unit tests and the acceptance run.

#include <array>
#include <random>
#include <string_view>
#include <vector>

#include "support/gradcheck.hpp"

namespace varlab::testing {

enum class LayerKind { linear, conv, layernorm, adaln, attention, embedding, interpolation, activation, cross_entropy };

inline constexpr std::array<LayerKind, 9> kLayerKinds{
    LayerKind::linear,    LayerKind::conv,          LayerKind::layernorm,  LayerKind::adaln,        LayerKind::attention,
    LayerKind::embedding, LayerKind::interpolation, LayerKind::activation, LayerKind::cross_entropy};

inline std::string_view layer_name(LayerKind k) {
  constexpr std::array<std::string_view, 9> names{"linear",    "conv",          "layernorm",  "adaln",        "attention",
                                                  "embedding", "interpolation", "activation", "cross_entropy"};
  return names[static_cast<std::size_t>(k)];
}

// Max relative error of instance `inst` (its own seed and shape variant).
inline double layer_grad_error(LayerKind kind, int inst) {
  std::mt19937_64 rng(1000 + inst);
  switch (kind) {
    case LayerKind::linear: {
      auto x = random_param({3, 5}, rng), w = random_param({5, 4}, rng), b = random_param({4}, rng);
      Projection proj(12, rng);
      return grad_check([&] { return proj(ops::linear(x, w, b)); }, {x, w, b}).max_rel_error;
    }
    case LayerKind::conv: {
      auto x = random_param({2, 5, 5, 3}, rng), w = random_param({3, 3, 3, 4}, rng), b = random_param({4}, rng);
      const std::size_t stride = 1 + static_cast<std::size_t>(inst % 2);
      const std::size_t oh = (5 + 2 - 3) / stride + 1;
      Projection proj(2 * oh * oh * 4, rng);
      return grad_check([&] { return proj(ops::conv2d(x, w, b, stride, 1)); }, {x, w, b}).max_rel_error;
    }
    case LayerKind::layernorm: {
      auto x = random_param({4, 6}, rng);
      Projection proj(24, rng);
      return grad_check([&] { return proj(ops::layer_norm(x)); }, {x}).max_rel_error;
    }
    case LayerKind::adaln: {
      auto x = random_param({2, 3, 5}, rng), cond = random_param({2, 4}, rng), w = random_param({4, 15}, rng);
      Projection proj(30, rng);
      auto loss = [&] {
        auto mod = ops::linear(ops::silu(cond), w);
        auto sc = ops::slice_last(mod, 0, 5), sh = ops::slice_last(mod, 5, 5), gt = ops::slice_last(mod, 10, 5);
        auto h = ops::modulate(ops::layer_norm(x), sc, sh);
        return proj(ops::gated_residual(x, gt, ops::gelu(h)));
      };
      return grad_check(loss, {x, cond, w}).max_rel_error;
    }
    case LayerKind::attention: {
      const bool qk_norm = inst % 2 == 0;
      auto q = random_param({2, 6, 8}, rng), k = random_param({2, 6, 8}, rng), v = random_param({2, 6, 8}, rng);
      ops::AttentionOptions opt;
      opt.heads = 2;
      opt.qk_norm = qk_norm;
      opt.scale = qk_norm ? 3.0 : 0.0;
      opt.query_block = {0, 1, 1, 2, 2, 2};
      opt.key_block = opt.query_block;
      Projection proj(96, rng);
      return grad_check([&] { return proj(ops::attention(q, k, v, opt)); }, {q, k, v}).max_rel_error;
    }
    case LayerKind::embedding: {
      auto table = random_param({7, 3}, rng);
      std::vector<int> idx{0, 6, 3, 3, 1};
      Projection proj(15, rng);
      return grad_check([&] { return proj(ops::embedding(table, std::span<const int>(idx))); }, {table}).max_rel_error;
    }
    case LayerKind::interpolation: {
      auto x = random_param({1, 4, 3, 2}, rng);
      const std::size_t oh = 1 + static_cast<std::size_t>(inst % 7), ow = 1 + static_cast<std::size_t>((inst * 3) % 6);
      Projection proj(oh * ow * 2, rng);
      return grad_check([&] { return proj(ops::resize_bilinear(x, oh, ow)); }, {x}).max_rel_error;
    }
    case LayerKind::activation: {
      auto x = random_param_away_from_zero({7, 3}, rng);
      Projection proj(21, rng);
      double worst = 0.0;
      for (int which = 0; which < 3; ++which) {
        auto loss = [&] {
          if (which == 0) return proj(ops::relu(x));
          if (which == 1) return proj(ops::silu(x));
          return proj(ops::gelu(x));
        };
        worst = std::max(worst, grad_check(loss, {x}).max_rel_error);
      }
      return worst;
    }
    case LayerKind::cross_entropy: {
      auto logits = random_param({6, 5}, rng, -2, 2);
      std::vector<int> t(6);
      for (auto& v : t) v = static_cast<int>(rng() % 5);
      return grad_check([&] { return ops::softmax_cross_entropy(logits, t).loss; }, {logits}).max_rel_error;
    }
  }
  return 1.0;
}

}  // namespace varlab::testing
