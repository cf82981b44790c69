#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include <json.hpp>

#include "varlab/numerics/nn.hpp"
#include "varlab/tokenizer/schedule.hpp"
#include "varlab/var/transformer.hpp"

namespace varlab {

struct VarConfig {
  std::size_t depth = 2;
  std::size_t width = 0;  // 0: 64 * depth
  std::size_t heads = 0;  // 0: depth
  ScaleSchedule schedule = ScaleSchedule::square({1, 2, 4, 8});
  std::size_t vocab = 64;
  std::size_t latent_channels = 16;
  std::size_t num_classes = 8;  // plus one null class at index num_classes
  double dropout = 0.0;
  double qk_temperature = 0.0;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  // Desk ladder entry: width 64 d, d heads of 64 channels.
  static VarConfig desk(std::size_t d);

  std::size_t resolved_width() const { return width ? width : 64 * depth; }
  std::size_t resolved_heads() const { return heads ? heads : depth; }
  TransformerShape transformer_shape() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const VarConfig& c);
void from_json(const nlohmann::json& j, VarConfig& c);

// Next-scale predictor. The sequence holds every scale's positions back to
// back; scale 0 positions carry the class start token, scale k > 0
// positions carry the cumulative reconstruction of scales < k resized to
// (h_k, w_k) and projected to model width. Learned per-position and
// per-scale embeddings are added to both.
class VarModel {
 public:
  explicit VarModel(VarConfig cfg);

  const VarConfig& config() const { return cfg_; }
  const TransformerCore& core() const { return core_; }
  int null_class() const { return static_cast<int>(cfg_.num_classes); }
  std::size_t sequence_length() const { return cfg_.schedule.total_tokens(); }

  // scale_inputs: [B, offset(m) - n_0, C] for some 1 <= m <= K (scales
  // 1..m-1); an empty second axis is allowed when m == 1. Returns logits
  // [B, offset(m), V] under the block-causal mask.
  Tensor forward(const Tensor& scale_inputs, std::span<const int> labels, std::mt19937_64* dropout_rng = nullptr,
                 AttentionTrace* trace = nullptr) const;

  // Cached step for scale k. scale_input: [B, n_k, C]; ignored for k == 0.
  Tensor step(std::size_t k, const Tensor& scale_input, std::span<const int> labels, KvCache& cache,
              AttentionTrace* trace = nullptr) const;

  nn::ParameterList parameters() const;
  std::size_t core_parameter_count() const { return core_.core_parameter_count(); }
  std::size_t total_parameter_count() const { return parameters().count(); }
  const Tensor& class_embedding() const { return class_emb_; }

 private:
  Tensor embed(const Tensor& scale_inputs, std::span<const int> labels, std::size_t first_scale,
               std::size_t end_scale) const;
  Tensor condition(std::span<const int> labels) const;

  VarConfig cfg_;
  TransformerCore core_;
  Tensor class_emb_;  // [classes + 1, width]
  Tensor pos_emb_;    // [T, width]
  Tensor level_emb_;  // [K, width]
  nn::Linear word_embed_;
};

// Parameter total at the ImageNet 256 setting (V = 4096, 1000
// classes, ten scales up to 16x16, C = 32): core plus embeddings, final
// AdaLN and head.
std::uint64_t imagenet_parameter_estimate(std::uint64_t d);

}  // namespace varlab
