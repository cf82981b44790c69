#pragma once

// Decoder-only transformer shared by the VAR model and the raster-scan AR
// baseline. Every block is AdaLN-conditioned on a class embedding and
// normalizes q and k to unit length before the dot product.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "varlab/numerics/nn.hpp"
#include "varlab/numerics/tensor.hpp"

namespace varlab {

// N(d) = 73728 d^3: 18 width^2 weights per block at width 64 d, depth d.
std::uint64_t n_of_d(std::uint64_t d);
std::uint64_t param_count_formula(std::uint64_t d);

struct TransformerShape {
  std::size_t depth = 2;
  std::size_t width = 128;
  std::size_t heads = 2;
  std::size_t vocab = 64;
  // Fixed logit temperature applied to unit q.k; 0 selects sqrt(head_dim).
  double qk_temperature = 0.0;
  double dropout = 0.0;
  double init_std = 0.02;

  std::size_t head_dim() const { return width / heads; }
  double temperature() const;
  void validate() const;
};

// One record per attention call of layer 0: queries against keys.
struct AttentionStep {
  std::size_t queries = 0;
  std::size_t keys = 0;
};
using AttentionTrace = std::vector<AttentionStep>;

// Per-layer key/value buffers, each [B, t, width].
class KvCache {
 public:
  void reset() { layers_.clear(); }
  std::size_t length() const { return layers_.empty() || !layers_.front().k.defined() ? 0 : layers_.front().k.dim(1); }
  bool empty() const { return layers_.empty(); }

 private:
  friend class TransformerCore;
  struct Layer {
    Tensor k, v;
  };
  std::vector<Layer> layers_;
};

class TransformerCore {
 public:
  TransformerCore() = default;
  TransformerCore(const TransformerShape& shape, std::mt19937_64& rng);

  const TransformerShape& shape() const { return shape_; }

  // x: [B, T, width], cond: [B, width]. block_ids gives the block of every
  // position; key j is visible to query i when block[j] <= block[i]. An
  // empty vector disables masking. Returns logits [B, T, vocab].
  Tensor forward(const Tensor& x, const Tensor& cond, const std::vector<int>& block_ids,
                 std::mt19937_64* dropout_rng = nullptr, AttentionTrace* trace = nullptr) const;

  // Appends x_new's keys and values to the cache and lets the new queries
  // see everything cached so far. No mask is needed.
  Tensor forward_cached(const Tensor& x_new, const Tensor& cond, KvCache& cache,
                        AttentionTrace* trace = nullptr) const;

  nn::ParameterList parameters() const;
  // Weights of the transformer blocks only: 18 width^2 per block.
  std::size_t core_parameter_count() const;

 private:
  struct Block {
    nn::Linear ada;  // width -> 6 width, from SiLU(cond)
    nn::Linear qkv, proj, fc1, fc2;
  };
  struct Modulation {
    Tensor gate1, scale1, shift1, gate2, scale2, shift2;
  };

  Modulation modulation(const Block& b, const Tensor& cond_act) const;
  Tensor run_block(const Block& b, const Modulation& m, const Tensor& x, const Tensor& keys_prefix,
                   const Tensor& values_prefix, const std::vector<int>& block_ids, std::mt19937_64* dropout_rng,
                   Tensor* k_out, Tensor* v_out) const;
  Tensor head(const Tensor& x, const Tensor& cond_act) const;

  TransformerShape shape_;
  std::vector<Block> blocks_;
  nn::Linear final_ada_;  // width -> 2 width
  nn::Linear head_;       // width -> vocab, with bias
};

}  // namespace varlab
