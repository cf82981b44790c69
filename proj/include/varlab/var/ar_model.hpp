#pragma once

// Raster-scan next-token baseline over the last-scale map r_K only. Shares
// the transformer core with VAR; position 0 holds the class start token and
// position t > 0 the embedding of token t - 1.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "varlab/numerics/nn.hpp"
#include "varlab/var/sampling.hpp"
#include "varlab/var/transformer.hpp"
#include "varlab/var/var_model.hpp"

namespace varlab {

class ArModel {
 public:
  // Uses depth, width, heads, vocab and classes of cfg; the grid is the
  // last entry of cfg.schedule.
  explicit ArModel(VarConfig cfg);

  const VarConfig& config() const { return cfg_; }
  const TransformerCore& core() const { return core_; }
  int null_class() const { return static_cast<int>(cfg_.num_classes); }
  std::size_t sequence_length() const { return cfg_.schedule.last().area(); }

  // prefix: batch-major, B * m tokens with m < sequence_length(). Returns
  // logits [B, m + 1, V] under a causal mask.
  Tensor forward(std::span<const int> prefix, std::span<const int> labels, std::mt19937_64* dropout_rng = nullptr,
                 AttentionTrace* trace = nullptr) const;

  // Cached step at position t; previous holds token t - 1 per sample
  // (ignored at t == 0). Returns [B, 1, V].
  Tensor step(std::size_t t, std::span<const int> previous, std::span<const int> labels, KvCache& cache,
              AttentionTrace* trace = nullptr) const;

  nn::ParameterList parameters() const;

 private:
  Tensor embed(std::span<const int> tokens, std::span<const int> labels, std::size_t first, std::size_t len) const;

  VarConfig cfg_;
  TransformerCore core_;
  Tensor class_emb_;  // [classes + 1, width]
  Tensor token_emb_;  // [V, width]
  Tensor pos_emb_;    // [n^2, width]
};

struct ArSampleResult {
  std::vector<std::vector<int>> tokens;  // row-major r_K per sample
  std::size_t iterations = 0;
  AttentionTrace trace;
};

ArSampleResult sample_ar(const ArModel& model, const GenerationParams& params, std::size_t count = 1,
                         CacheMode mode = CacheMode::cached);

}  // namespace varlab
