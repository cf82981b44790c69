#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "varlab/tokenizer/schedule.hpp"
#include "varlab/var/transformer.hpp"

namespace varlab {

class VarModel;
class VqVae;

struct GenerationParams {
  std::size_t top_k = 0;  // 0 keeps the whole vocabulary
  double cfg = 1.0;       // guidance scale s
  std::uint64_t seed = 0;
  int class_label = -1;   // -1 selects the null class

  void validate(std::size_t vocab, std::size_t num_classes) const;
};

// Uniform draw in [0, 1) owned by one (sample, position) pair, so the
// value does not depend on the order positions are visited.
double position_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t position);

// g = s * c + (1 - s) * u, which is u at s = 0 and c at s = 1 exactly.
std::vector<float> guide_logits(std::span<const float> conditional, std::span<const float> unconditional, double s);

// Keeps the k largest logits (lowest index wins ties; k = 0 or k >= V keeps
// all), then inverts the softmax CDF at u.
int sample_top_k(std::span<const float> logits, std::size_t k, double u);

enum class CacheMode { cached, recompute };

// Zero-shot hook: positions with generate == 0 are overwritten with the
// given values after each scale is sampled.
struct ForcedTokens {
  MultiScaleTokens values;
  std::vector<std::vector<std::uint8_t>> generate;  // per scale, row-major
};

struct SampleOptions {
  GenerationParams params;
  std::size_t count = 1;
  CacheMode mode = CacheMode::cached;
  const std::vector<ForcedTokens>* forcing = nullptr;  // one per sample
  bool keep_logits = false;
};

struct SampleResult {
  std::vector<MultiScaleTokens> tokens;
  std::size_t iterations = 0;  // model evaluations, one per scale
  AttentionTrace trace;
  // Guided logits per scale, [count, h_k w_k, V] flattened, if requested.
  std::vector<std::vector<float>> logits;
};

SampleResult sample_var(const VarModel& model, const VqVae& vqvae, const SampleOptions& options);

}  // namespace varlab
