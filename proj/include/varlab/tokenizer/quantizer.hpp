#pragma once

// Multi-scale residual quantization over a shared codebook.
//
// Encoding walks the schedule coarse to fine: quantize the current residual
// at scale k, embed the codes back to full latent resolution, refine with
// phi_k and subtract. Reconstruction accumulates the same refined embeddings,
// so f == reconstruct(tokens) + final residual up to float rounding.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "varlab/numerics/nn.hpp"
#include "varlab/numerics/tensor.hpp"
#include "varlab/tokenizer/schedule.hpp"

namespace varlab {

struct Codebook {
  Tensor vectors;  // [V, C]

  static Codebook random(std::size_t vocab, std::size_t dim, double stddev, std::mt19937_64& rng);
  std::size_t vocab() const { return vectors.dim(0); }
  std::size_t dim() const { return vectors.dim(1); }
};

// argmin_v ||Z[v] - f||_2, lowest index on ties.
int quantize_nearest(std::span<const float> feature, const Codebook& codebook);

// phi_k(z) = z + conv3x3(z). Zero-initialized, so a fresh stack is the identity.
struct Refiner {
  nn::Conv2d conv;
  Tensor operator()(const Tensor& z) const;
};

class PhiStack {
 public:
  static PhiStack identity(std::size_t scales, std::size_t channels);

  std::size_t size() const { return refiners_.size(); }
  const Refiner& operator[](std::size_t k) const { return refiners_[k]; }
  nn::ParameterList parameters() const;

 private:
  std::vector<Refiner> refiners_;
};

struct EncodeResult {
  std::vector<MultiScaleTokens> tokens;  // one per batch item
  Tensor residual;                       // [B, h_K, w_K, C]
};

// f: [B, h_K, w_K, C]. Runs without recording a graph.
EncodeResult encode_multiscale(const Tensor& f, const ScaleSchedule& schedule, const Codebook& codebook,
                               const PhiStack& phi);

// Sum over scales of phi_k(upsample(lookup(Z, r_k))). Differentiable with
// respect to the codebook and the refiners.
Tensor reconstruct_features(const std::vector<MultiScaleTokens>& tokens, const Codebook& codebook,
                            const PhiStack& phi);

// Running reconstruction used to build transformer inputs one scale at a
// time: after scales 0..k-1 are added, input_for(k) is the partial f-hat
// resized to scale k. Teacher forcing and sampling share this path.
class ScaleAccumulator {
 public:
  ScaleAccumulator(const Codebook& codebook, const PhiStack& phi, ScaleSchedule schedule, std::size_t batch);

  // tokens: batch-major, batch * h_k * w_k entries.
  void add(std::size_t k, std::span<const int> tokens);
  // [B, h_k * w_k, C]
  Tensor input_for(std::size_t k) const;
  const Tensor& features() const { return f_hat_; }
  std::size_t scales_added() const { return added_; }

 private:
  const Codebook* codebook_;
  const PhiStack* phi_;
  ScaleSchedule schedule_;
  std::size_t batch_;
  std::size_t added_ = 0;
  Tensor f_hat_;
};

// Teacher-forcing features for scales 1..K-1, concatenated: [B, T - n_0, C].
Tensor teacher_forcing_inputs(const std::vector<MultiScaleTokens>& tokens, const Codebook& codebook,
                              const PhiStack& phi);

}  // namespace varlab
