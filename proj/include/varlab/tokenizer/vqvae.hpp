#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlab/numerics/nn.hpp"
#include "varlab/tokenizer/quantizer.hpp"
#include "varlab/tokenizer/schedule.hpp"

namespace varlab {

struct VqVaeConfig {
  std::size_t image_size = 32;
  std::size_t image_channels = 3;
  std::size_t hidden = 32;
  std::size_t latent_channels = 16;  // C
  std::size_t vocab = 64;            // V
  ScaleSchedule schedule = ScaleSchedule::square({1, 2, 4, 8});
  bool bottleneck_attention = false;
  double lambda_perceptual = 0.0;
  double lambda_adversarial = 0.0;
  std::uint64_t seed = 0;

  // The encoder halves resolution twice.
  static constexpr std::size_t kDownsample = 4;
  std::size_t latent_size() const { return image_size / kDownsample; }
  void validate() const;
};

void to_json(nlohmann::json& j, const VqVaeConfig& c);
void from_json(const nlohmann::json& j, VqVaeConfig& c);
nlohmann::json schedule_to_json(const ScaleSchedule& s);
ScaleSchedule schedule_from_json(const nlohmann::json& j);

// Row-normalized token-to-token attention of the bottleneck layer.
struct AttentionMap {
  std::size_t tokens = 0;
  std::vector<double> scores;  // tokens x tokens, row-major
  double at(std::size_t i, std::size_t j) const { return scores[i * tokens + j]; }
};

// Small strided-CNN VQ autoencoder. Images are NHWC floats in [-1, 1].
class VqVae {
 public:
  explicit VqVae(VqVaeConfig cfg);

  const VqVaeConfig& config() const { return cfg_; }
  const ScaleSchedule& schedule() const { return cfg_.schedule; }
  const Codebook& codebook() const { return codebook_; }
  const PhiStack& phi() const { return phi_; }

  // E(im): [B, H, W, 3] -> [B, h, w, C]
  Tensor encode(const Tensor& images) const;
  // D(f_hat): [B, h, w, C] -> [B, H, W, 3]
  Tensor decode(const Tensor& features) const;

  EncodeResult encode_multiscale(const Tensor& features) const;
  Tensor reconstruct_features(const std::vector<MultiScaleTokens>& tokens) const;

  std::vector<MultiScaleTokens> tokenize(const Tensor& images) const;
  Tensor decode_tokens(const std::vector<MultiScaleTokens>& tokens) const;

  // Throws UnsupportedConfiguration when the bottleneck attention is off.
  AttentionMap encoder_attention_map(const Tensor& image) const;

  nn::ParameterList parameters() const;

 private:
  Tensor bottleneck(const Tensor& f, std::vector<float>* probs) const;

  VqVaeConfig cfg_;
  nn::Conv2d enc1_, enc2_, enc3_;
  nn::Linear attn_q_, attn_k_, attn_v_, attn_out_;
  nn::Conv2d dec1_, dec2_, dec3_;
  Codebook codebook_;
  PhiStack phi_;
};

struct LossWeights {
  double perceptual = 0.0;
  double adversarial = 0.0;
};

// Optional extra terms; an empty function contributes zero.
using ImageCriterion = std::function<Tensor(const Tensor& reconstructed)>;

struct LossBreakdown {
  Tensor total;
  double recon = 0.0;
  double latent = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
};

// ||im - im_hat||_2 + ||f - f_hat||_2 + lp * L_P(im_hat) + lg * L_G(im_hat),
// norms taken per sample and averaged over the batch.
LossBreakdown vqvae_loss(const Tensor& im, const Tensor& im_hat, const Tensor& f, const Tensor& f_hat,
                         const LossWeights& weights, const ImageCriterion& perceptual = {},
                         const ImageCriterion& adversarial = {});

struct VqVaeTrainConfig {
  std::size_t steps = 400;
  std::size_t batch = 16;
  double lr = 2e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  // Steps between loss-curve rows; 0 means once per pass over the data.
  std::size_t log_every = 0;
};

struct LossCurveRow {
  std::size_t step = 0;
  double total = 0.0;
  double recon = 0.0;
  double latent = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
};

struct VqVaeTrainResult {
  std::vector<LossCurveRow> curve;
  double initial_recon = 0.0;
  double final_recon = 0.0;
};

// images: [N, H, W, 3]. Deterministic for a fixed seed.
VqVaeTrainResult train_vqvae(VqVae& model, const Tensor& images, const VqVaeTrainConfig& cfg,
                             const ImageCriterion& perceptual = {}, const ImageCriterion& adversarial = {});

std::string loss_curve_csv(const std::vector<LossCurveRow>& rows);

// Rows [first, first+count) of an [N, ...] tensor.
Tensor batch_slice(const Tensor& x, std::size_t first, std::size_t count);
Tensor batch_gather(const Tensor& x, const std::vector<std::size_t>& rows);

}  // namespace varlab
