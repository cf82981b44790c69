#include "varlab/tokenizer/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/numerics/optim.hpp"

namespace varlab {

void VqVaeConfig::validate() const {
  expects(image_size >= kDownsample && image_size % kDownsample == 0, "vqvae: image size must be a multiple of 4");
  expects(image_channels >= 1 && hidden >= 1 && latent_channels >= 1, "vqvae: channel counts must be positive");
  expects(vocab >= 2, "vqvae: vocabulary needs at least two codes");
  expects(!schedule.empty(), "vqvae: empty scale schedule");
  expects(schedule.last() == ScaleSize{latent_size(), latent_size()},
          "vqvae: last scale must equal the latent resolution " + std::to_string(latent_size()));
  expects(lambda_perceptual >= 0.0 && lambda_adversarial >= 0.0, "vqvae: loss weights must be nonnegative");
}

nlohmann::json schedule_to_json(const ScaleSchedule& s) {
  auto j = nlohmann::json::array();
  for (const auto& sz : s.sizes()) j.push_back({sz.h, sz.w});
  return j;
}

ScaleSchedule schedule_from_json(const nlohmann::json& j) {
  expects(j.is_array() && !j.empty(), "schedule must be a nonempty array of [h, w] pairs");
  std::vector<ScaleSize> sizes;
  for (const auto& e : j) {
    if (e.is_number_integer()) {
      const auto side = e.get<std::size_t>();
      sizes.push_back({side, side});
    } else {
      expects(e.is_array() && e.size() == 2, "schedule entries must be [h, w] pairs");
      sizes.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
    }
  }
  return ScaleSchedule(std::move(sizes));
}

void to_json(nlohmann::json& j, const VqVaeConfig& c) {
  j = {{"image_size", c.image_size},
       {"image_channels", c.image_channels},
       {"hidden", c.hidden},
       {"latent_channels", c.latent_channels},
       {"vocab", c.vocab},
       {"schedule", schedule_to_json(c.schedule)},
       {"bottleneck_attention", c.bottleneck_attention},
       {"lambda_perceptual", c.lambda_perceptual},
       {"lambda_adversarial", c.lambda_adversarial},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, VqVaeConfig& c) {
  c = VqVaeConfig{};
  c.image_size = j.value("image_size", c.image_size);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.hidden = j.value("hidden", c.hidden);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.vocab = j.value("vocab", c.vocab);
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  c.bottleneck_attention = j.value("bottleneck_attention", c.bottleneck_attention);
  c.lambda_perceptual = j.value("lambda_perceptual", c.lambda_perceptual);
  c.lambda_adversarial = j.value("lambda_adversarial", c.lambda_adversarial);
  c.seed = j.value("seed", c.seed);
}

VqVae::VqVae(VqVaeConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t h = cfg_.hidden, c = cfg_.latent_channels;
  enc1_ = nn::Conv2d(cfg_.image_channels, h, 3, 2, 1, rng);
  enc2_ = nn::Conv2d(h, h, 3, 2, 1, rng);
  enc3_ = nn::Conv2d(h, c, 3, 1, 1, rng);
  if (cfg_.bottleneck_attention) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    attn_q_ = nn::Linear(c, c, false, sd, rng);
    attn_k_ = nn::Linear(c, c, false, sd, rng);
    attn_v_ = nn::Linear(c, c, false, sd, rng);
    attn_out_ = nn::Linear(c, c, false, sd, rng);
  }
  dec1_ = nn::Conv2d(c, h, 3, 1, 1, rng);
  dec2_ = nn::Conv2d(h, h, 3, 1, 1, rng);
  dec3_ = nn::Conv2d(h, cfg_.image_channels, 3, 1, 1, rng);
  codebook_ = Codebook::random(cfg_.vocab, c, 1.0, rng);
  phi_ = PhiStack::identity(cfg_.schedule.size(), c);
}

Tensor VqVae::bottleneck(const Tensor& f, std::vector<float>* probs) const {
  const std::size_t b = f.dim(0), h = f.dim(1), w = f.dim(2), c = f.dim(3);
  auto x = ops::reshape(f, {b, h * w, c});
  auto n = ops::layer_norm(x);
  ops::AttentionOptions opt;  // single head, bidirectional
  auto a = ops::attention(attn_q_(n), attn_k_(n), attn_v_(n), opt, probs);
  return ops::reshape(ops::add(x, attn_out_(a)), {b, h, w, c});
}

Tensor VqVae::encode(const Tensor& images) const {
  expects(images.rank() == 4 && images.dim(1) == cfg_.image_size && images.dim(2) == cfg_.image_size &&
              images.dim(3) == cfg_.image_channels,
          "vqvae: expected images of shape [B, " + std::to_string(cfg_.image_size) + ", " +
              std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_channels) + "], got " +
              shape_str(images.shape()));
  auto x = ops::silu(enc1_(images));
  x = ops::silu(enc2_(x));
  x = enc3_(x);
  if (cfg_.bottleneck_attention) x = bottleneck(x, nullptr);
  return x;
}

Tensor VqVae::decode(const Tensor& features) const {
  const std::size_t mid = cfg_.image_size / 2;
  auto x = ops::silu(dec1_(features));
  x = ops::resize_bilinear(x, mid, mid);
  x = ops::silu(dec2_(x));
  x = ops::resize_bilinear(x, cfg_.image_size, cfg_.image_size);
  return dec3_(x);
}

EncodeResult VqVae::encode_multiscale(const Tensor& features) const {
  return varlab::encode_multiscale(features, cfg_.schedule, codebook_, phi_);
}

Tensor VqVae::reconstruct_features(const std::vector<MultiScaleTokens>& tokens) const {
  return varlab::reconstruct_features(tokens, codebook_, phi_);
}

std::vector<MultiScaleTokens> VqVae::tokenize(const Tensor& images) const {
  NoGradGuard no_grad;
  return encode_multiscale(encode(images)).tokens;
}

Tensor VqVae::decode_tokens(const std::vector<MultiScaleTokens>& tokens) const {
  NoGradGuard no_grad;
  return decode(reconstruct_features(tokens));
}

AttentionMap VqVae::encoder_attention_map(const Tensor& image) const {
  if (!cfg_.bottleneck_attention) {
    throw UnsupportedConfiguration("encoder attention map needs a VQVAE built with bottleneck_attention");
  }
  expects(image.rank() == 4 && image.dim(0) == 1, "encoder_attention_map: expects a single image [1, H, W, 3]");
  NoGradGuard no_grad;
  auto x = ops::silu(enc1_(image));
  x = ops::silu(enc2_(x));
  x = enc3_(x);
  std::vector<float> probs;
  bottleneck(x, &probs);
  AttentionMap map;
  map.tokens = x.dim(1) * x.dim(2);
  map.scores.assign(probs.begin(), probs.end());
  // Renormalize in double so rows sum to one beyond float rounding.
  for (std::size_t i = 0; i < map.tokens; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < map.tokens; ++j) s += map.scores[i * map.tokens + j];
    for (std::size_t j = 0; j < map.tokens; ++j) map.scores[i * map.tokens + j] /= s;
  }
  return map;
}

nn::ParameterList VqVae::parameters() const {
  nn::ParameterList p;
  p.append(enc1_.parameters(), "encoder.conv1.");
  p.append(enc2_.parameters(), "encoder.conv2.");
  p.append(enc3_.parameters(), "encoder.conv3.");
  if (cfg_.bottleneck_attention) {
    p.append(attn_q_.parameters(), "encoder.attn.q.");
    p.append(attn_k_.parameters(), "encoder.attn.k.");
    p.append(attn_v_.parameters(), "encoder.attn.v.");
    p.append(attn_out_.parameters(), "encoder.attn.out.");
  }
  p.append(dec1_.parameters(), "decoder.conv1.");
  p.append(dec2_.parameters(), "decoder.conv2.");
  p.append(dec3_.parameters(), "decoder.conv3.");
  p.add("codebook", codebook_.vectors);
  p.append(phi_.parameters(), "");
  return p;
}

LossBreakdown vqvae_loss(const Tensor& im, const Tensor& im_hat, const Tensor& f, const Tensor& f_hat,
                         const LossWeights& weights, const ImageCriterion& perceptual,
                         const ImageCriterion& adversarial) {
  expects(weights.perceptual >= 0.0 && weights.adversarial >= 0.0, "vqvae_loss: loss weights must be nonnegative");
  expects(im.shape() == im_hat.shape(), "vqvae_loss: image shapes differ");
  expects(f.shape() == f_hat.shape(), "vqvae_loss: feature shapes differ");
  LossBreakdown out;
  auto recon = ops::mean(ops::l2_norm_per_sample(ops::sub(im, im_hat)));
  auto latent = ops::mean(ops::l2_norm_per_sample(ops::sub(f, f_hat)));
  out.recon = recon.item();
  out.latent = latent.item();
  out.total = ops::add(recon, latent);
  if (perceptual && weights.perceptual > 0.0) {
    auto lp = perceptual(im_hat);
    out.perceptual = lp.item();
    out.total = ops::add(out.total, ops::scale(lp, weights.perceptual));
  }
  if (adversarial && weights.adversarial > 0.0) {
    auto lg = adversarial(im_hat);
    out.adversarial = lg.item();
    out.total = ops::add(out.total, ops::scale(lg, weights.adversarial));
  }
  return out;
}

Tensor batch_slice(const Tensor& x, std::size_t first, std::size_t count) {
  expects(first + count <= x.dim(0), "batch_slice: range out of bounds");
  const std::size_t per = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = count;
  std::vector<float> v(x.data().begin() + static_cast<std::ptrdiff_t>(first * per),
                       x.data().begin() + static_cast<std::ptrdiff_t>((first + count) * per));
  return Tensor::from_data(std::move(s), std::move(v));
}

Tensor batch_gather(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t per = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = rows.size();
  std::vector<float> v;
  v.reserve(rows.size() * per);
  for (auto r : rows) {
    expects(r < x.dim(0), "batch_gather: row out of range");
    v.insert(v.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * per),
             x.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * per));
  }
  return Tensor::from_data(std::move(s), std::move(v));
}

namespace {

LossBreakdown forward_loss(const VqVae& model, const Tensor& images, const ImageCriterion& perceptual,
                           const ImageCriterion& adversarial) {
  auto f = model.encode(images);
  auto enc = model.encode_multiscale(f);
  auto f_hat = model.reconstruct_features(enc.tokens);
  // Straight-through: the decoder sees f_hat's values with f's gradient path.
  std::vector<float> delta(f.numel());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = f_hat[i] - f[i];
  auto f_st = ops::add(f, Tensor::from_data(f.shape(), std::move(delta)));
  auto im_hat = model.decode(f_st);
  const LossWeights w{model.config().lambda_perceptual, model.config().lambda_adversarial};
  return vqvae_loss(images, im_hat, f, f_hat, w, perceptual, adversarial);
}

double eval_recon(const VqVae& model, const Tensor& images) {
  NoGradGuard no_grad;
  const std::size_t n = std::min<std::size_t>(images.dim(0), 64);
  auto batch = batch_slice(images, 0, n);
  auto im_hat = model.decode_tokens(model.tokenize(batch));
  return ops::mean(ops::l2_norm_per_sample(ops::sub(batch, im_hat))).item();
}

}  // namespace

VqVaeTrainResult train_vqvae(VqVae& model, const Tensor& images, const VqVaeTrainConfig& cfg,
                             const ImageCriterion& perceptual, const ImageCriterion& adversarial) {
  expects(images.rank() == 4 && images.dim(0) > 0, "train_vqvae: dataset must be a nonempty [N, H, W, C] tensor");
  expects(cfg.batch >= 1 && cfg.lr >= 0.0, "train_vqvae: invalid trainer config");
  const std::size_t n = images.dim(0);
  const std::size_t batch = std::min(cfg.batch, n);
  const std::size_t per_epoch = std::max<std::size_t>(1, n / batch);
  const std::size_t log_every = cfg.log_every ? cfg.log_every : per_epoch;

  VqVaeTrainResult result;
  result.initial_recon = eval_recon(model, images);

  AdamConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt(model.parameters().tensors(), opt_cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  LossCurveRow window;
  std::size_t in_window = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    auto parts = forward_loss(model, batch_gather(images, rows), perceptual, adversarial);
    const double total = parts.total.item();
    if (!std::isfinite(total)) {
      throw NumericFailure("train_vqvae: non-finite loss at step " + std::to_string(step) +
                           " (recon=" + std::to_string(parts.recon) + ", latent=" + std::to_string(parts.latent) + ")");
    }
    opt.zero_grad();
    backward(parts.total);
    opt.step();

    window.total += total;
    window.recon += parts.recon;
    window.latent += parts.latent;
    window.perceptual += parts.perceptual;
    window.adversarial += parts.adversarial;
    ++in_window;
    if (step % log_every == 0 || step == cfg.steps) {
      const double k = static_cast<double>(in_window);
      result.curve.push_back({step, window.total / k, window.recon / k, window.latent / k, window.perceptual / k,
                              window.adversarial / k});
      window = {};
      in_window = 0;
    }
  }
  result.final_recon = eval_recon(model, images);
  return result;
}

std::string loss_curve_csv(const std::vector<LossCurveRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "step,total,recon,latent,perceptual,adversarial\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.total << ',' << r.recon << ',' << r.latent << ',' << r.perceptual << ','
       << r.adversarial << '\n';
  }
  return os.str();
}

}  // namespace varlab
