#include "varlab/tokenizer/quantizer.hpp"

#include <limits>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"

namespace varlab {

Codebook Codebook::random(std::size_t vocab, std::size_t dim, double stddev, std::mt19937_64& rng) {
  expects(vocab >= 2, "codebook needs at least two entries");
  expects(dim >= 1, "codebook vectors need at least one dimension");
  return Codebook{nn::normal_parameter({vocab, dim}, stddev, rng)};
}

int quantize_nearest(std::span<const float> feature, const Codebook& codebook) {
  expects(codebook.vectors.defined() && codebook.vectors.numel() > 0, "quantize_nearest: empty codebook");
  const std::size_t c = codebook.dim();
  expects(feature.size() == c, "quantize_nearest: feature dimension does not match codebook");
  const float* z = codebook.vectors.data().data();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < codebook.vocab(); ++v) {
    double d = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double diff = static_cast<double>(z[v * c + j]) - feature[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(v);
    }
  }
  return best;
}

Tensor Refiner::operator()(const Tensor& z) const { return ops::add(z, conv(z)); }

PhiStack PhiStack::identity(std::size_t scales, std::size_t channels) {
  PhiStack p;
  for (std::size_t k = 0; k < scales; ++k) p.refiners_.push_back({nn::Conv2d::zeros(channels, channels, 3, 1)});
  return p;
}

nn::ParameterList PhiStack::parameters() const {
  nn::ParameterList p;
  for (std::size_t k = 0; k < refiners_.size(); ++k) p.append(refiners_[k].conv.parameters(), "phi" + std::to_string(k) + ".");
  return p;
}

namespace {

// lookup(Z, r_k) for a whole batch, upsampled and refined: [B, h_K, w_K, C].
Tensor refined_scale(const Codebook& codebook, const PhiStack& phi, const ScaleSchedule& s, std::size_t k,
                     std::size_t batch, std::span<const int> tokens) {
  const auto [h, w] = s[k];
  auto z = ops::embedding(codebook.vectors, tokens);
  z = ops::reshape(z, {batch, h, w, codebook.dim()});
  z = ops::resize_bilinear(z, s.last().h, s.last().w);
  return phi[k](z);
}

void check_inputs(const ScaleSchedule& s, const Codebook& codebook, const PhiStack& phi) {
  expects(!s.empty(), "empty scale schedule");
  expects(phi.size() == s.size(), "need one refiner per scale: " + std::to_string(phi.size()) + " vs " +
                                      std::to_string(s.size()));
  expects(codebook.vectors.defined() && codebook.vocab() >= 1, "empty codebook");
}

}  // namespace

EncodeResult encode_multiscale(const Tensor& f, const ScaleSchedule& schedule, const Codebook& codebook,
                               const PhiStack& phi) {
  check_inputs(schedule, codebook, phi);
  expects(f.rank() == 4, "encode_multiscale: feature map must be [B, h, w, C]");
  expects(f.dim(1) == schedule.last().h && f.dim(2) == schedule.last().w,
          "encode_multiscale: feature resolution " + std::to_string(f.dim(1)) + "x" + std::to_string(f.dim(2)) +
              " does not match the last scale");
  expects(f.dim(3) == codebook.dim(), "encode_multiscale: channel count does not match codebook");
  NoGradGuard no_grad;
  const std::size_t batch = f.dim(0), c = codebook.dim();
  EncodeResult out;
  out.tokens.assign(batch, MultiScaleTokens{schedule, std::vector<std::vector<int>>(schedule.size()), codebook.vocab()});
  Tensor residual = f.detach();
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto [h, w] = schedule[k];
    auto down = ops::resize_bilinear(residual, h, w);
    std::vector<int> codes(batch * h * w);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      codes[i] = quantize_nearest(down.data().subspan(i * c, c), codebook);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      out.tokens[b].maps[k].assign(codes.begin() + static_cast<std::ptrdiff_t>(b * h * w),
                                   codes.begin() + static_cast<std::ptrdiff_t>((b + 1) * h * w));
    }
    residual = ops::sub(residual, refined_scale(codebook, phi, schedule, k, batch, codes));
  }
  out.residual = residual;
  return out;
}

namespace {

std::vector<int> gather_scale(const std::vector<MultiScaleTokens>& tokens, std::size_t k) {
  std::vector<int> codes;
  for (const auto& t : tokens) codes.insert(codes.end(), t.maps[k].begin(), t.maps[k].end());
  return codes;
}

}  // namespace

Tensor reconstruct_features(const std::vector<MultiScaleTokens>& tokens, const Codebook& codebook,
                            const PhiStack& phi) {
  expects(!tokens.empty(), "reconstruct_features: empty batch");
  const auto& s = tokens.front().schedule;
  check_inputs(s, codebook, phi);
  for (const auto& t : tokens) {
    expects(t.schedule == s, "reconstruct_features: batch items use different schedules");
    expects(t.vocab <= codebook.vocab(), "reconstruct_features: token vocabulary exceeds codebook");
    t.validate();
  }
  Tensor f_hat;
  for (std::size_t k = 0; k < s.size(); ++k) {
    auto codes = gather_scale(tokens, k);
    auto part = refined_scale(codebook, phi, s, k, tokens.size(), codes);
    f_hat = f_hat.defined() ? ops::add(f_hat, part) : part;
  }
  return f_hat;
}

ScaleAccumulator::ScaleAccumulator(const Codebook& codebook, const PhiStack& phi, ScaleSchedule schedule,
                                   std::size_t batch)
    : codebook_(&codebook), phi_(&phi), schedule_(std::move(schedule)), batch_(batch) {
  check_inputs(schedule_, codebook, phi);
  f_hat_ = Tensor::zeros({batch_, schedule_.last().h, schedule_.last().w, codebook.dim()});
}

void ScaleAccumulator::add(std::size_t k, std::span<const int> tokens) {
  expects(k == added_, "ScaleAccumulator: scales must be added in order");
  expects(k < schedule_.size(), "ScaleAccumulator: scale index out of range");
  expects(tokens.size() == batch_ * schedule_.tokens(k), "ScaleAccumulator: wrong token count for scale");
  NoGradGuard no_grad;
  auto part = refined_scale(*codebook_, *phi_, schedule_, k, batch_, tokens);
  f_hat_ = added_ == 0 ? part : ops::add(f_hat_, part);
  ++added_;
}

Tensor ScaleAccumulator::input_for(std::size_t k) const {
  expects(k < schedule_.size(), "ScaleAccumulator: scale index out of range");
  NoGradGuard no_grad;
  const auto [h, w] = schedule_[k];
  auto x = ops::resize_bilinear(f_hat_, h, w);
  return ops::reshape(x, {batch_, h * w, codebook_->dim()});
}

Tensor teacher_forcing_inputs(const std::vector<MultiScaleTokens>& tokens, const Codebook& codebook,
                              const PhiStack& phi) {
  expects(!tokens.empty(), "teacher_forcing_inputs: empty batch");
  const auto& s = tokens.front().schedule;
  NoGradGuard no_grad;
  ScaleAccumulator acc(codebook, phi, s, tokens.size());
  std::vector<Tensor> parts;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    acc.add(k, gather_scale(tokens, k));
    parts.push_back(acc.input_for(k + 1));
  }
  if (parts.empty()) return Tensor::zeros({tokens.size(), 0, codebook.dim()});
  return ops::concat_seq(parts);
}

}  // namespace varlab
