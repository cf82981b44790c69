#include "varlab/var/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/tokenizer/quantizer.hpp"
#include "varlab/tokenizer/vqvae.hpp"
#include "varlab/var/var_model.hpp"

namespace varlab {

void GenerationParams::validate(std::size_t vocab, std::size_t num_classes) const {
  expects(top_k <= vocab, "top-k " + std::to_string(top_k) + " exceeds vocabulary " + std::to_string(vocab));
  expects(std::isfinite(cfg) && cfg >= 0.0, "guidance scale must be finite and nonnegative");
  expects(class_label >= -1 && class_label <= static_cast<int>(num_classes),
          "class label " + std::to_string(class_label) + " out of range");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double position_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t position) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ position);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::vector<float> guide_logits(std::span<const float> conditional, std::span<const float> unconditional, double s) {
  expects(conditional.size() == unconditional.size(), "guide_logits: size mismatch");
  std::vector<float> g(conditional.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<float>(s * conditional[i] + (1.0 - s) * unconditional[i]);
  }
  return g;
}

int sample_top_k(std::span<const float> logits, std::size_t k, double u) {
  const std::size_t v = logits.size();
  expects(v >= 1, "sample_top_k: empty logits");
  std::vector<std::size_t> keep(v);
  std::iota(keep.begin(), keep.end(), 0);
  if (k > 0 && k < v) {
    std::partial_sort(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(k), keep.end(),
                      [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
    keep.resize(k);
    std::sort(keep.begin(), keep.end());
  }
  double mx = -INFINITY;
  for (auto i : keep) mx = std::max(mx, static_cast<double>(logits[i]));
  std::vector<double> w(keep.size());
  double z = 0.0;
  for (std::size_t i = 0; i < keep.size(); ++i) z += w[i] = std::exp(logits[keep[i]] - mx);
  double acc = 0.0;
  const double target = u * z;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    acc += w[i];
    if (target < acc) return static_cast<int>(keep[i]);
  }
  return static_cast<int>(keep.back());
}

namespace {

Tensor repeat_batch(const Tensor& x) {
  Shape s = x.shape();
  s[0] *= 2;
  std::vector<float> v(x.data().begin(), x.data().end());
  v.insert(v.end(), x.data().begin(), x.data().end());
  return Tensor::from_data(std::move(s), std::move(v));
}

}  // namespace

SampleResult sample_var(const VarModel& model, const VqVae& vqvae, const SampleOptions& options) {
  const auto& cfg = model.config();
  const auto& s = cfg.schedule;
  expects(vqvae.schedule() == s, "sample_var: tokenizer and model schedules differ");
  expects(vqvae.config().latent_channels == cfg.latent_channels && vqvae.config().vocab == cfg.vocab,
          "sample_var: tokenizer and model disagree on codebook shape");
  expects(options.count >= 1, "sample_var: count must be positive");
  const auto& params = options.params;
  params.validate(cfg.vocab, cfg.num_classes);
  if (options.forcing) {
    expects(options.forcing->size() == options.count, "sample_var: need one forcing record per sample");
    for (const auto& f : *options.forcing) {
      expects(f.values.schedule == s && f.generate.size() == s.size(), "sample_var: forcing does not match schedule");
      for (std::size_t k = 0; k < s.size(); ++k) {
        expects(f.generate[k].size() == s.tokens(k), "sample_var: forcing mask has wrong size at scale " + std::to_string(k));
      }
    }
  }
  NoGradGuard no_grad;

  const std::size_t b = options.count, vocab = cfg.vocab;
  const int label = params.class_label < 0 ? model.null_class() : params.class_label;
  const bool guided = label != model.null_class() && params.cfg != 1.0;
  std::vector<int> labels(b, label);
  if (guided) labels.insert(labels.end(), b, model.null_class());

  SampleResult result;
  result.tokens.assign(b, MultiScaleTokens{s, std::vector<std::vector<int>>(s.size()), vocab});
  ScaleAccumulator acc(vqvae.codebook(), vqvae.phi(), s, b);
  KvCache cache;
  std::vector<Tensor> inputs;

  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t n = s.tokens(k);
    Tensor in;
    if (k > 0) {
      in = acc.input_for(k);
      if (guided) in = repeat_batch(in);
    }
    Tensor logits;
    if (options.mode == CacheMode::cached) {
      logits = model.step(k, in, labels, cache, &result.trace);
    } else {
      if (k > 0) inputs.push_back(in);
      Tensor prefix = inputs.empty() ? Tensor{} : inputs.size() == 1 ? inputs.front() : ops::concat_seq(inputs);
      logits = model.forward(prefix, labels, nullptr, &result.trace);
    }
    ++result.iterations;

    const std::size_t len = logits.dim(1), first = len - n;
    auto row = [&](std::size_t batch, std::size_t p) {
      return logits.data().subspan(((batch * len) + first + p) * vocab, vocab);
    };
    std::vector<int> codes(b * n);
    std::vector<float> kept;
    if (options.keep_logits) kept.reserve(b * n * vocab);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t p = 0; p < n; ++p) {
        std::vector<float> g = guided ? guide_logits(row(i, p), row(b + i, p), params.cfg)
                                      : std::vector<float>(row(i, p).begin(), row(i, p).end());
        int code = sample_top_k(g, params.top_k, position_uniform(params.seed, i, s.offset(k) + p));
        if (options.forcing) {
          const auto& f = (*options.forcing)[i];
          if (!f.generate[k][p]) code = f.values.maps[k][p];
        }
        codes[i * n + p] = code;
        if (options.keep_logits) kept.insert(kept.end(), g.begin(), g.end());
      }
      result.tokens[i].maps[k].assign(codes.begin() + static_cast<std::ptrdiff_t>(i * n),
                                      codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    }
    if (options.keep_logits) result.logits.push_back(std::move(kept));
    acc.add(k, codes);
  }
  return result;
}

}  // namespace varlab
