#include "varlab/var/ar_model.hpp"

#include <numeric>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"

namespace varlab {

ArModel::ArModel(VarConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t w = cfg_.resolved_width();
  core_ = TransformerCore(cfg_.transformer_shape(), rng);
  class_emb_ = nn::normal_parameter({cfg_.num_classes + 1, w}, cfg_.init_std, rng);
  token_emb_ = nn::normal_parameter({cfg_.vocab, w}, cfg_.init_std, rng);
  pos_emb_ = nn::normal_parameter({sequence_length(), w}, cfg_.init_std, rng);
}

// tokens: batch-major, one entry per (sample, non-start position).
Tensor ArModel::embed(std::span<const int> tokens, std::span<const int> labels, std::size_t first,
                      std::size_t len) const {
  const std::size_t b = labels.size(), w = cfg_.resolved_width();
  for (int l : labels) expects(l >= 0 && l <= null_class(), "ar: class label " + std::to_string(l) + " out of range");
  std::vector<Tensor> parts;
  if (first == 0) parts.push_back(ops::reshape(ops::embedding(class_emb_, labels), {b, 1, w}));
  const std::size_t n_tokens = len - (first == 0 ? 1 : 0);
  if (n_tokens > 0) {
    expects(tokens.size() == b * n_tokens, "ar: expected " + std::to_string(b * n_tokens) + " input tokens");
    for (int t : tokens) {
      expects(t >= 0 && static_cast<std::size_t>(t) < cfg_.vocab, "ar: token " + std::to_string(t) + " out of range");
    }
    parts.push_back(ops::reshape(ops::embedding(token_emb_, tokens), {b, n_tokens, w}));
  }
  auto x = parts.size() == 1 ? parts.front() : ops::concat_seq(parts);
  std::vector<int> pos(len);
  std::iota(pos.begin(), pos.end(), static_cast<int>(first));
  return ops::add_broadcast(x, ops::embedding(pos_emb_, pos));
}

Tensor ArModel::forward(std::span<const int> prefix, std::span<const int> labels, std::mt19937_64* dropout_rng,
                        AttentionTrace* trace) const {
  expects(!labels.empty(), "ar: empty batch");
  const std::size_t b = labels.size();
  expects(prefix.size() % b == 0, "ar: prefix length not divisible by batch");
  const std::size_t m = prefix.size() / b;
  expects(m < sequence_length(), "ar: prefix longer than the sequence");
  auto x = embed(prefix, labels, 0, m + 1);
  std::vector<int> ids(m + 1);
  std::iota(ids.begin(), ids.end(), 0);
  return core_.forward(x, ops::embedding(class_emb_, labels), ids, dropout_rng, trace);
}

Tensor ArModel::step(std::size_t t, std::span<const int> previous, std::span<const int> labels, KvCache& cache,
                     AttentionTrace* trace) const {
  expects(t < sequence_length(), "ar: position out of range");
  expects(cache.length() == t, "ar: cache length does not match position");
  auto x = t == 0 ? embed({}, labels, 0, 1) : embed(previous, labels, t, 1);
  return core_.forward_cached(x, ops::embedding(class_emb_, labels), cache, trace);
}

nn::ParameterList ArModel::parameters() const {
  nn::ParameterList p;
  p.add("class_emb", class_emb_);
  p.add("token_emb", token_emb_);
  p.add("pos_emb", pos_emb_);
  p.append(core_.parameters(), "");
  return p;
}

ArSampleResult sample_ar(const ArModel& model, const GenerationParams& params, std::size_t count, CacheMode mode) {
  const auto& cfg = model.config();
  params.validate(cfg.vocab, cfg.num_classes);
  expects(count >= 1, "sample_ar: count must be positive");
  NoGradGuard no_grad;
  const int label = params.class_label < 0 ? model.null_class() : params.class_label;
  const bool guided = label != model.null_class() && params.cfg != 1.0;
  std::vector<int> labels(count, label);
  if (guided) labels.insert(labels.end(), count, model.null_class());
  const std::size_t rows = labels.size(), len = model.sequence_length(), vocab = cfg.vocab;

  ArSampleResult result;
  result.tokens.assign(count, {});
  KvCache cache;
  for (std::size_t t = 0; t < len; ++t) {
    Tensor logits;
    if (mode == CacheMode::cached) {
      std::vector<int> prev;
      if (t > 0) {
        for (std::size_t r = 0; r < rows; ++r) prev.push_back(result.tokens[r % count][t - 1]);
      }
      logits = model.step(t, prev, labels, cache, &result.trace);
    } else {
      std::vector<int> prefix;
      for (std::size_t r = 0; r < rows; ++r) {
        const auto& seq = result.tokens[r % count];
        prefix.insert(prefix.end(), seq.begin(), seq.end());
      }
      logits = model.forward(prefix, labels, nullptr, &result.trace);
    }
    ++result.iterations;
    const std::size_t width = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      auto c = logits.data().subspan((i * width + width - 1) * vocab, vocab);
      std::vector<float> g = guided ? guide_logits(c, logits.data().subspan(((count + i) * width + width - 1) * vocab, vocab), params.cfg)
                                    : std::vector<float>(c.begin(), c.end());
      result.tokens[i].push_back(sample_top_k(g, params.top_k, position_uniform(params.seed, i, t)));
    }
  }
  return result;
}

}  // namespace varlab
