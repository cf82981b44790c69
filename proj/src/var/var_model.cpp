#include "varlab/var/var_model.hpp"

#include <numeric>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/tokenizer/vqvae.hpp"

namespace varlab {

VarConfig VarConfig::desk(std::size_t d) {
  VarConfig c;
  c.depth = d;
  return c;
}

TransformerShape VarConfig::transformer_shape() const {
  TransformerShape s;
  s.depth = depth;
  s.width = resolved_width();
  s.heads = resolved_heads();
  s.vocab = vocab;
  s.qk_temperature = qk_temperature;
  s.dropout = dropout;
  s.init_std = init_std;
  return s;
}

void VarConfig::validate() const {
  transformer_shape().validate();
  expects(!schedule.empty(), "var: empty scale schedule");
  expects(num_classes >= 1, "var: need at least one class");
  expects(latent_channels >= 1, "var: latent channels must be positive");
}

void to_json(nlohmann::json& j, const VarConfig& c) {
  j = {{"depth", c.depth},
       {"width", c.resolved_width()},
       {"heads", c.resolved_heads()},
       {"schedule", schedule_to_json(c.schedule)},
       {"vocab", c.vocab},
       {"latent_channels", c.latent_channels},
       {"num_classes", c.num_classes},
       {"dropout", c.dropout},
       {"qk_temperature", c.qk_temperature},
       {"init_std", c.init_std},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, VarConfig& c) {
  c = VarConfig{};
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  c.vocab = j.value("vocab", c.vocab);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout = j.value("dropout", c.dropout);
  c.qk_temperature = j.value("qk_temperature", c.qk_temperature);
  c.init_std = j.value("init_std", c.init_std);
  c.seed = j.value("seed", c.seed);
}

VarModel::VarModel(VarConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t w = cfg_.resolved_width();
  core_ = TransformerCore(cfg_.transformer_shape(), rng);
  class_emb_ = nn::normal_parameter({cfg_.num_classes + 1, w}, cfg_.init_std, rng);
  pos_emb_ = nn::normal_parameter({sequence_length(), w}, cfg_.init_std, rng);
  level_emb_ = nn::normal_parameter({cfg_.schedule.size(), w}, cfg_.init_std, rng);
  word_embed_ = nn::Linear(cfg_.latent_channels, w, true, cfg_.init_std, rng);
}

Tensor VarModel::condition(std::span<const int> labels) const {
  for (int l : labels) {
    expects(l >= 0 && l <= null_class(), "var: class label " + std::to_string(l) + " outside [0, " +
                                             std::to_string(cfg_.num_classes) + "]");
  }
  return ops::embedding(class_emb_, labels);
}

Tensor VarModel::embed(const Tensor& scale_inputs, std::span<const int> labels, std::size_t first_scale,
                       std::size_t end_scale) const {
  const auto& s = cfg_.schedule;
  const std::size_t b = labels.size(), w = cfg_.resolved_width();
  std::vector<Tensor> parts;
  if (first_scale == 0) {
    std::vector<int> rows;
    for (int l : labels) rows.insert(rows.end(), s.tokens(0), l);
    parts.push_back(ops::reshape(ops::embedding(class_emb_, rows), {b, s.tokens(0), w}));
  }
  const std::size_t from = std::max<std::size_t>(first_scale, 1);
  if (end_scale > from) {
    const std::size_t len = s.offset(end_scale) - s.offset(from);
    expects(scale_inputs.defined() && scale_inputs.rank() == 3 && scale_inputs.dim(0) == b &&
                scale_inputs.dim(1) == len && scale_inputs.dim(2) == cfg_.latent_channels,
            "var: scale inputs must be [" + std::to_string(b) + ", " + std::to_string(len) + ", " +
                std::to_string(cfg_.latent_channels) + "]");
    parts.push_back(word_embed_(scale_inputs));
  }
  auto x = parts.size() == 1 ? parts.front() : ops::concat_seq(parts);

  const std::size_t p0 = s.offset(first_scale), p1 = s.offset(end_scale);
  std::vector<int> pos(p1 - p0), level;
  std::iota(pos.begin(), pos.end(), static_cast<int>(p0));
  const auto ids = s.block_ids();
  level.assign(ids.begin() + static_cast<std::ptrdiff_t>(p0), ids.begin() + static_cast<std::ptrdiff_t>(p1));
  auto where = ops::add(ops::embedding(pos_emb_, pos), ops::embedding(level_emb_, level));
  return ops::add_broadcast(x, where);
}

Tensor VarModel::forward(const Tensor& scale_inputs, std::span<const int> labels, std::mt19937_64* dropout_rng,
                         AttentionTrace* trace) const {
  const auto& s = cfg_.schedule;
  expects(!labels.empty(), "var: empty batch");
  const std::size_t len = scale_inputs.defined() && scale_inputs.rank() == 3 ? scale_inputs.dim(1) : 0;
  std::size_t m = 0;
  for (std::size_t k = 1; k <= s.size(); ++k) {
    if (s.offset(k) - s.tokens(0) == len) {
      m = k;
      break;
    }
  }
  expects(m > 0, "var: " + std::to_string(len) + " input positions do not end on a scale boundary");
  auto x = embed(scale_inputs, labels, 0, m);
  auto ids = s.block_ids();
  ids.resize(s.offset(m));
  return core_.forward(x, condition(labels), ids, dropout_rng, trace);
}

Tensor VarModel::step(std::size_t k, const Tensor& scale_input, std::span<const int> labels, KvCache& cache,
                      AttentionTrace* trace) const {
  const auto& s = cfg_.schedule;
  expects(k < s.size(), "var: scale index out of range");
  expects(cache.length() == s.offset(k), "var: cache holds " + std::to_string(cache.length()) +
                                             " positions, scale " + std::to_string(k) + " starts at " +
                                             std::to_string(s.offset(k)));
  auto x = embed(scale_input, labels, k, k + 1);
  return core_.forward_cached(x, condition(labels), cache, trace);
}

nn::ParameterList VarModel::parameters() const {
  nn::ParameterList p;
  p.add("class_emb", class_emb_);
  p.add("pos_emb", pos_emb_);
  p.add("level_emb", level_emb_);
  p.append(word_embed_.parameters(), "word_embed.");
  p.append(core_.parameters(), "");
  return p;
}

std::uint64_t imagenet_parameter_estimate(std::uint64_t d) {
  const std::uint64_t w = 64 * d, vocab = 4096, classes = 1000, tokens = 680, scales = 10, c = 32;
  const std::uint64_t embeddings = (classes + 1) * w + tokens * w + scales * w + (c * w + w);
  const std::uint64_t final_ada = 2 * w * w;
  const std::uint64_t head = w * vocab + vocab;
  return n_of_d(d) + embeddings + final_ada + head;
}

}  // namespace varlab
