#include "varlab/var/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/numerics/optim.hpp"
#include "varlab/tokenizer/quantizer.hpp"
#include "varlab/tokenizer/vqvae.hpp"

namespace varlab {

void TokenDataset::validate() const {
  expects(tokens.size() == labels.size(), "token dataset: one label per sample required");
  for (const auto& t : tokens) t.validate();
  if (!tokens.empty()) {
    for (const auto& t : tokens) expects(t.schedule == tokens.front().schedule, "token dataset: mixed schedules");
  }
}

TokenDataset tokenize_dataset(const VqVae& vqvae, const Tensor& images, const std::vector<int>& labels,
                              std::size_t batch) {
  expects(images.rank() == 4 && images.dim(0) == labels.size(), "tokenize_dataset: one label per image required");
  TokenDataset out;
  out.labels = labels;
  for (std::size_t i = 0; i < images.dim(0); i += batch) {
    const std::size_t n = std::min(batch, images.dim(0) - i);
    auto t = vqvae.tokenize(batch_slice(images, i, n));
    out.tokens.insert(out.tokens.end(), t.begin(), t.end());
  }
  return out;
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup > 0 && step <= cfg.warmup) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  }
  if (cfg.steps <= cfg.warmup) return cfg.lr;
  const double progress =
      static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

namespace {

// Teacher-forcing features for a whole dataset: [N, T - n_0, C], or an
// undefined tensor when the schedule has a single scale.
Tensor dataset_inputs(const VqVae& vqvae, const TokenDataset& data) {
  const auto& s = vqvae.schedule();
  if (s.size() == 1 || data.size() == 0) return {};
  std::vector<float> all;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < data.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - i);
    std::vector<MultiScaleTokens> chunk(data.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                        data.tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    auto x = teacher_forcing_inputs(chunk, vqvae.codebook(), vqvae.phi());
    all.insert(all.end(), x.data().begin(), x.data().end());
  }
  return Tensor::from_data({data.size(), s.total_tokens() - s.tokens(0), vqvae.config().latent_channels},
                           std::move(all));
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  return x.defined() ? batch_gather(x, rows) : Tensor{};
}

std::vector<int> gather_targets(const TokenDataset& data, const std::vector<std::size_t>& rows) {
  std::vector<int> t;
  for (auto r : rows) {
    auto f = data.tokens[r].flatten();
    t.insert(t.end(), f.begin(), f.end());
  }
  return t;
}

// r_K tokens for the AR baseline: inputs drop the last token of each row.
std::vector<int> last_scale(const TokenDataset& data, const std::vector<std::size_t>& rows, bool drop_last) {
  std::vector<int> t;
  for (auto r : rows) {
    const auto& m = data.tokens[r].maps.back();
    t.insert(t.end(), m.begin(), drop_last ? m.end() - 1 : m.end());
  }
  return t;
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed), cursor_(n) {
    std::iota(order_.begin(), order_.end(), 0);
  }
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      rows.push_back(order_[cursor_++]);
    }
    return rows;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_;
};

struct MetricSums {
  double nll_last = 0.0, nll_all = 0.0;
  std::size_t wrong_last = 0, wrong_all = 0, n_last = 0, n_all = 0;

  void add(const ops::CrossEntropyResult& r, std::size_t per_sample, std::size_t last_begin) {
    for (std::size_t i = 0; i < r.nll.size(); ++i) {
      const bool last = i % per_sample >= last_begin;
      nll_all += r.nll[i];
      wrong_all += r.correct[i] ? 0 : 1;
      ++n_all;
      if (last) {
        nll_last += r.nll[i];
        wrong_last += r.correct[i] ? 0 : 1;
        ++n_last;
      }
    }
  }
  EvalMetrics metrics() const {
    return {nll_last / static_cast<double>(n_last), nll_all / static_cast<double>(n_all),
            static_cast<double>(wrong_last) / static_cast<double>(n_last),
            static_cast<double>(wrong_all) / static_cast<double>(n_all)};
  }
};

void check_finite(double loss, std::size_t step, double lr, const std::string& id) {
  if (!std::isfinite(loss)) {
    throw NumericFailure(id + ": non-finite training loss at step " + std::to_string(step) +
                         " (lr=" + std::to_string(lr) + ")");
  }
}

MetricsRow make_row(const TrainConfig& cfg, std::size_t d, std::size_t n, std::size_t step, std::size_t tokens,
                    const EvalMetrics& m) {
  return {cfg.model_id, d, n, step, tokens, training_compute_pflops(n, tokens), m.l_last, m.l_avg, m.err_last,
          m.err_avg};
}

AdamConfig optimizer_config(const TrainConfig& cfg) {
  AdamConfig a;
  a.lr = cfg.lr;
  a.weight_decay = cfg.weight_decay;
  return a;
}

void check_train_config(const TrainConfig& cfg, const TokenDataset& train) {
  expects(train.size() > 0, "training set is empty");
  train.validate();
  expects(cfg.batch >= 1 && cfg.lr >= 0.0, "invalid trainer config");
  expects(cfg.label_drop >= 0.0 && cfg.label_drop <= 1.0, "label drop must be a probability");
}

}  // namespace

EvalMetrics eval_var(const VarModel& model, const VqVae& vqvae, const TokenDataset& data, std::size_t batch) {
  expects(data.size() > 0, "eval_var: empty evaluation set");
  NoGradGuard no_grad;
  const auto& s = model.config().schedule;
  auto inputs = dataset_inputs(vqvae, data);
  MetricSums sums;
  for (std::size_t i = 0; i < data.size(); i += batch) {
    std::vector<std::size_t> rows(std::min(batch, data.size() - i));
    std::iota(rows.begin(), rows.end(), i);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(data.labels[r]);
    auto logits = model.forward(gather_rows(inputs, rows), labels);
    auto targets = gather_targets(data, rows);
    sums.add(ops::cross_entropy_stats<float>(logits.data(), model.config().vocab, targets), s.total_tokens(),
             s.offset(s.size() - 1));
  }
  return sums.metrics();
}

TrainResult train_var(VarModel& model, const VqVae& vqvae, const TokenDataset& train, const TokenDataset& test,
                      const TrainConfig& cfg) {
  check_train_config(cfg, train);
  const auto& s = model.config().schedule;
  expects(vqvae.schedule() == s, "train_var: tokenizer and model schedules differ");
  const auto inputs = dataset_inputs(vqvae, train);
  const TokenDataset& eval_set = test.size() > 0 ? test : train;

  AdamW opt(model.parameters().tensors(), optimizer_config(cfg));
  BatchSampler sampler(train.size(), cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x5eedULL);
  std::bernoulli_distribution drop(cfg.label_drop);
  const std::size_t batch = std::min(cfg.batch, train.size());
  const std::size_t n_params = model.core_parameter_count();

  TrainResult result;
  std::size_t tokens_seen = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto rows = sampler.next(batch);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(drop(sampler.rng()) ? model.null_class() : train.labels[r]);
    const double lr = learning_rate_at(cfg, step);
    opt.set_lr(lr);
    auto logits = model.forward(gather_rows(inputs, rows), labels, &dropout_rng);
    auto targets = gather_targets(train, rows);
    auto ce = ops::softmax_cross_entropy(logits, targets);
    const double loss = ce.loss.item();
    check_finite(loss, step, lr, cfg.model_id);
    opt.zero_grad();
    backward(ce.loss);
    opt.step();
    result.train_loss.push_back(loss);
    tokens_seen += targets.size();
    if ((cfg.eval_every && step % cfg.eval_every == 0) || step == cfg.steps) {
      result.final_eval = eval_var(model, vqvae, eval_set, cfg.eval_batch);
      result.metrics.push_back(make_row(cfg, model.config().depth, n_params, step, tokens_seen, result.final_eval));
    }
  }
  if (cfg.steps == 0) result.final_eval = eval_var(model, vqvae, eval_set, cfg.eval_batch);
  return result;
}

EvalMetrics eval_ar(const ArModel& model, const TokenDataset& data, std::size_t batch) {
  expects(data.size() > 0, "eval_ar: empty evaluation set");
  NoGradGuard no_grad;
  MetricSums sums;
  for (std::size_t i = 0; i < data.size(); i += batch) {
    std::vector<std::size_t> rows(std::min(batch, data.size() - i));
    std::iota(rows.begin(), rows.end(), i);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(data.labels[r]);
    auto logits = model.forward(last_scale(data, rows, true), labels);
    auto targets = last_scale(data, rows, false);
    sums.add(ops::cross_entropy_stats<float>(logits.data(), model.config().vocab, targets), model.sequence_length(), 0);
  }
  return sums.metrics();
}

TrainResult train_ar(ArModel& model, const TokenDataset& train, const TokenDataset& test, const TrainConfig& cfg) {
  check_train_config(cfg, train);
  expects(train.tokens.front().schedule.last() == model.config().schedule.last(),
          "train_ar: token grid does not match the model");
  const TokenDataset& eval_set = test.size() > 0 ? test : train;
  AdamW opt(model.parameters().tensors(), optimizer_config(cfg));
  BatchSampler sampler(train.size(), cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x5eedULL);
  std::bernoulli_distribution drop(cfg.label_drop);
  const std::size_t batch = std::min(cfg.batch, train.size());
  const std::size_t n_params = model.core().core_parameter_count();

  TrainResult result;
  std::size_t tokens_seen = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto rows = sampler.next(batch);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(drop(sampler.rng()) ? model.null_class() : train.labels[r]);
    const double lr = learning_rate_at(cfg, step);
    opt.set_lr(lr);
    auto logits = model.forward(last_scale(train, rows, true), labels, &dropout_rng);
    auto targets = last_scale(train, rows, false);
    auto ce = ops::softmax_cross_entropy(logits, targets);
    const double loss = ce.loss.item();
    check_finite(loss, step, lr, cfg.model_id);
    opt.zero_grad();
    backward(ce.loss);
    opt.step();
    result.train_loss.push_back(loss);
    tokens_seen += targets.size();
    if ((cfg.eval_every && step % cfg.eval_every == 0) || step == cfg.steps) {
      result.final_eval = eval_ar(model, eval_set, cfg.eval_batch);
      result.metrics.push_back(make_row(cfg, model.config().depth, n_params, step, tokens_seen, result.final_eval));
    }
  }
  if (cfg.steps == 0) result.final_eval = eval_ar(model, eval_set, cfg.eval_batch);
  return result;
}

LogProbability var_log_probability(const VarModel& model, const VqVae& vqvae, const MultiScaleTokens& tokens,
                                   int label) {
  const auto& s = model.config().schedule;
  expects(tokens.schedule == s, "var_log_probability: schedule mismatch");
  NoGradGuard no_grad;
  TokenDataset one{{tokens}, {label}};
  auto logits = model.forward(dataset_inputs(vqvae, one), one.labels);
  auto flat = tokens.flatten();
  auto stats = ops::cross_entropy_stats<float>(logits.data(), model.config().vocab, flat);
  LogProbability lp;
  lp.per_scale.assign(s.size(), 0.0);
  const auto ids = s.block_ids();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    lp.per_token.push_back(-stats.nll[i]);
    lp.per_scale[static_cast<std::size_t>(ids[i])] += -stats.nll[i];
    lp.total += -stats.nll[i];
  }
  return lp;
}

CacheCheck cached_equals_uncached(const VarModel& model, const VqVae& vqvae, std::uint64_t seed, double tolerance) {
  const auto& cfg = model.config();
  const auto& s = cfg.schedule;
  SampleOptions opt;
  opt.params.seed = seed;
  opt.params.class_label = static_cast<int>(seed % cfg.num_classes);
  auto sampled = sample_var(model, vqvae, opt);
  const auto& tokens = sampled.tokens.front();
  const std::vector<int> labels{opt.params.class_label};

  NoGradGuard no_grad;
  TokenDataset one{{tokens}, labels};
  auto full = model.forward(dataset_inputs(vqvae, one), labels);

  CacheCheck report;
  KvCache cache;
  ScaleAccumulator acc(vqvae.codebook(), vqvae.phi(), s, 1);
  const std::size_t vocab = cfg.vocab;
  for (std::size_t k = 0; k < s.size(); ++k) {
    auto step = model.step(k, k == 0 ? Tensor{} : acc.input_for(k), labels, cache);
    for (std::size_t p = 0; p < s.tokens(k); ++p) {
      for (std::size_t v = 0; v < vocab; ++v) {
        const double diff = std::abs(static_cast<double>(step[p * vocab + v]) - full[(s.offset(k) + p) * vocab + v]);
        if (diff > report.max_abs_diff) report.max_abs_diff = diff;
        if (report.ok && !(diff <= tolerance)) {
          report.ok = false;
          report.scale = k;
          report.position = p;
          report.message = "cached logits diverge at scale " + std::to_string(k) + ", position " + std::to_string(p) +
                           " (|diff| = " + std::to_string(diff) + ")";
        }
      }
    }
    acc.add(k, tokens.maps[k]);
  }
  return report;
}

}  // namespace varlab
