#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "varlab/io/metrics.hpp"
#include "varlab/tokenizer/schedule.hpp"
#include "varlab/var/ar_model.hpp"
#include "varlab/var/var_model.hpp"

namespace varlab {

class VqVae;

struct TokenDataset {
  std::vector<MultiScaleTokens> tokens;
  std::vector<int> labels;

  std::size_t size() const { return tokens.size(); }
  void validate() const;
};

// Tokenizes images [N, H, W, 3] with a frozen VQVAE.
TokenDataset tokenize_dataset(const VqVae& vqvae, const Tensor& images, const std::vector<int>& labels,
                              std::size_t batch = 64);

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::size_t warmup = 20;
  double min_lr_ratio = 0.1;  // cosine decay floor
  double weight_decay = 0.05;
  double label_drop = 0.1;    // chance a sample trains as the null class
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate at the last step only
  std::size_t eval_batch = 64;
  std::string model_id = "model";
};

double learning_rate_at(const TrainConfig& cfg, std::size_t step);

struct EvalMetrics {
  double l_last = 0.0;
  double l_avg = 0.0;
  double err_last = 0.0;
  double err_avg = 0.0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::vector<double> train_loss;  // per step
  EvalMetrics final_eval;
};

// Teacher-forced cross entropy over all scales. Aborts with NumericFailure
// on a non-finite loss.
TrainResult train_var(VarModel& model, const VqVae& vqvae, const TokenDataset& train, const TokenDataset& test,
                      const TrainConfig& cfg);
EvalMetrics eval_var(const VarModel& model, const VqVae& vqvae, const TokenDataset& data, std::size_t batch = 64);

TrainResult train_ar(ArModel& model, const TokenDataset& train, const TokenDataset& test, const TrainConfig& cfg);
EvalMetrics eval_ar(const ArModel& model, const TokenDataset& data, std::size_t batch = 64);

// log p(R | class) decomposed by scale and by token.
struct LogProbability {
  std::vector<double> per_token;
  std::vector<double> per_scale;
  double total = 0.0;
};
LogProbability var_log_probability(const VarModel& model, const VqVae& vqvae, const MultiScaleTokens& tokens,
                                   int label);

struct CacheCheck {
  bool ok = true;
  double max_abs_diff = 0.0;
  // First position whose difference exceeds the tolerance, if any.
  std::size_t scale = 0;
  std::size_t position = 0;
  std::string message;
};

// Samples a sequence, then compares cached stepwise logits against one
// masked full-sequence pass over the same tokens.
CacheCheck cached_equals_uncached(const VarModel& model, const VqVae& vqvae, std::uint64_t seed,
                                  double tolerance = 1e-5);

}  // namespace varlab
