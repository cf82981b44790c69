#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlab/data/dataset.hpp"
#include "varlab/tokenizer/vqvae.hpp"
#include "varlab/var/sampling.hpp"
#include "varlab/var/train.hpp"
#include "varlab/var/var_model.hpp"

namespace varlab::cli {

// Schema problems, one entry per offending key ("train.lrr (unknown key)").
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct SweepConfig {
  std::vector<std::size_t> depths{2, 3, 4};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string metric = "L_avg";
};

struct ExperimentConfig {
  std::string output_dir = "runs/default";
  DatasetSpec dataset;
  double test_fraction = 0.125;
  VqVaeConfig vqvae;
  VqVaeTrainConfig vqvae_train;
  VarConfig var;
  TrainConfig train{.steps = 80, .eval_every = 40};
  GenerationParams generation;
  std::size_t sample_count = 8;
  SweepConfig sweep;

  // Cross-section consistency (schedule, vocab, channels, classes).
  void validate() const;
};

// Missing keys keep their defaults; unknown keys and wrong types throw
// ConfigError listing every problem at once.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& c);

nlohmann::json train_config_to_json(const TrainConfig& t);
nlohmann::json generation_to_json(const GenerationParams& g);

}  // namespace varlab::cli
