#include "varlab/cli/config.hpp"

#include <set>

#include "varlab/errors.hpp"
#include "varlab/io/image_io.hpp"
#include "varlab/scaling/scaling.hpp"

namespace varlab::cli {

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& e : v) s += (s.empty() ? "" : "; ") + e;
  return s;
}

class Reader {
 public:
  Reader(const nlohmann::json& obj, std::string path, std::vector<std::string>& problems)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back((path_.empty() ? "<root>" : path_) + " (expected an object)");
  }
  ~Reader() {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) problems_.push_back(path_ + k + " (unknown key)");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    // json would quietly turn -1 into a huge size_t.
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned()) {
        problems_.push_back(path_ + key + " (expected a nonnegative integer)");
        return;
      }
    }
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(path_ + key + " (wrong type)");
    }
  }

  void schedule(const char* key, ScaleSchedule& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = schedule_from_json(obj_.at(key));
    } catch (const std::exception& e) {
      problems_.push_back(path_ + key + " (" + e.what() + ")");
    }
  }

  // Sub-object reader; null json if the key is absent.
  nlohmann::json section(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nlohmann::json::object();
    return obj_.at(key);
  }
  std::string path(const char* key) const { return path_ + key + "."; }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("config: " + join(problems)), problems_(std::move(problems)) {}

void ExperimentConfig::validate() const {
  std::vector<std::string> p;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const ContractViolation& e) {
      p.push_back(e.what());
    }
  };
  check([&] { dataset.validate(); });
  check([&] { vqvae.validate(); });
  check([&] { var.validate(); });
  check([&] { generation.validate(var.vocab, var.num_classes); });
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) p.push_back("test_fraction must be in (0, 1)");
  if (dataset.image_size != vqvae.image_size) p.push_back("dataset.image_size must equal vqvae.image_size");
  if (!(var.schedule == vqvae.schedule)) p.push_back("var.schedule must equal vqvae.schedule");
  if (var.vocab != vqvae.vocab) p.push_back("var.vocab must equal vqvae.vocab");
  if (var.latent_channels != vqvae.latent_channels) p.push_back("var.latent_channels must equal vqvae.latent_channels");
  if (var.num_classes != dataset.num_classes) p.push_back("var.num_classes must equal dataset.num_classes");
  if (train.steps == 0 || train.batch == 0) p.push_back("train.steps and train.batch must be positive");
  if (vqvae_train.steps == 0 || vqvae_train.batch == 0) p.push_back("vqvae_train.steps and vqvae_train.batch must be positive");
  if (sample_count == 0) p.push_back("sample_count must be positive");
  if (sweep.depths.empty() || sweep.seeds.empty()) p.push_back("sweep.depths and sweep.seeds must be nonempty");
  for (auto d : sweep.depths) {
    if (d == 0) p.push_back("sweep.depths entries must be positive");
  }
  check([&] { metric_from_name(sweep.metric); });
  if (!p.empty()) throw ConfigError(p);
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  std::vector<std::string> problems;
  {
    Reader r(j, "", problems);
    r.get("output_dir", c.output_dir);
    r.get("test_fraction", c.test_fraction);
    r.get("sample_count", c.sample_count);
    {
      const auto s = r.section("dataset");
      Reader d(s, r.path("dataset"), problems);
      d.get("image_size", c.dataset.image_size);
      d.get("num_classes", c.dataset.num_classes);
      d.get("samples_per_class", c.dataset.samples_per_class);
      d.get("seed", c.dataset.seed);
    }
    {
      const auto s = r.section("vqvae");
      Reader v(s, r.path("vqvae"), problems);
      v.get("image_size", c.vqvae.image_size);
      v.get("image_channels", c.vqvae.image_channels);
      v.get("hidden", c.vqvae.hidden);
      v.get("latent_channels", c.vqvae.latent_channels);
      v.get("vocab", c.vqvae.vocab);
      v.schedule("schedule", c.vqvae.schedule);
      v.get("bottleneck_attention", c.vqvae.bottleneck_attention);
      v.get("lambda_perceptual", c.vqvae.lambda_perceptual);
      v.get("lambda_adversarial", c.vqvae.lambda_adversarial);
      v.get("seed", c.vqvae.seed);
    }
    {
      const auto s = r.section("vqvae_train");
      Reader v(s, r.path("vqvae_train"), problems);
      v.get("steps", c.vqvae_train.steps);
      v.get("batch", c.vqvae_train.batch);
      v.get("lr", c.vqvae_train.lr);
      v.get("weight_decay", c.vqvae_train.weight_decay);
      v.get("seed", c.vqvae_train.seed);
      v.get("log_every", c.vqvae_train.log_every);
    }
    {
      const auto s = r.section("var");
      Reader v(s, r.path("var"), problems);
      v.get("depth", c.var.depth);
      v.get("width", c.var.width);
      v.get("heads", c.var.heads);
      v.schedule("schedule", c.var.schedule);
      v.get("vocab", c.var.vocab);
      v.get("latent_channels", c.var.latent_channels);
      v.get("num_classes", c.var.num_classes);
      v.get("dropout", c.var.dropout);
      v.get("qk_temperature", c.var.qk_temperature);
      v.get("init_std", c.var.init_std);
      v.get("seed", c.var.seed);
    }
    {
      const auto s = r.section("train");
      Reader t(s, r.path("train"), problems);
      t.get("steps", c.train.steps);
      t.get("batch", c.train.batch);
      t.get("lr", c.train.lr);
      t.get("warmup", c.train.warmup);
      t.get("min_lr_ratio", c.train.min_lr_ratio);
      t.get("weight_decay", c.train.weight_decay);
      t.get("label_drop", c.train.label_drop);
      t.get("seed", c.train.seed);
      t.get("eval_every", c.train.eval_every);
      t.get("eval_batch", c.train.eval_batch);
    }
    {
      const auto s = r.section("generation");
      Reader g(s, r.path("generation"), problems);
      g.get("top_k", c.generation.top_k);
      g.get("cfg", c.generation.cfg);
      g.get("seed", c.generation.seed);
      g.get("class_label", c.generation.class_label);
    }
    {
      const auto s = r.section("sweep");
      Reader w(s, r.path("sweep"), problems);
      w.get("depths", c.sweep.depths);
      w.get("seeds", c.sweep.seeds);
      w.get("metric", c.sweep.metric);
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  const auto text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  return parse_config(j);
}

nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch", t.batch},
          {"lr", t.lr},
          {"warmup", t.warmup},
          {"min_lr_ratio", t.min_lr_ratio},
          {"weight_decay", t.weight_decay},
          {"label_drop", t.label_drop},
          {"seed", t.seed},
          {"eval_every", t.eval_every},
          {"eval_batch", t.eval_batch}};
}

nlohmann::json generation_to_json(const GenerationParams& g) {
  return {{"top_k", g.top_k}, {"cfg", g.cfg}, {"seed", g.seed}, {"class_label", g.class_label}};
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  // Width and heads stay as written (0 = derive from depth) so a depth
  // override still resolves correctly.
  nlohmann::json var = c.var;
  var["width"] = c.var.width;
  var["heads"] = c.var.heads;
  return {{"output_dir", c.output_dir},
          {"test_fraction", c.test_fraction},
          {"sample_count", c.sample_count},
          {"dataset", c.dataset},
          {"vqvae", c.vqvae},
          {"vqvae_train",
           {{"steps", c.vqvae_train.steps},
            {"batch", c.vqvae_train.batch},
            {"lr", c.vqvae_train.lr},
            {"weight_decay", c.vqvae_train.weight_decay},
            {"seed", c.vqvae_train.seed},
            {"log_every", c.vqvae_train.log_every}}},
          {"var", var},
          {"train", train_config_to_json(c.train)},
          {"generation", generation_to_json(c.generation)},
          {"sweep", {{"depths", c.sweep.depths}, {"seeds", c.sweep.seeds}, {"metric", c.sweep.metric}}}};
}

}  // namespace varlab::cli
