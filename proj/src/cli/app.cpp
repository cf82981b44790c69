#include "varlab/cli/app.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <omp.h>

#include "varlab/cli/config.hpp"
#include "varlab/complexity/complexity.hpp"
#include "varlab/data/dataset.hpp"
#include "varlab/errors.hpp"
#include "varlab/generation/zero_shot.hpp"
#include "varlab/io/checkpoint.hpp"
#include "varlab/io/image_io.hpp"
#include "varlab/io/metrics.hpp"
#include "varlab/io/tokens_io.hpp"
#include "varlab/scaling/scaling.hpp"
#include "varlab/var/ar_model.hpp"
#include "varlab/var/train.hpp"

namespace varlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Artifact layout under output_dir.

struct Layout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path vqvae_dir() const { return root / "vqvae"; }
  fs::path vqvae_ckpt() const { return vqvae_dir() / "vqvae.json"; }
  fs::path tokens() const { return vqvae_dir() / "tokens.json"; }
  fs::path var_dir(std::size_t d, std::uint64_t seed) const {
    return root / ("var_d" + std::to_string(d) + "_s" + std::to_string(seed));
  }
  fs::path ar_dir(std::uint64_t seed) const { return root / ("ar_s" + std::to_string(seed)); }
  fs::path sweep() const { return root / "sweep"; }
};

std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }

std::string text_hash(const std::string& s) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// manifest.json: the resolved config and flags are enough to rerun the
// command; content_hash covers them plus every input file.
json write_manifest(const fs::path& dir, const std::string& command, const json& config, const json& flags,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json in = json::object(), out = json::object();
  std::string material = command + "\n" + config.dump() + "\n" + flags.dump() + "\n";
  for (const auto& p : inputs) {
    const auto h = file_hash(p);
    in[p.lexically_relative(dir).generic_string()] = h;
    material += h + "\n";
  }
  for (const auto& p : outputs) out[p.lexically_relative(dir).generic_string()] = file_hash(p);
  json m = {{"command", command},
            {"config", config},
            {"flags", flags},
            {"inputs", in},
            {"outputs", out},
            {"content_hash", text_hash(material)}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

std::optional<std::string> manifest_hash(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) return std::nullopt;
  try {
    return json::parse(read_text(dir / "manifest.json")).at("content_hash").get<std::string>();
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Loading stored artifacts.

Dataset load_data(const Layout& l, const ExperimentConfig& cfg) {
  if (!fs::exists(l.data() / "dataset.json")) {
    throw DataError("no dataset at " + l.data().string() + "; run gen-data first");
  }
  auto ds = load_dataset(l.data());
  if (!(ds.spec == cfg.dataset)) throw DataError("dataset at " + l.data().string() + " was made from another spec");
  return ds;
}

VqVae load_vqvae(const fs::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.kind != "vqvae") throw DataError(path.string() + " holds a " + ck.kind + " checkpoint, not a vqvae");
  VqVae vq(ck.config.get<VqVaeConfig>());
  restore_parameters(ck, vq.parameters());
  return vq;
}

VarModel load_var(const fs::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.kind != "var") throw DataError(path.string() + " holds a " + ck.kind + " checkpoint, not a var model");
  VarModel m(ck.config.get<VarConfig>());
  restore_parameters(ck, m.parameters());
  return m;
}

ArModel load_ar(const fs::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.kind != "ar") throw DataError(path.string() + " holds a " + ck.kind + " checkpoint, not an ar model");
  ArModel m(ck.config.get<VarConfig>());
  restore_parameters(ck, m.parameters());
  return m;
}

json token_set_to_json(const TokenDataset& d) {
  return {{"labels", d.labels}, {"tokens", token_batch_to_json(d.tokens)}};
}

TokenDataset token_set_from_json(const json& j) {
  TokenDataset d;
  try {
    d.labels = j.at("labels").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("tokens file: ") + e.what());
  }
  d.tokens = token_batch_from_json(j.at("tokens"));
  if (d.labels.size() != d.tokens.size()) throw DataError("tokens file: label and token counts differ");
  return d;
}

struct TokenSplits {
  TokenDataset train, test;
};

TokenSplits load_tokens(const Layout& l) {
  if (!fs::exists(l.tokens())) throw DataError("no token file at " + l.tokens().string() + "; run train-vqvae first");
  json j;
  try {
    j = json::parse(read_text(l.tokens()));
  } catch (const json::parse_error& e) {
    throw ParseError(l.tokens().string() + ": " + e.what(), e.byte);
  }
  return {token_set_from_json(j.at("train")), token_set_from_json(j.at("test"))};
}

// ---------------------------------------------------------------------------
// Subcommands.

struct Context {
  ExperimentConfig cfg;
  Layout layout;
  std::ostream& out;
  std::ostream& err;
};

fs::path run_gen_data(Context& c) {
  const auto ds = generate_dataset(c.cfg.dataset);
  save_dataset(c.layout.data(), ds);
  std::vector<fs::path> outputs{c.layout.data() / "images.bin", c.layout.data() / "dataset.json"};
  for (std::size_t k = 0; k < ds.spec.num_classes && k < ds.size(); ++k) {
    const auto p = c.layout.data() / "preview" / ("class" + std::to_string(k) + ".ppm");
    write_ppm(p, ds.images[k]);
    outputs.push_back(p);
  }
  write_manifest(c.layout.data(), "gen-data", config_to_json(c.cfg), json::object(), {}, outputs);
  const auto m = dataset_manifest(ds);
  c.out << "dataset " << m.at("count") << " images, checksum " << m.at("checksum").get<std::string>() << "\n";
  return c.layout.data();
}

void run_train_vqvae(Context& c) {
  const auto ds = load_data(c.layout, c.cfg);
  const auto split = split_dataset(ds, c.cfg.test_fraction);
  VqVae vq(c.cfg.vqvae);
  const auto train_images = images_to_tensor(ds.images, split.train);
  c.err << "training vqvae: " << c.cfg.vqvae_train.steps << " steps on " << split.train.size() << " images\n";
  const auto res = train_vqvae(vq, train_images, c.cfg.vqvae_train);
  c.err << "vqvae recon " << res.initial_recon << " -> " << res.final_recon << "\n";

  const auto dir = c.layout.vqvae_dir();
  save_checkpoint(c.layout.vqvae_ckpt(), "vqvae", c.cfg.vqvae, vq.parameters(),
                  {{"initial_recon", res.initial_recon}, {"final_recon", res.final_recon}});
  write_text(dir / "loss_curve.csv", loss_curve_csv(res.curve));

  const auto train = tokenize_dataset(vq, train_images, gather_labels(ds, split.train));
  const auto test = tokenize_dataset(vq, images_to_tensor(ds.images, split.test), gather_labels(ds, split.test));
  write_text(c.layout.tokens(), json{{"train", token_set_to_json(train)}, {"test", token_set_to_json(test)}}.dump() + "\n");

  const auto recon = vq.decode_tokens({test.tokens.front()});
  write_ppm(dir / "test0_input.ppm", ds.images[split.test.front()]);
  write_ppm(dir / "test0_recon.ppm", tensor_to_image(recon));
  write_manifest(dir, "train-vqvae", config_to_json(c.cfg), json::object(),
                 {c.layout.data() / "images.bin", c.layout.data() / "dataset.json"},
                 {c.layout.vqvae_ckpt(), dir / "vqvae.bin", dir / "loss_curve.csv", c.layout.tokens()});
  c.out << "vqvae final_recon " << res.final_recon << "\n";
}

struct VarRunResult {
  fs::path dir;
  std::vector<MetricsRow> metrics;
  EvalMetrics final_eval;
  std::uint64_t n = 0;
};

VarRunResult run_train_var(Context& c, std::size_t depth, std::uint64_t seed, bool reuse = false) {
  const auto dir = c.layout.var_dir(depth, seed);
  VarConfig vc = c.cfg.var;
  vc.depth = depth;
  vc.seed = seed;
  TrainConfig tc = c.cfg.train;
  tc.seed = seed;
  tc.model_id = dir.filename().string();
  const json flags = {{"depth", depth}, {"seed", seed}};

  if (!fs::exists(c.layout.vqvae_ckpt())) {
    throw DataError("no tokenizer checkpoint at " + c.layout.vqvae_ckpt().string() + "; run train-vqvae first");
  }
  const std::vector<fs::path> inputs{c.layout.vqvae_ckpt(), c.layout.vqvae_dir() / "vqvae.bin", c.layout.tokens()};

  if (reuse && fs::exists(dir / "metrics.csv") && fs::exists(dir / "model.json")) {
    // Same config, flags and inputs as last time: keep the finished run.
    std::string material = "train-var\n" + config_to_json(c.cfg).dump() + "\n" + flags.dump() + "\n";
    for (const auto& p : inputs) material += file_hash(p) + "\n";
    if (manifest_hash(dir) == text_hash(material)) {
      VarRunResult r{dir, parse_metrics_csv(read_text(dir / "metrics.csv")), {}, 0};
      const auto& last = r.metrics.back();
      r.final_eval = {last.l_last, last.l_avg, last.err_last, last.err_avg};
      r.n = last.n;
      c.err << tc.model_id << ": reusing finished run\n";
      return r;
    }
  }

  const auto vq = load_vqvae(c.layout.vqvae_ckpt());
  const auto tokens = load_tokens(c.layout);
  VarModel model(vc);
  c.err << tc.model_id << ": " << model.core_parameter_count() << " core parameters, " << tc.steps << " steps\n";
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train_var(model, vq, tokens.train, tokens.test, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.err << tc.model_id << ": L_avg " << res.final_eval.l_avg << ", Err_avg " << res.final_eval.err_avg << " ("
        << secs << " s)\n";

  write_text(dir / "metrics.csv", metrics_csv(res.metrics));
  save_checkpoint(dir / "model.json", "var", vc, model.parameters(),
                  {{"train", train_config_to_json(tc)},
                   {"final_eval",
                    {{"L_last", res.final_eval.l_last},
                     {"L_avg", res.final_eval.l_avg},
                     {"Err_last", res.final_eval.err_last},
                     {"Err_avg", res.final_eval.err_avg}}}});
  write_manifest(dir, "train-var", config_to_json(c.cfg), flags, inputs,
                 {dir / "metrics.csv", dir / "model.json", dir / "model.bin"});
  return {dir, res.metrics, res.final_eval, model.core_parameter_count()};
}

void run_train_ar(Context& c, std::uint64_t seed) {
  const auto dir = c.layout.ar_dir(seed);
  VarConfig vc = c.cfg.var;
  vc.seed = seed;
  TrainConfig tc = c.cfg.train;
  tc.seed = seed;
  tc.model_id = dir.filename().string();
  const auto tokens = load_tokens(c.layout);
  ArModel model(vc);
  c.err << tc.model_id << ": " << model.core().core_parameter_count() << " core parameters, " << tc.steps
        << " steps\n";
  const auto res = train_ar(model, tokens.train, tokens.test, tc);
  write_text(dir / "metrics.csv", metrics_csv(res.metrics));
  save_checkpoint(dir / "model.json", "ar", vc, model.parameters(), {{"train", train_config_to_json(tc)}});
  write_manifest(dir, "train-ar", config_to_json(c.cfg), {{"seed", seed}}, {c.layout.tokens()},
                 {dir / "metrics.csv", dir / "model.json", dir / "model.bin"});
  c.out << tc.model_id << " L_avg " << res.final_eval.l_avg << " Err_avg " << res.final_eval.err_avg << "\n";
}

json eval_json(const EvalMetrics& e) {
  return {{"L_last", e.l_last}, {"L_avg", e.l_avg}, {"Err_last", e.err_last}, {"Err_avg", e.err_avg}};
}

void run_eval(Context& c, const fs::path& ckpt, const fs::path& vqvae_path, const fs::path& out_dir) {
  const auto kind = load_checkpoint(ckpt).kind;
  const auto tokens = load_tokens(c.layout);
  EvalMetrics e;
  if (kind == "ar") {
    e = eval_ar(load_ar(ckpt), tokens.test);
  } else {
    e = eval_var(load_var(ckpt), load_vqvae(vqvae_path), tokens.test);
  }
  const json j = {{"checkpoint", ckpt.generic_string()}, {"kind", kind}, {"test", eval_json(e)}};
  write_text(out_dir / "eval.json", j.dump(2) + "\n");
  write_manifest(out_dir, "eval", config_to_json(c.cfg), {{"ckpt", ckpt.generic_string()}}, {ckpt, c.layout.tokens()},
                 {out_dir / "eval.json"});
  c.out << j.dump() << "\n";
}

void run_sample(Context& c, const fs::path& ckpt, const fs::path& vqvae_path, const GenerationParams& params,
                std::size_t count, const fs::path& out_dir) {
  const auto model = load_var(ckpt);
  const auto vq = load_vqvae(vqvae_path);
  SampleOptions opt;
  opt.params = params;
  opt.count = count;
  const auto res = sample_var(model, vq, opt);
  std::vector<fs::path> outputs{out_dir / "tokens.json"};
  write_text(out_dir / "tokens.json", token_batch_to_json(res.tokens).dump() + "\n");
  const auto images = vq.decode_tokens(res.tokens);
  for (std::size_t i = 0; i < count; ++i) {
    const auto p = out_dir / ("sample" + std::to_string(i) + ".ppm");
    write_ppm(p, tensor_to_image(batch_slice(images, i, 1)));
    outputs.push_back(p);
  }
  write_manifest(out_dir, "sample", config_to_json(c.cfg),
                 {{"generation", generation_to_json(params)}, {"count", count}, {"ckpt", ckpt.generic_string()}},
                 {ckpt, vqvae_path}, outputs);
  c.out << "wrote " << count << " samples in " << res.iterations << " iterations to " << out_dir.string() << "\n";
}

void run_zero_shot(Context& c, const std::string& task, const fs::path& ckpt, const fs::path& vqvae_path,
                   const fs::path& image_path, const std::string& mask_path, const std::string& bbox_text,
                   int label, const GenerationParams& params, const fs::path& out_dir) {
  const auto model = load_var(ckpt);
  const auto vq = load_vqvae(vqvae_path);
  const auto image = read_ppm(image_path);
  std::vector<fs::path> inputs{ckpt, vqvae_path, image_path};
  ZeroShotResult r;
  if (task == "inpaint") {
    if (mask_path.empty()) throw ContractViolation("inpaint needs --mask");
    r = inpaint(model, vq, image, PixelMask::from_pgm(read_pgm(mask_path)), params);
    inputs.emplace_back(mask_path);
  } else if (task == "outpaint") {
    if (bbox_text.empty()) throw ContractViolation("outpaint needs --bbox (the region to keep)");
    r = outpaint(model, vq, image, parse_bbox(bbox_text), params);
  } else {
    if (bbox_text.empty()) throw ContractViolation("edit needs --bbox");
    if (label < 0) throw ContractViolation("edit needs --class");
    r = class_edit(model, vq, image, parse_bbox(bbox_text), label, params);
  }
  write_ppm(out_dir / "result.ppm", r.image);
  write_text(out_dir / "record.json", r.record().dump(2) + "\n");
  write_text(out_dir / "tokens.json", json{{"ground_truth", tokens_to_json(r.ground_truth)},
                                           {"result", tokens_to_json(r.tokens)}}
                                          .dump() +
                                          "\n");
  write_manifest(out_dir, "zeroshot " + task, config_to_json(c.cfg),
                 {{"generation", generation_to_json(params)}, {"bbox", bbox_text}, {"class", label}}, inputs,
                 {out_dir / "result.ppm", out_dir / "record.json", out_dir / "tokens.json"});
  c.out << r.record().dump() << "\n";
}

std::vector<CostReport> complexity_rows(std::uint64_t n, std::uint64_t a) {
  return {var_cost_closed(n, a), ar_cost_report(n)};
}

// Fit of a metric against N (one point per model size, median over runs)
// and against compute along the Pareto frontier.
struct ScalingReport {
  json report;
  std::vector<XY> by_n;
  std::vector<CurvePoint> frontier;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ScalingReport scaling_report(const std::vector<MetricsRow>& rows, Metric metric) {
  const auto curves = curves_from_rows(rows);
  std::map<std::uint64_t, std::vector<double>> finals;
  for (const auto& cv : curves) {
    if (!cv.rows.empty()) finals[cv.n].push_back(metric_value(cv.rows.back(), metric));
  }
  ScalingReport s;
  json per_n = json::array();
  for (const auto& [n, v] : finals) {
    s.by_n.push_back({static_cast<double>(n), median(v)});
    per_n.push_back({{"N", n}, {"runs", v.size()}, {"median", median(v)}});
  }
  s.report = {{"metric", metric_name(metric)}, {"per_N", per_n}};
  if (s.by_n.size() >= 2) s.report["fit_vs_N"] = fit_report(fit_power_law(s.by_n));
  s.frontier = pareto_frontier(curves, metric);
  std::vector<XY> fx;
  for (const auto& p : s.frontier) fx.push_back({p.compute, p.value});
  s.report["frontier_points"] = fx.size();
  if (fx.size() >= 2) s.report["fit_vs_C"] = fit_report(fit_power_law(fx));
  return s;
}

void write_scaling(const fs::path& dir, const ScalingReport& s) {
  write_text(dir / "fit.json", s.report.dump(2) + "\n");
  write_text(dir / "frontier.csv", frontier_csv(s.frontier));
  write_text(dir / "points_vs_N.csv", xy_csv(s.by_n, "N", s.report.at("metric").get<std::string>()));
}

void run_fit_scaling(Context& c, const std::vector<std::string>& files, const std::string& metric_text,
                     const fs::path& out_dir) {
  std::vector<MetricsRow> rows;
  for (const auto& f : files) {
    auto r = parse_metrics_csv(read_text(f));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) throw DataError("no metrics rows in the given files");
  const auto s = scaling_report(rows, metric_from_name(metric_text));
  write_scaling(out_dir, s);
  std::vector<fs::path> inputs(files.begin(), files.end());
  write_manifest(out_dir, "fit-scaling", json::object(), {{"metric", metric_text}, {"metrics", files}}, inputs,
                 {out_dir / "fit.json", out_dir / "frontier.csv", out_dir / "points_vs_N.csv"});
  c.out << s.report.dump() << "\n";
}

bool vqvae_matches(const Layout& l, const ExperimentConfig& cfg) {
  const auto dir = l.vqvae_dir();
  if (!fs::exists(l.vqvae_ckpt()) || !fs::exists(l.tokens()) || !fs::exists(dir / "manifest.json")) return false;
  try {
    const auto m = json::parse(read_text(dir / "manifest.json"));
    const auto& old = m.at("config");
    return old.at("dataset") == config_to_json(cfg).at("dataset") && old.at("vqvae") == config_to_json(cfg).at("vqvae") &&
           old.at("vqvae_train") == config_to_json(cfg).at("vqvae_train") &&
           old.at("test_fraction") == cfg.test_fraction;
  } catch (const std::exception&) {
    return false;
  }
}

void run_sweep(Context& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& l = c.layout;
  bool have_data = false;
  if (fs::exists(l.data() / "dataset.json")) {
    try {
      have_data = load_dataset(l.data()).spec == c.cfg.dataset;
    } catch (const DataError&) {
    }
  }
  if (!have_data) run_gen_data(c);
  if (!vqvae_matches(l, c.cfg)) run_train_vqvae(c);

  std::vector<MetricsRow> rows;
  std::string summary = "model_id,d,N,seed," + metric_name(Metric::l_last) + "," + metric_name(Metric::l_avg) + "," +
                        metric_name(Metric::err_last) + "," + metric_name(Metric::err_avg) + "\n";
  std::vector<fs::path> inputs;
  for (auto d : c.cfg.sweep.depths) {
    for (auto seed : c.cfg.sweep.seeds) {
      const auto r = run_train_var(c, d, seed, true);
      rows.insert(rows.end(), r.metrics.begin(), r.metrics.end());
      const auto& e = r.final_eval;
      summary += r.dir.filename().string() + "," + std::to_string(d) + "," + std::to_string(r.n) + "," +
                 std::to_string(seed) + "," + json(e.l_last).dump() + "," + json(e.l_avg).dump() + "," +
                 json(e.err_last).dump() + "," + json(e.err_avg).dump() + "\n";
      inputs.push_back(r.dir / "metrics.csv");
    }
  }
  const auto metric = metric_from_name(c.cfg.sweep.metric);
  auto s = scaling_report(rows, metric);
  bool decreasing = s.by_n.size() >= 2;
  for (std::size_t i = 1; i < s.by_n.size(); ++i) decreasing &= s.by_n[i].second < s.by_n[i - 1].second;
  s.report["strictly_decreasing_in_d"] = decreasing;
  if (s.report.contains("fit_vs_N")) s.report["alpha_negative"] = s.report["fit_vs_N"]["alpha"].get<double>() < 0;

  const auto dir = l.sweep();
  write_scaling(dir, s);
  write_text(dir / "summary.csv", summary);
  write_text(dir / "metrics_all.csv", metrics_csv(rows));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(dir / "timing.json", json{{"wall_seconds", secs}, {"threads", omp_get_max_threads()}}.dump(2) + "\n");
  write_manifest(dir, "sweep", config_to_json(c.cfg), json::object(), inputs,
                 {dir / "fit.json", dir / "frontier.csv", dir / "summary.csv", dir / "metrics_all.csv"});
  c.out << s.report.dump() << "\n";
}

void apply_thread_cap(std::ostream& err) {
  if (const char* t = std::getenv("VARLAB_THREADS")) {
    try {
      const int n = std::stoi(t);
      if (n >= 1) {
        omp_set_num_threads(n);
        return;
      }
    } catch (const std::exception&) {
    }
    err << "ignoring VARLAB_THREADS='" << t << "' (want a positive integer)\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"varlab: next-scale prediction experiments at desk scale", "varlab"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt, vqvae_path, image, mask, bbox, metric = "L_avg";
  std::optional<std::uint64_t> seed;
  std::optional<int> label;
  std::optional<std::size_t> top_k, count, depth;
  std::optional<double> cfg_scale;
  std::uint64_t n = 8, a = 2;
  std::vector<std::string> metric_files;

  auto add_config = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--config", config_path, "experiment config (JSON)");
    if (required) o->required();
    s->add_option("--out", out_dir, "output directory (overrides output_dir)");
  };
  auto add_gen = [&](CLI::App* s) {
    s->add_option("--ckpt", ckpt, "VAR checkpoint manifest");
    s->add_option("--vqvae", vqvae_path, "tokenizer checkpoint manifest");
    s->add_option("--seed", seed, "sampling seed");
    s->add_option("--topk", top_k, "top-k filter (0 = all)");
    s->add_option("--cfg", cfg_scale, "guidance scale");
  };

  auto* gen_data = app.add_subcommand("gen-data", "generate the procedural dataset");
  add_config(gen_data, true);
  auto* train_vq = app.add_subcommand("train-vqvae", "train the multi-scale tokenizer and tokenize the data");
  add_config(train_vq, true);
  auto* train_v = app.add_subcommand("train-var", "train a VAR transformer");
  add_config(train_v, true);
  train_v->add_option("--seed", seed, "model and training seed");
  train_v->add_option("--depth", depth, "override var.depth");
  auto* train_a = app.add_subcommand("train-ar", "train the raster-scan AR baseline");
  add_config(train_a, true);
  train_a->add_option("--seed", seed, "model and training seed");
  auto* sample = app.add_subcommand("sample", "class-conditional sampling");
  add_config(sample, true);
  add_gen(sample);
  sample->add_option("--class", label, "class label (-1 = null class)");
  sample->add_option("--count", count, "number of samples");
  auto* zs = app.add_subcommand("zeroshot", "in-painting, out-painting and class editing");
  zs->require_subcommand(1);
  std::string task;
  for (const char* t : {"inpaint", "outpaint", "edit"}) {
    auto* s = zs->add_subcommand(t, std::string(t) + " an image");
    add_config(s, true);
    add_gen(s);
    s->add_option("--image", image, "input image (PPM)")->required();
    if (std::string(t) == "inpaint") s->add_option("--mask", mask, "mask (PGM, 0 keep, 255 generate)")->required();
    if (std::string(t) != "inpaint") s->add_option("--bbox", bbox, "x,y,w,h")->required();
    if (std::string(t) == "edit") s->add_option("--class", label, "class to paint in the box")->required();
    s->callback([&task, t] { task = t; });
  }
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out tokens");
  add_config(eval, true);
  eval->add_option("--ckpt", ckpt, "VAR or AR checkpoint manifest")->required();
  eval->add_option("--vqvae", vqvae_path, "tokenizer checkpoint manifest");
  auto* complexity = app.add_subcommand("complexity", "attention-pair counts for VAR and AR generation");
  complexity->add_option("--n", n, "final token map side");
  complexity->add_option("--a", a, "scale ratio");
  complexity->add_option("--out", out_dir, "also write the CSV to this file");
  auto* fit = app.add_subcommand("fit-scaling", "fit power laws and Pareto frontiers to metrics CSVs");
  fit->add_option("--metrics", metric_files, "metrics CSV files")->required();
  fit->add_option("--metric", metric, "L_last, L_avg, Err_last or Err_avg");
  fit->add_option("--out", out_dir, "output directory")->required();
  auto* sweep = app.add_subcommand("sweep", "train the size ladder and fit scaling laws");
  add_config(sweep, true);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  apply_thread_cap(err);
  try {
    if (complexity->parsed()) {
      const auto csv = cost_csv(complexity_rows(n, a));
      if (!out_dir.empty()) write_text(out_dir, csv);
      out << csv;
      return kOk;
    }
    if (fit->parsed()) {
      Context c{{}, {}, out, err};
      run_fit_scaling(c, metric_files, metric, out_dir);
      return kOk;
    }

    ExperimentConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    Context c{cfg, Layout{cfg.output_dir}, out, err};
    GenerationParams gp = cfg.generation;
    if (seed) gp.seed = *seed;
    if (top_k) gp.top_k = *top_k;
    if (cfg_scale) gp.cfg = *cfg_scale;
    if (label) gp.class_label = *label;
    const fs::path vq = vqvae_path.empty() ? c.layout.vqvae_ckpt() : fs::path(vqvae_path);
    auto need_ckpt = [&]() -> fs::path {
      if (ckpt.empty()) return c.layout.var_dir(cfg.var.depth, cfg.var.seed) / "model.json";
      return ckpt;
    };

    if (gen_data->parsed()) {
      run_gen_data(c);
    } else if (train_vq->parsed()) {
      run_train_vqvae(c);
    } else if (train_v->parsed()) {
      const auto r = run_train_var(c, depth.value_or(cfg.var.depth), seed.value_or(cfg.train.seed));
      out << r.dir.filename().string() << " L_avg " << r.final_eval.l_avg << " Err_avg " << r.final_eval.err_avg
          << "\n";
    } else if (train_a->parsed()) {
      run_train_ar(c, seed.value_or(cfg.train.seed));
    } else if (sample->parsed()) {
      gp.validate(cfg.var.vocab, cfg.var.num_classes);
      run_sample(c, need_ckpt(), vq, gp, count.value_or(cfg.sample_count), c.layout.root / "samples");
    } else if (zs->parsed()) {
      gp.validate(cfg.var.vocab, cfg.var.num_classes);
      run_zero_shot(c, task, need_ckpt(), vq, image, mask, bbox, label.value_or(-1), gp,
                    c.layout.root / ("zeroshot_" + task));
    } else if (eval->parsed()) {
      run_eval(c, ckpt, vq, fs::path(ckpt).parent_path() / "eval");
    } else if (sweep->parsed()) {
      run_sweep(c);
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error:\n";
    for (const auto& p : e.problems()) err << "  " << p << "\n";
    return kUsage;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UnsupportedConfiguration& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace varlab::cli
