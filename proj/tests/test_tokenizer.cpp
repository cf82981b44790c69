#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/tokenizer/quantizer.hpp"
#include "varlab/tokenizer/vqvae.hpp"

using namespace varlab;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(d(rng));
  return Tensor::from_data(std::move(shape), std::move(v));
}

Codebook codebook_from(std::size_t v, std::size_t c, std::vector<float> values) {
  return Codebook{Tensor::from_data({v, c}, std::move(values))};
}

int brute_force_nearest(const std::vector<double>& f, const Codebook& cb) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < cb.vocab(); ++v) {
    double d = 0.0;
    for (std::size_t j = 0; j < cb.dim(); ++j) {
      const double e = cb.vectors[v * cb.dim() + j] - f[j];
      d += e * e;
    }
    if (d < best_d) best_d = d, best = static_cast<int>(v);
  }
  return best;
}

// Textbook align-corners interpolation along one axis of a strided signal;
// a target length of 1 takes the mean, a source length of 1 replicates.
std::vector<double> oracle_resize_1d(const std::vector<double>& x, std::size_t in, std::size_t out) {
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    if (out == 1) {
      for (double v : x) y[0] += v / static_cast<double>(in);
    } else if (in == 1) {
      y[o] = x[0];
    } else {
      const double pos = static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
      const auto lo = std::min(static_cast<std::size_t>(pos), in - 1);
      const auto hi = std::min(lo + 1, in - 1);
      const double t = pos - static_cast<double>(lo);
      y[o] = (1 - t) * x[lo] + t * x[hi];
    }
  }
  return y;
}

// HWC map resized separably: columns first, then rows.
std::vector<double> oracle_resize(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c,
                                  std::size_t oh, std::size_t ow) {
  std::vector<double> mid(h * ow * c), y(oh * ow * c);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> line(w);
      for (std::size_t j = 0; j < w; ++j) line[j] = x[(i * w + j) * c + ch];
      auto r = oracle_resize_1d(line, w, ow);
      for (std::size_t j = 0; j < ow; ++j) mid[(i * ow + j) * c + ch] = r[j];
    }
  for (std::size_t j = 0; j < ow; ++j)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> line(h);
      for (std::size_t i = 0; i < h; ++i) line[i] = mid[(i * ow + j) * c + ch];
      auto r = oracle_resize_1d(line, h, oh);
      for (std::size_t i = 0; i < oh; ++i) y[(i * ow + j) * c + ch] = r[i];
    }
  return y;
}

// Algorithm 1 with identity refiners, stopped after `scales` steps.
std::vector<std::vector<int>> oracle_encode(const Tensor& f, const ScaleSchedule& s, const Codebook& cb,
                                            std::size_t scales) {
  const std::size_t H = f.dim(1), W = f.dim(2), C = f.dim(3);
  std::vector<double> r(f.data().begin(), f.data().end());
  std::vector<std::vector<int>> maps;
  for (std::size_t k = 0; k < scales; ++k) {
    const auto [h, w] = s[k];
    auto down = oracle_resize(r, H, W, C, h, w);
    std::vector<int> codes(h * w);
    std::vector<double> z(h * w * C);
    for (std::size_t p = 0; p < h * w; ++p) {
      std::vector<double> fv(down.begin() + static_cast<std::ptrdiff_t>(p * C),
                             down.begin() + static_cast<std::ptrdiff_t>((p + 1) * C));
      codes[p] = brute_force_nearest(fv, cb);
      for (std::size_t j = 0; j < C; ++j) z[p * C + j] = cb.vectors[codes[p] * C + j];
    }
    auto up = oracle_resize(z, h, w, C, H, W);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= up[i];
    maps.push_back(codes);
  }
  return maps;
}

VqVaeConfig tiny_config() {
  VqVaeConfig c;
  c.image_size = 8;
  c.hidden = 8;
  c.latent_channels = 4;
  c.vocab = 16;
  c.schedule = ScaleSchedule::square({1, 2});
  return c;
}

// Smooth color gradients with a random bright disc; something a small
// autoencoder can actually fit, unlike white noise.
Tensor smooth_images(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<float> v;
  for (std::size_t b = 0; b < n; ++b) {
    const double cx = u(rng) * size, cy = u(rng) * size, rad = 0.2 * size + 0.2 * size * u(rng);
    const double tint[3] = {u(rng), u(rng), u(rng)};
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j)
        for (int ch = 0; ch < 3; ++ch) {
          const double g = (static_cast<double>(i + j) / (2.0 * size)) * tint[ch];
          const bool in = (i - cy) * (i - cy) + (j - cx) * (j - cx) < rad * rad;
          v.push_back(static_cast<float>(std::clamp(2.0 * (g + (in ? 0.6 : 0.0)) - 1.0, -1.0, 1.0)));
        }
  }
  return Tensor::from_data({n, size, size, 3}, std::move(v));
}

Tensor random_images(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n * size * size * 3);
  for (auto& x : v) x = u(rng);
  return Tensor::from_data({n, size, size, 3}, std::move(v));
}

std::vector<std::vector<float>> snapshot(const VqVae& m) {
  std::vector<std::vector<float>> out;
  const auto params = m.parameters();
  for (const auto& p : params.items()) out.push_back(p.tensor.values());
  return out;
}

}  // namespace

TEST_CASE("quantize_nearest picks the closer code") {
  auto cb = codebook_from(2, 2, {0, 0, 1, 1});
  std::vector<float> f{0.2f, 0.1f};
  CHECK(quantize_nearest(f, cb) == 0);
}

TEST_CASE("quantize_nearest breaks ties toward the lower index") {
  std::vector<float> table(10 * 2, 50.0f);
  table[3 * 2 + 0] = 1.0f;
  table[3 * 2 + 1] = 0.0f;
  table[7 * 2 + 0] = -1.0f;
  table[7 * 2 + 1] = 0.0f;
  auto cb = codebook_from(10, 2, table);
  std::vector<float> f{0.0f, 0.0f};
  CHECK(quantize_nearest(f, cb) == 3);
}

TEST_CASE("quantize_nearest matches exhaustive search for V up to 64") {
  std::mt19937_64 rng(11);
  for (std::size_t v : {2, 16, 33, 64}) {
    for (std::size_t c : {1, 4, 16}) {
      auto cb = Codebook::random(v, c, 1.0, rng);
      for (int trial = 0; trial < 50; ++trial) {
        auto f = random_tensor({c}, rng);
        std::vector<double> fd(f.data().begin(), f.data().end());
        REQUIRE(quantize_nearest(f.data(), cb) == brute_force_nearest(fd, cb));
      }
    }
  }
}

TEST_CASE("quantize_nearest rejects an empty codebook and a wrong dimension") {
  std::vector<float> f{0.0f};
  CHECK_THROWS_AS(quantize_nearest(f, Codebook{}), ContractViolation);
  auto cb = codebook_from(2, 2, {0, 0, 1, 1});
  CHECK_THROWS_AS(quantize_nearest(f, cb), ContractViolation);
}

TEST_CASE("single scale encoding is plain VQ") {
  std::mt19937_64 rng(3);
  auto cb = Codebook::random(16, 4, 1.0, rng);
  auto s = ScaleSchedule::square({4});
  auto phi = PhiStack::identity(1, 4);
  auto f = random_tensor({2, 4, 4, 4}, rng);
  auto enc = encode_multiscale(f, s, cb, phi);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t p = 0; p < 16; ++p) {
      const std::size_t base = (b * 16 + p) * 4;
      const int code = quantize_nearest(f.data().subspan(base, 4), cb);
      REQUIRE(enc.tokens[b].maps[0][p] == code);
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(enc.residual[base + j] == doctest::Approx(f[base + j] - cb.vectors[code * 4 + j]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("features tiled from code vectors leave a zero residual") {
  std::mt19937_64 rng(4);
  auto cb = Codebook::random(8, 3, 1.0, rng);
  std::vector<float> f;
  for (int p = 0; p < 9; ++p) {
    const int code = (p * 5) % 8;
    for (int j = 0; j < 3; ++j) f.push_back(cb.vectors[code * 3 + j]);
  }
  auto enc = encode_multiscale(Tensor::from_data({1, 3, 3, 3}, f), ScaleSchedule::square({3}), cb,
                               PhiStack::identity(1, 3));
  for (float r : enc.residual.data()) CHECK(r == 0.0f);
}

TEST_CASE("encode_multiscale rejects a schedule that misses the latent size") {
  std::mt19937_64 rng(5);
  auto cb = Codebook::random(8, 2, 1.0, rng);
  auto f = random_tensor({1, 4, 4, 2}, rng);
  CHECK_THROWS_AS(encode_multiscale(f, ScaleSchedule::square({1, 2}), cb, PhiStack::identity(2, 2)),
                  ContractViolation);
  CHECK_THROWS_AS(encode_multiscale(f, ScaleSchedule::square({1, 4}), cb, PhiStack::identity(3, 2)),
                  ContractViolation);
}

TEST_CASE("encode_multiscale matches a loop-level Algorithm 1 oracle at every prefix") {
  std::mt19937_64 rng(6);
  const std::vector<ScaleSchedule> schedules{
      ScaleSchedule::square({1, 2, 4}), ScaleSchedule::square({1, 2, 4, 8}),
      ScaleSchedule({{1, 1}, {2, 3}, {3, 6}}), ScaleSchedule::square({1, 3, 5})};
  for (const auto& s : schedules) {
    auto cb = Codebook::random(16, 4, 1.0, rng);
    auto f = random_tensor({1, s.last().h, s.last().w, 4}, rng);
    auto enc = encode_multiscale(f, s, cb, PhiStack::identity(s.size(), 4));
    for (std::size_t k = 1; k <= s.size(); ++k) {
      auto prefix = oracle_encode(f, s, cb, k);
      for (std::size_t i = 0; i < k; ++i) REQUIRE(prefix[i] == enc.tokens[0].maps[i]);
    }
  }
}

TEST_CASE("residual identity: f equals reconstruction plus residual") {
  std::mt19937_64 rng(7);
  const std::vector<ScaleSchedule> schedules{ScaleSchedule::square({1, 2, 4}), ScaleSchedule::square({1, 2, 4, 8}),
                                             ScaleSchedule({{1, 2}, {2, 2}, {4, 5}}), ScaleSchedule::square({6})};
  for (const auto& s : schedules) {
    for (int trial = 0; trial < 5; ++trial) {
      auto cb = Codebook::random(32, 8, 1.0, rng);
      auto phi = PhiStack::identity(s.size(), 8);
      auto f = random_tensor({3, s.last().h, s.last().w, 8}, rng);
      auto enc = encode_multiscale(f, s, cb, phi);
      auto f_hat = reconstruct_features(enc.tokens, cb, phi);
      double err = 0.0, res_sq = 0.0, diff_sq = 0.0;
      for (std::size_t i = 0; i < f.numel(); ++i) {
        err = std::max(err, static_cast<double>(std::abs(f[i] - (f_hat[i] + enc.residual[i]))));
        res_sq += static_cast<double>(enc.residual[i]) * enc.residual[i];
        const double d = f[i] - f_hat[i];
        diff_sq += d * d;
      }
      CHECK(err < 1e-5);
      CHECK(std::sqrt(diff_sq) == doctest::Approx(std::sqrt(res_sq)).epsilon(1e-5));
    }
  }
}

TEST_CASE("emitted tokens are in range and shaped by the schedule") {
  std::mt19937_64 rng(8);
  auto s = ScaleSchedule::square({1, 2, 4, 8});
  auto cb = Codebook::random(64, 16, 1.0, rng);
  auto enc = encode_multiscale(random_tensor({4, 8, 8, 16}, rng, 3.0), s, cb, PhiStack::identity(4, 16));
  for (const auto& t : enc.tokens) {
    REQUIRE(t.maps.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      REQUIRE(t.maps[k].size() == s.tokens(k));
      for (int v : t.maps[k]) REQUIRE((v >= 0 && v < 64));
    }
    CHECK_NOTHROW(t.validate());
  }
}

TEST_CASE("reconstruction of the zero code is zero") {
  auto cb = codebook_from(3, 2, {0, 0, 1, 2, -1, 4});
  auto s = ScaleSchedule::square({1, 2, 4});
  MultiScaleTokens t{s, {{0}, {0, 0, 0, 0}, std::vector<int>(16, 0)}, 3};
  auto f_hat = reconstruct_features({t}, cb, PhiStack::identity(3, 2));
  for (float x : f_hat.data()) CHECK(x == 0.0f);
}

TEST_CASE("single scale reconstruction is the refined lookup") {
  auto cb = codebook_from(3, 2, {0, 0, 1, 2, -1, 4});
  MultiScaleTokens t{ScaleSchedule::square({2}), {{1, 2, 2, 0}}, 3};
  auto f_hat = reconstruct_features({t}, cb, PhiStack::identity(1, 2));
  const std::vector<float> expected{1, 2, -1, 4, -1, 4, 0, 0};
  CHECK(f_hat.values() == expected);
}

TEST_CASE("reconstruction rejects out-of-range tokens") {
  auto cb = codebook_from(3, 2, {0, 0, 1, 2, -1, 4});
  MultiScaleTokens t{ScaleSchedule::square({1}), {{3}}, 3};
  CHECK_THROWS_AS(reconstruct_features({t}, cb, PhiStack::identity(1, 2)), ContractViolation);
}

TEST_CASE("token flatten and unflatten round trip") {
  auto s = ScaleSchedule::square({1, 2});
  MultiScaleTokens t{s, {{4}, {0, 1, 2, 3}}, 5};
  CHECK(t.flatten() == std::vector<int>{4, 0, 1, 2, 3});
  CHECK(MultiScaleTokens::unflatten(s, 5, t.flatten()) == t);
  CHECK(s.block_ids() == std::vector<int>{0, 1, 1, 1, 1});
  CHECK(ScaleSchedule::geometric(8, 2) == ScaleSchedule::square({1, 2, 4, 8}));
  CHECK_THROWS_AS(ScaleSchedule::geometric(6, 2), ContractViolation);
  CHECK_THROWS_AS(ScaleSchedule::square({2, 1}), ContractViolation);
}

TEST_CASE("vqvae loss is zero for perfect reconstructions") {
  std::mt19937_64 rng(9);
  auto im = random_tensor({2, 2, 2, 3}, rng);
  auto f = random_tensor({2, 1, 1, 4}, rng);
  auto l = vqvae_loss(im, im, f, f, {});
  CHECK(l.total.item() == 0.0f);
}

TEST_CASE("vqvae loss evaluates the two norms directly") {
  // 4-pixel grayscale images differing by one everywhere: ||.||_2 = 2.
  auto im = Tensor::from_data({1, 2, 2, 1}, {0, 0, 0, 0});
  auto im_hat = Tensor::from_data({1, 2, 2, 1}, {1, -1, 1, 1});
  auto f = Tensor::from_data({1, 1, 1, 2}, {3, 0});
  auto f_hat = Tensor::from_data({1, 1, 1, 2}, {0, 4});
  auto l = vqvae_loss(im, im_hat, f, f_hat, {});
  CHECK(l.recon == doctest::Approx(2.0));
  CHECK(l.latent == doctest::Approx(5.0));
  CHECK(l.total.item() == doctest::Approx(7.0));
}

TEST_CASE("pluggable perceptual term is weighted") {
  auto im = Tensor::from_data({1, 1, 1, 1}, {0});
  auto one = [](const Tensor&) { return Tensor::scalar(1.0f); };
  auto l = vqvae_loss(im, im, im, im, {0.5, 0.0}, one);
  CHECK(l.total.item() == doctest::Approx(0.5));
  CHECK(l.perceptual == doctest::Approx(1.0));
  CHECK_THROWS_AS(vqvae_loss(im, im, im, im, {-0.1, 0.0}), ContractViolation);
  CHECK_THROWS_AS(vqvae_loss(im, im, im, im, {0.0, -1.0}), ContractViolation);
}

TEST_CASE("vqvae config rejects a schedule that misses the latent size") {
  auto c = tiny_config();
  c.schedule = ScaleSchedule::square({1, 4});
  CHECK_THROWS_AS(VqVae{c}, ContractViolation);
}

TEST_CASE("fresh vqvae satisfies the residual identity end to end") {
  std::mt19937_64 rng(10);
  VqVaeConfig c;
  VqVae m(c);
  auto images = random_images(3, 32, rng);
  NoGradGuard no_grad;
  auto f = m.encode(images);
  CHECK(f.shape() == Shape{3, 8, 8, 16});
  auto enc = m.encode_multiscale(f);
  auto f_hat = m.reconstruct_features(enc.tokens);
  for (std::size_t i = 0; i < f.numel(); ++i) REQUIRE(std::abs(f[i] - f_hat[i] - enc.residual[i]) < 1e-5);
  CHECK(m.decode_tokens(enc.tokens).shape() == images.shape());
}

TEST_CASE("training overfits a single image") {
  std::mt19937_64 rng(12);
  auto c = tiny_config();
  c.image_size = 16;
  c.schedule = ScaleSchedule::square({1, 2, 4});
  VqVae m(c);
  auto images = smooth_images(1, 16, rng);
  VqVaeTrainConfig t;
  t.steps = 200;
  t.batch = 1;
  t.lr = 3e-3;
  t.log_every = 50;
  auto r = train_vqvae(m, images, t);
  MESSAGE("recon ", r.initial_recon, " -> ", r.final_recon);
  CHECK(r.final_recon <= 0.5 * r.initial_recon);
  CHECK(r.curve.size() == 4);
  CHECK(r.curve.back().step == 200);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  std::mt19937_64 rng(13);
  VqVae m(tiny_config());
  auto before = snapshot(m);
  VqVaeTrainConfig t;
  t.steps = 5;
  t.batch = 2;
  t.lr = 0.0;
  train_vqvae(m, random_images(4, 8, rng), t);
  CHECK(snapshot(m) == before);
}

TEST_CASE("training is bit-identical for a fixed seed") {
  std::mt19937_64 rng(14);
  auto images = random_images(6, 8, rng);
  VqVaeTrainConfig t;
  t.steps = 12;
  t.batch = 4;
  t.seed = 99;
  VqVae a(tiny_config()), b(tiny_config());
  auto ra = train_vqvae(a, images, t);
  auto rb = train_vqvae(b, images, t);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(loss_curve_csv(ra.curve) == loss_curve_csv(rb.curve));
}

TEST_CASE("loss curve csv has the expected header") {
  auto csv = loss_curve_csv({{1, 3.0, 2.0, 1.0, 0.0, 0.0}});
  CHECK(csv.rfind("step,total,recon,latent,perceptual,adversarial\n1,3,2,1,0,0\n", 0) == 0);
}

TEST_CASE("attention probe needs the bottleneck layer") {
  std::mt19937_64 rng(15);
  VqVae m(tiny_config());
  CHECK_THROWS_AS(m.encoder_attention_map(random_images(1, 8, rng)), UnsupportedConfiguration);
}

TEST_CASE("attention probe on a 1x1 latent is [[1]]") {
  std::mt19937_64 rng(16);
  auto c = tiny_config();
  c.image_size = 4;
  c.schedule = ScaleSchedule::square({1});
  c.bottleneck_attention = true;
  auto map = VqVae(c).encoder_attention_map(random_images(1, 4, rng));
  REQUIRE(map.tokens == 1);
  CHECK(map.at(0, 0) == 1.0);
}

TEST_CASE("attention probe rows sum to one and mass flows both ways") {
  std::mt19937_64 rng(17);
  VqVaeConfig c;
  c.bottleneck_attention = true;
  VqVae m(c);
  auto map = m.encoder_attention_map(random_images(1, 32, rng));
  REQUIRE(map.tokens == 64);
  double above = 0.0, below = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 64; ++j) {
      s += map.at(i, j);
      if (j > i) above += map.at(i, j);
      if (j < i) below += map.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(above > 0.0);
  CHECK(below > 0.0);
}
