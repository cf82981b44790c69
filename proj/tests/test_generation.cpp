#include <doctest.h>

#include <random>

#include "support/forcing_oracle.hpp"
#include "varlab/data/dataset.hpp"
#include "varlab/errors.hpp"
#include "varlab/generation/zero_shot.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/tokenizer/quantizer.hpp"
#include "varlab/tokenizer/vqvae.hpp"
#include "varlab/var/var_model.hpp"

using namespace varlab;
using varlab::testing::forcing_oracle;

namespace {

const ScaleSchedule kSchedule = ScaleSchedule::square({1, 2, 4, 8});

VqVae tokenizer() {
  VqVaeConfig c;
  c.hidden = 8;
  c.schedule = kSchedule;
  c.seed = 2;
  return VqVae(c);
}

VarModel model(std::uint64_t seed = 1) {
  VarConfig c;
  c.depth = 1;
  c.width = 32;
  c.heads = 2;
  c.schedule = kSchedule;
  c.seed = seed;
  // Larger init so different classes give visibly different logits.
  c.init_std = 0.3;
  return VarModel(c);
}

Image picture(std::size_t i) {
  DatasetSpec spec;
  spec.samples_per_class = 3;
  return generate_dataset(spec).images.at(i);
}

PixelMask random_mask(std::mt19937_64& rng) {
  switch (rng() % 3) {
    case 0: {
      const std::size_t w = 1 + rng() % 32, h = 1 + rng() % 32;
      return bbox_mask(32, 32, {rng() % (33 - w), rng() % (33 - h), w, h});
    }
    case 1: return bbox_mask(32, 32, {0, 0, 16, 32});
    default: {
      PixelMask m{32, 32, std::vector<std::uint8_t>(1024, 0)};
      for (int n = 0; n < 5; ++n) m.generate[rng() % 1024] = 1;
      return m;
    }
  }
}

// Pixel y covers [y, y + 1); token row i covers [i H / h, (i + 1) H / h).
bool overlaps(std::size_t pix, std::size_t cell, std::size_t full, std::size_t cells) {
  const double lo = static_cast<double>(cell) * full / cells, hi = static_cast<double>(cell + 1) * full / cells;
  return pix < hi && pix + 1 > lo;
}

}  // namespace

TEST_CASE("bbox parsing") {
  const auto b = parse_bbox("3,4,10,2");
  CHECK(b.x == 3);
  CHECK(b.h == 2);
  CHECK(b.area() == 20);
  CHECK_THROWS_AS(parse_bbox("1,2,3"), ContractViolation);
  CHECK_THROWS_AS(parse_bbox("1,2,3,4,5"), ContractViolation);
  CHECK_THROWS_AS(parse_bbox("a,2,3,4"), ContractViolation);
  CHECK_THROWS_AS(bbox_mask(32, 32, {20, 0, 13, 4}), ContractViolation);
}

TEST_CASE("mask downscaling: any covered pixel generates the token") {
  std::mt19937_64 rng(7);
  const auto odd = ScaleSchedule::square({1, 3, 7});
  for (int trial = 0; trial < 40; ++trial) {
    PixelMask m{10, 10, std::vector<std::uint8_t>(100, 0)};
    for (int n = 0; n < 3; ++n) m.generate[rng() % 100] = 1;
    const auto t = downscale_mask(m, odd);
    for (std::size_t k = 0; k < odd.size(); ++k) {
      const auto cells = odd[k].h;
      for (std::size_t i = 0; i < cells; ++i) {
        for (std::size_t j = 0; j < cells; ++j) {
          bool want = false;
          for (std::size_t y = 0; y < 10; ++y)
            for (std::size_t x = 0; x < 10; ++x)
              want |= m.generate[y * 10 + x] && overlaps(y, i, 10, cells) && overlaps(x, j, 10, cells);
          CHECK(t.generate[k][i * cells + j] == want);
        }
      }
    }
  }
}

TEST_CASE("left-half keep: left-half tokens are forced at every scale") {
  const auto keep_left = complement(bbox_mask(32, 32, {0, 0, 16, 32}));
  const auto t = downscale_mask(keep_left, kSchedule);
  CHECK(t.generated(0) == 1);  // the 1x1 cell covers both halves
  for (std::size_t k = 1; k < kSchedule.size(); ++k) {
    const auto side = kSchedule[k].h;
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) CHECK(t.generate[k][i * side + j] == (j >= side / 2));
  }
  const auto p = PixelMask::from_pgm(keep_left.to_pgm());
  CHECK(p.generate == keep_left.generate);
}

TEST_CASE("empty mask and zero-area boxes return the reconstruction verbatim") {
  const auto vq = tokenizer();
  const auto m = model();
  const auto img = picture(5);
  const auto truth = vq.tokenize(images_to_tensor({img}))[0];
  const auto recon = tensor_to_image(vq.decode_tokens({truth}));
  GenerationParams p;
  const auto a = inpaint(m, vq, img, PixelMask{32, 32, std::vector<std::uint8_t>(1024, 0)}, p);
  CHECK(a.tokens == truth);
  CHECK(a.image == recon);
  const auto b = class_edit(m, vq, img, {5, 5, 0, 9}, 2, p);
  CHECK(b.tokens == truth);
  CHECK(b.image == recon);
  const auto c = outpaint(m, vq, img, {0, 0, 32, 32}, p);
  CHECK(c.tokens == truth);
  CHECK(c.record().at("generated") == 0);
  CHECK(c.record().at("forced") == 85);
}

TEST_CASE("full masks equal plain sampling") {
  const auto vq = tokenizer();
  const auto m = model();
  const auto img = picture(1);
  GenerationParams p;
  p.seed = 11;
  SampleOptions opt;
  opt.params = p;
  const auto uncond = sample_var(m, vq, opt).tokens[0];
  CHECK(inpaint(m, vq, img, bbox_mask(32, 32, {0, 0, 32, 32}), p).tokens == uncond);
  CHECK(outpaint(m, vq, img, {0, 0, 0, 0}, p).tokens == uncond);

  p.cfg = 2.0;
  opt.params = p;
  opt.params.class_label = 3;
  const auto cond = sample_var(m, vq, opt).tokens[0];
  CHECK(class_edit(m, vq, img, {0, 0, 32, 32}, 3, p).tokens == cond);
}

TEST_CASE("forced tokens are exact and generated ones follow the teacher-forcing oracle") {
  const auto vq = tokenizer();
  const auto m = model();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = picture(trial % 24);
    const auto mask = random_mask(rng);
    GenerationParams p;
    p.seed = trial;
    p.top_k = trial % 3 == 0 ? 0 : 8;
    const auto r = inpaint(m, vq, img, mask, p);
    CHECK(r.tokens.maps.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t q = 0; q < kSchedule.tokens(k); ++q) {
        if (!r.mask.generate[k][q]) CHECK(r.tokens.maps[k][q] == r.ground_truth.maps[k][q]);
      }
    }
    CHECK(r.tokens == forcing_oracle(m, vq, r.ground_truth, r.mask, -1, p));
  }
}

TEST_CASE("zero-shot output is deterministic") {
  const auto vq = tokenizer();
  const auto m = model();
  const auto img = picture(2);
  GenerationParams p;
  p.seed = 5;
  const auto a = class_edit(m, vq, img, {8, 8, 16, 16}, 1, p), b = class_edit(m, vq, img, {8, 8, 16, 16}, 1, p);
  CHECK(a.tokens == b.tokens);
  CHECK(a.image == b.image);
  CHECK(a.record() == b.record());
}

TEST_CASE("in-painting never reads the real class rows") {
  const auto vq = tokenizer();
  auto m = model();
  const auto img = picture(4);
  GenerationParams p;
  p.seed = 9;
  p.class_label = 5;  // ignored by inpaint
  const auto mask = bbox_mask(32, 32, {4, 4, 20, 12});
  const auto before = inpaint(m, vq, img, mask, p);
  Tensor emb = m.class_embedding();
  auto v = emb.mutable_data();
  const std::size_t w = emb.dim(1);
  for (std::size_t i = 0; i < static_cast<std::size_t>(m.null_class()) * w; ++i) v[i] += 5.0f;
  const auto after = inpaint(m, vq, img, mask, p);
  CHECK(before.tokens == after.tokens);
  CHECK(outpaint(m, vq, img, {0, 0, 16, 16}, p).class_label == -1);
}

TEST_CASE("class edit inside a quarter box changes something across seeds") {
  const auto vq = tokenizer();
  const auto m = model();
  const auto img = picture(0);
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 10 && !differs; ++seed) {
    GenerationParams p;
    p.seed = seed;
    p.cfg = 1.5;
    const auto r = class_edit(m, vq, img, {0, 0, 16, 16}, 6, p);
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t q = 0; q < kSchedule.tokens(k); ++q) {
        if (r.mask.generate[k][q]) {
          differs |= r.tokens.maps[k][q] != r.ground_truth.maps[k][q];
        } else {
          CHECK(r.tokens.maps[k][q] == r.ground_truth.maps[k][q]);
        }
      }
    }
  }
  CHECK(differs);
}

TEST_CASE("zero-shot record counts tokens per scale") {
  const auto vq = tokenizer();
  const auto m = model();
  GenerationParams p;
  const auto r = class_edit(m, vq, picture(0), {0, 0, 16, 16}, 6, p);
  const auto j = r.record();
  CHECK(j.at("task") == "class_edit");
  CHECK(j.at("class_label") == 6);
  CHECK(j.at("scales")[3].at("generated") == 16);
  CHECK(j.at("scales")[3].at("forced") == 48);
  CHECK(j.at("scales")[0].at("generated") == 1);
  CHECK(j.at("generated").get<int>() + j.at("forced").get<int>() == 85);
  CHECK_THROWS_AS(class_edit(m, vq, picture(0), {0, 0, 4, 4}, 8, p), ContractViolation);
}
