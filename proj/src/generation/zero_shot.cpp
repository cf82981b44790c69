#include "varlab/generation/zero_shot.hpp"

#include <algorithm>
#include <charconv>

#include "varlab/data/dataset.hpp"
#include "varlab/errors.hpp"
#include "varlab/tokenizer/vqvae.hpp"
#include "varlab/var/var_model.hpp"

namespace varlab {

PixelMask PixelMask::from_pgm(const Image& gray) {
  expects(gray.channels == 1, "mask must be a single-channel image");
  PixelMask m{gray.width, gray.height, {}};
  for (auto p : gray.pixels) m.generate.push_back(p != 0);
  return m;
}

Image PixelMask::to_pgm() const {
  Image g{width, height, 1, {}};
  for (auto p : generate) g.pixels.push_back(p ? 255 : 0);
  return g;
}

bool PixelMask::any() const {
  return std::any_of(generate.begin(), generate.end(), [](auto v) { return v != 0; });
}

BBox parse_bbox(const std::string& text) {
  std::size_t v[4];
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 4; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[i]);
    expects(ec == std::errc() && (i == 3 ? next == end : next < end && *next == ','),
            "bbox must look like x,y,w,h with nonnegative integers, got '" + text + "'");
    p = next + 1;
  }
  return {v[0], v[1], v[2], v[3]};
}

PixelMask bbox_mask(std::size_t width, std::size_t height, const BBox& box) {
  expects(box.x + box.w <= width && box.y + box.h <= height,
          "bbox " + std::to_string(box.x) + "," + std::to_string(box.y) + "," + std::to_string(box.w) + "," +
              std::to_string(box.h) + " leaves the " + std::to_string(width) + "x" + std::to_string(height) + " image");
  PixelMask m{width, height, std::vector<std::uint8_t>(width * height, 0)};
  for (std::size_t y = box.y; y < box.y + box.h; ++y) {
    for (std::size_t x = box.x; x < box.x + box.w; ++x) m.generate[y * width + x] = 1;
  }
  return m;
}

PixelMask complement(const PixelMask& m) {
  PixelMask c = m;
  for (auto& v : c.generate) v = !v;
  return c;
}

std::size_t TokenMask::generated(std::size_t k) const {
  return static_cast<std::size_t>(std::count(generate[k].begin(), generate[k].end(), 1));
}

bool TokenMask::any() const {
  for (std::size_t k = 0; k < generate.size(); ++k) {
    if (generated(k) > 0) return true;
  }
  return false;
}

TokenMask downscale_mask(const PixelMask& mask, const ScaleSchedule& schedule) {
  expects(mask.width > 0 && mask.height > 0 && mask.generate.size() == mask.width * mask.height,
          "pixel mask is empty or inconsistent");
  const std::size_t H = mask.height, W = mask.width;
  TokenMask t{schedule, {}};
  for (const auto& sz : schedule.sizes()) {
    std::vector<std::uint8_t> g(sz.area(), 0);
    for (std::size_t i = 0; i < sz.h; ++i) {
      const std::size_t y0 = i * H / sz.h, y1 = ((i + 1) * H + sz.h - 1) / sz.h;
      for (std::size_t j = 0; j < sz.w; ++j) {
        const std::size_t x0 = j * W / sz.w, x1 = ((j + 1) * W + sz.w - 1) / sz.w;
        bool hit = false;
        for (std::size_t y = y0; y < y1 && !hit; ++y) {
          for (std::size_t x = x0; x < x1 && !hit; ++x) hit = mask.generate[y * W + x] != 0;
        }
        g[i * sz.w + j] = hit;
      }
    }
    t.generate.push_back(std::move(g));
  }
  return t;
}

nlohmann::json ZeroShotResult::record() const {
  auto scales = nlohmann::json::array();
  std::size_t forced = 0, generated = 0;
  for (std::size_t k = 0; k < mask.schedule.size(); ++k) {
    scales.push_back({{"h", mask.schedule[k].h},
                      {"w", mask.schedule[k].w},
                      {"forced", mask.forced(k)},
                      {"generated", mask.generated(k)}});
    forced += mask.forced(k);
    generated += mask.generated(k);
  }
  return {{"task", task},
          {"class_label", class_label},
          {"scales", scales},
          {"forced", forced},
          {"generated", generated}};
}

ZeroShotResult zero_shot(const VarModel& model, const VqVae& vqvae, const Image& image, const PixelMask& mask,
                         int label, const GenerationParams& params, const std::string& task) {
  expects(model.config().schedule == vqvae.schedule(), "zero-shot: model and tokenizer schedules differ");
  expects(image.width == vqvae.config().image_size && image.height == vqvae.config().image_size &&
              image.channels == 3,
          "zero-shot: image must be " + std::to_string(vqvae.config().image_size) + "x" +
              std::to_string(vqvae.config().image_size) + " RGB");
  expects(mask.width == image.width && mask.height == image.height, "zero-shot: mask and image sizes differ");

  ZeroShotResult r;
  r.task = task;
  r.class_label = label;
  r.ground_truth = vqvae.tokenize(images_to_tensor({image}))[0];
  r.mask = downscale_mask(mask, vqvae.schedule());
  if (!r.mask.any()) {
    r.tokens = r.ground_truth;
  } else {
    const std::vector<ForcedTokens> forcing{{r.ground_truth, r.mask.generate}};
    SampleOptions opt;
    opt.params = params;
    opt.params.class_label = label;
    opt.forcing = &forcing;
    r.tokens = sample_var(model, vqvae, opt).tokens[0];
  }
  r.image = tensor_to_image(vqvae.decode_tokens({r.tokens}));
  return r;
}

ZeroShotResult inpaint(const VarModel& model, const VqVae& vqvae, const Image& image, const PixelMask& mask,
                       const GenerationParams& params) {
  return zero_shot(model, vqvae, image, mask, -1, params, "inpaint");
}

ZeroShotResult outpaint(const VarModel& model, const VqVae& vqvae, const Image& image, const BBox& keep,
                        const GenerationParams& params) {
  return zero_shot(model, vqvae, image, complement(bbox_mask(image.width, image.height, keep)), -1, params,
                   "outpaint");
}

ZeroShotResult class_edit(const VarModel& model, const VqVae& vqvae, const Image& image, const BBox& box, int label,
                          const GenerationParams& params) {
  expects(label >= 0 && static_cast<std::size_t>(label) < model.config().num_classes,
          "class_edit: class " + std::to_string(label) + " out of range");
  return zero_shot(model, vqvae, image, bbox_mask(image.width, image.height, box), label, params, "class_edit");
}

}  // namespace varlab
