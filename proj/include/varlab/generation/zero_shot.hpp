#pragma once

// In-painting, out-painting and class-conditional editing without any
// fine-tuning: tokens outside the edit region are forced to the image's own
// encoding, tokens inside are sampled.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlab/io/image_io.hpp"
#include "varlab/tokenizer/schedule.hpp"
#include "varlab/var/sampling.hpp"

namespace varlab {

class VarModel;
class VqVae;

// Pixel-space edit region: nonzero = generate.
struct PixelMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> generate;

  static PixelMask from_pgm(const Image& gray);  // 0 keeps, anything else generates
  Image to_pgm() const;                           // 0 / 255
  bool any() const;
};

struct BBox {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  std::size_t area() const { return w * h; }
};
// "x,y,w,h"; throws ContractViolation on bad syntax.
BBox parse_bbox(const std::string& text);
// Throws ContractViolation if the box leaves the image.
PixelMask bbox_mask(std::size_t width, std::size_t height, const BBox& box);
PixelMask complement(const PixelMask& m);

// Per-scale generate flags; true = sample, false = teacher-force.
struct TokenMask {
  ScaleSchedule schedule;
  std::vector<std::vector<std::uint8_t>> generate;

  std::size_t generated(std::size_t k) const;
  std::size_t forced(std::size_t k) const { return schedule.tokens(k) - generated(k); }
  bool any() const;
};

// Token cell (i, j) of an h x w scale covers pixel rows [floor(i H / h),
// ceil((i + 1) H / h)) and likewise for columns. It is generated if any
// covered pixel is.
TokenMask downscale_mask(const PixelMask& mask, const ScaleSchedule& schedule);

struct ZeroShotResult {
  std::string task;
  int class_label = -1;  // -1: null class
  MultiScaleTokens ground_truth;
  MultiScaleTokens tokens;
  TokenMask mask;
  Image image;

  // {task, class_label, scales: [{h, w, forced, generated}], forced, generated}
  nlohmann::json record() const;
};

// Shared driver. label -1 uses the null class. An empty mask returns the
// ground-truth tokens and their decoding without sampling.
ZeroShotResult zero_shot(const VarModel& model, const VqVae& vqvae, const Image& image, const PixelMask& mask,
                         int label, const GenerationParams& params, const std::string& task = "zero_shot");

// No class information: the null class is used whatever params says.
ZeroShotResult inpaint(const VarModel& model, const VqVae& vqvae, const Image& image, const PixelMask& mask,
                       const GenerationParams& params);
// Generates everything outside `keep`.
ZeroShotResult outpaint(const VarModel& model, const VqVae& vqvae, const Image& image, const BBox& keep,
                        const GenerationParams& params);
// Generates inside `box` conditioned on `label` (guidance from params.cfg).
ZeroShotResult class_edit(const VarModel& model, const VqVae& vqvae, const Image& image, const BBox& box, int label,
                          const GenerationParams& params);

}  // namespace varlab
