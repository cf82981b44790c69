#include "varlab/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <openssl/evp.h>

#include "varlab/errors.hpp"

namespace varlab {

void DatasetSpec::validate() const {
  expects(image_size >= 4, "dataset: image size must be at least 4");
  expects(num_classes >= 1 && num_classes <= kPatternFamilies,
          "dataset: class count must be in [1, " + std::to_string(kPatternFamilies) + "]");
  expects(samples_per_class >= 1, "dataset: need at least one sample per class");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"image_size", s.image_size},
       {"num_classes", s.num_classes},
       {"samples_per_class", s.samples_per_class},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s = DatasetSpec{};
  if (j.contains("image_size")) j.at("image_size").get_to(s.image_size);
  if (j.contains("num_classes")) j.at("num_classes").get_to(s.num_classes);
  if (j.contains("samples_per_class")) j.at("samples_per_class").get_to(s.samples_per_class);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

namespace {

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Own generator so the pixels do not depend on the standard library's
// distribution implementations.
class Draw {
 public:
  Draw(std::uint64_t seed, int label, std::size_t index)
      : state_(seed ^ (0x6a09e667f3bcc909ULL * (static_cast<std::uint64_t>(label) + 1)) ^
               (0xbb67ae8584caa73bULL * (index + 1))) {
    splitmix(state_);
  }
  double uniform() { return static_cast<double>(splitmix(state_) >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

struct Rgb {
  double r, g, b;
};

Rgb random_colour(Draw& d) {
  // Saturated hue with random brightness keeps classes about colour-agnostic.
  const double h = d.uniform(0.0, 6.0), v = d.uniform(0.55, 1.0), s = d.uniform(0.5, 1.0);
  const double c = v * s, x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0)), m = v - c;
  Rgb o{};
  switch (static_cast<int>(h)) {
    case 0: o = {c, x, 0}; break;
    case 1: o = {x, c, 0}; break;
    case 2: o = {0, c, x}; break;
    case 3: o = {0, x, c}; break;
    case 4: o = {x, 0, c}; break;
    default: o = {c, 0, x}; break;
  }
  return {o.r + m, o.g + m, o.b + m};
}

Rgb dark(Draw& d) {
  const Rgb c = random_colour(d);
  const double f = d.uniform(0.05, 0.3);
  return {c.r * f, c.g * f, c.b * f};
}

// Coverage in [0, 1] of the foreground at (u, v), both in [0, 1).
using Pattern = double (*)(double u, double v, const double* p);

double h_stripes(double, double v, const double* p) { return std::sin(2 * std::numbers::pi * (v * p[0] + p[1])) > 0; }
double v_stripes(double u, double, const double* p) { return std::sin(2 * std::numbers::pi * (u * p[0] + p[1])) > 0; }
double disc(double u, double v, const double* p) {
  return std::hypot(u - p[2], v - p[3]) < p[4];
}
double square(double u, double v, const double* p) {
  return std::fabs(u - p[2]) < p[4] * 0.9 && std::fabs(v - p[3]) < p[4] * 0.9;
}
double gradient(double u, double v, const double* p) {
  const double t = (u * std::cos(p[5]) + v * std::sin(p[5]) + 1.5) / 3.0;
  return std::clamp(t, 0.0, 1.0);
}
double checker(double u, double v, const double* p) {
  const int a = static_cast<int>(std::floor(u * p[0] + p[1])), b = static_cast<int>(std::floor(v * p[0] + p[1]));
  return ((a + b) & 1) != 0;
}
double ring(double u, double v, const double* p) {
  const double r = std::hypot(u - p[2], v - p[3]);
  return r < p[4] && r > p[4] * 0.55;
}
double cross(double u, double v, const double* p) {
  const double t = p[4] * 0.3;
  return (std::fabs(u - p[2]) < t && std::fabs(v - p[3]) < p[4]) ||
         (std::fabs(v - p[3]) < t && std::fabs(u - p[2]) < p[4]);
}

constexpr Pattern kPatterns[kPatternFamilies] = {h_stripes, v_stripes, disc, square, gradient, checker, ring, cross};

}  // namespace

Image render_sample(const DatasetSpec& spec, int label, std::size_t index) {
  spec.validate();
  expects(label >= 0 && static_cast<std::size_t>(label) < spec.num_classes, "dataset: label out of range");
  Draw d(spec.seed, label, index);
  const Rgb fg = random_colour(d), bg = dark(d);
  // frequency, phase, centre x, centre y, radius, angle
  const double p[6] = {d.uniform(2.0, 4.5), d.uniform(0.0, 1.0), d.uniform(0.35, 0.65), d.uniform(0.35, 0.65),
                       d.uniform(0.22, 0.34), d.uniform(0.0, 2 * std::numbers::pi)};
  const Pattern pat = kPatterns[label];

  Image img;
  img.width = img.height = spec.image_size;
  img.channels = 3;
  img.pixels.resize(spec.image_size * spec.image_size * 3);
  const double inv = 1.0 / static_cast<double>(spec.image_size);
  for (std::size_t y = 0; y < spec.image_size; ++y) {
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      double cover = 0.0;  // 2x2 supersampling
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) cover += pat((x + 0.25 + 0.5 * sx) * inv, (y + 0.25 + 0.5 * sy) * inv, p);
      }
      cover *= 0.25;
      const double rgb[3] = {bg.r + (fg.r - bg.r) * cover, bg.g + (fg.g - bg.g) * cover,
                             bg.b + (fg.b - bg.b) * cover};
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c], 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.images.reserve(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    ds.images.push_back(render_sample(spec, label, i / spec.num_classes));
    ds.labels.push_back(label);
  }
  return ds;
}

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> b) { EVP_DigestUpdate(ctx_, b.data(), b.size()); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
      s += digits[md[i] >> 4];
      s += digits[md[i] & 15];
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::vector<std::string> class_checksums(const Dataset& ds) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < ds.spec.num_classes; ++c) {
    Sha256 h;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == static_cast<int>(c)) h.update(ds.images[i].pixels);
    }
    out.push_back(h.hex());
  }
  return out;
}

nlohmann::json dataset_manifest(const Dataset& ds) {
  Sha256 all;
  for (const auto& img : ds.images) all.update(img.pixels);
  return {{"spec", ds.spec}, {"count", ds.size()}, {"class_checksums", class_checksums(ds)}, {"checksum", all.hex()}};
}

DatasetSplit split_dataset(const Dataset& ds, double test_fraction) {
  expects(test_fraction > 0.0 && test_fraction < 1.0, "split: test fraction must be in (0, 1)");
  const std::size_t per = ds.spec.samples_per_class;
  const auto held = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(per * test_fraction)));
  expects(held < per, "split: every class needs at least one training sample");
  DatasetSplit s;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (i / ds.spec.num_classes >= per - held ? s.test : s.train).push_back(i);
  }
  return s;
}

Tensor images_to_tensor(const std::vector<Image>& images, std::span<const std::size_t> indices) {
  expects(!indices.empty(), "images_to_tensor: no images selected");
  const Image& first = images.at(indices.front());
  const std::size_t h = first.height, w = first.width;
  std::vector<float> v;
  v.reserve(indices.size() * h * w * 3);
  for (std::size_t i : indices) {
    const Image& img = images.at(i);
    expects(img.height == h && img.width == w && img.channels == 3, "images_to_tensor: images differ in shape");
    for (std::uint8_t p : img.pixels) v.push_back(static_cast<float>(p / 127.5 - 1.0));
  }
  return Tensor::from_data({indices.size(), h, w, 3}, std::move(v));
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  std::vector<std::size_t> idx(images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return images_to_tensor(images, idx);
}

Image tensor_to_image(const Tensor& t) {
  const bool batched = t.rank() == 4;
  expects((t.rank() == 3 || (batched && t.dim(0) == 1)) && t.dim(-1) == 3,
          "tensor_to_image: expected [H, W, 3] or [1, H, W, 3], got " + shape_str(t.shape()));
  Image img;
  img.height = t.dim(-3);
  img.width = t.dim(-2);
  img.channels = 3;
  img.pixels.reserve(t.numel());
  for (float x : t.data()) {
    const double v = std::clamp((static_cast<double>(x) + 1.0) * 127.5, 0.0, 255.0);
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(v)));
  }
  return img;
}

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  for (std::size_t i : indices) out.push_back(ds.labels.at(i));
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::vector<std::uint8_t> blob;
  for (const auto& img : ds.images) blob.insert(blob.end(), img.pixels.begin(), img.pixels.end());
  write_file(dir / "images.bin", blob);
  write_text(dir / "dataset.json", dataset_manifest(ds).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(dir / "dataset.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("dataset.json: " + std::string(e.what()), e.byte);
  }
  Dataset ds;
  try {
    ds.spec = manifest.at("spec").get<DatasetSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset.json: bad spec: " + std::string(e.what()));
  }
  ds.spec.validate();
  const auto blob = read_file(dir / "images.bin");
  const std::size_t per = ds.spec.image_size * ds.spec.image_size * 3;
  if (blob.size() != per * ds.spec.size()) {
    throw DataError("images.bin holds " + std::to_string(blob.size()) + " bytes, expected " +
                    std::to_string(per * ds.spec.size()));
  }
  for (std::size_t i = 0; i < ds.spec.size(); ++i) {
    Image img;
    img.width = img.height = ds.spec.image_size;
    img.pixels.assign(blob.begin() + static_cast<std::ptrdiff_t>(i * per),
                      blob.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<int>(i % ds.spec.num_classes));
  }
  if (manifest.value("class_checksums", nlohmann::json::array()) != nlohmann::json(class_checksums(ds))) {
    throw DataError("dataset checksums do not match " + (dir / "dataset.json").string());
  }
  return ds;
}

}  // namespace varlab
