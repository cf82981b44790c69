#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace varlab {

struct ScaleSize {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t area() const { return h * w; }
  bool operator==(const ScaleSize&) const = default;
};

// Resolution ladder (h_k, w_k), k = 0..K-1, nondecreasing in both axes. The
// last entry is the latent resolution. Token positions of all scales are
// laid out back to back, coarsest first, each scale row-major.
class ScaleSchedule {
 public:
  ScaleSchedule() = default;
  explicit ScaleSchedule(std::vector<ScaleSize> sizes);

  // Square scales with the given side lengths, e.g. {1, 2, 4, 8}.
  static ScaleSchedule square(const std::vector<std::size_t>& sides);
  // Sides a^0, a^1, ..., n. Requires n to be a power of a.
  static ScaleSchedule geometric(std::size_t n, std::size_t a);

  std::size_t size() const { return sizes_.size(); }
  bool empty() const { return sizes_.empty(); }
  const ScaleSize& operator[](std::size_t k) const { return sizes_[k]; }
  const ScaleSize& last() const { return sizes_.back(); }
  const std::vector<ScaleSize>& sizes() const { return sizes_; }

  std::size_t tokens(std::size_t k) const { return sizes_[k].area(); }
  std::size_t total_tokens() const { return offsets_.back(); }
  // First flattened position of scale k; offset(K) == total_tokens().
  std::size_t offset(std::size_t k) const { return offsets_[k]; }
  // Scale index of every flattened position.
  std::vector<int> block_ids() const;

  bool operator==(const ScaleSchedule& o) const { return sizes_ == o.sizes_; }

 private:
  std::vector<ScaleSize> sizes_;
  std::vector<std::size_t> offsets_{0};
};

// r_1..r_K: one row-major integer map per scale, entries in [0, vocab).
struct MultiScaleTokens {
  ScaleSchedule schedule;
  std::vector<std::vector<int>> maps;
  std::size_t vocab = 0;

  // Throws ContractViolation on shape or range problems.
  void validate() const;
  std::vector<int> flatten() const;
  static MultiScaleTokens unflatten(const ScaleSchedule& s, std::size_t vocab, const std::vector<int>& flat);
  bool operator==(const MultiScaleTokens&) const = default;
};

}  // namespace varlab
