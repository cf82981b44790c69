#include "varlab/tokenizer/schedule.hpp"

#include <string>

#include "varlab/errors.hpp"

namespace varlab {

ScaleSchedule::ScaleSchedule(std::vector<ScaleSize> sizes) : sizes_(std::move(sizes)) {
  expects(!sizes_.empty(), "scale schedule must have at least one scale");
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    expects(sizes_[k].h >= 1 && sizes_[k].w >= 1, "scale schedule entries must be positive");
    if (k > 0) {
      expects(sizes_[k].h >= sizes_[k - 1].h && sizes_[k].w >= sizes_[k - 1].w,
              "scale schedule must be nondecreasing (scale " + std::to_string(k) + ")");
    }
    offsets_.push_back(offsets_.back() + sizes_[k].area());
  }
}

ScaleSchedule ScaleSchedule::square(const std::vector<std::size_t>& sides) {
  std::vector<ScaleSize> s;
  for (auto side : sides) s.push_back({side, side});
  return ScaleSchedule(std::move(s));
}

ScaleSchedule ScaleSchedule::geometric(std::size_t n, std::size_t a) {
  expects(a >= 2, "geometric schedule needs ratio a >= 2");
  expects(n >= 1, "geometric schedule needs n >= 1");
  std::vector<std::size_t> sides{1};
  while (sides.back() < n) sides.push_back(sides.back() * a);
  expects(sides.back() == n, std::to_string(n) + " is not a power of " + std::to_string(a));
  return square(sides);
}

std::vector<int> ScaleSchedule::block_ids() const {
  std::vector<int> ids;
  ids.reserve(total_tokens());
  for (std::size_t k = 0; k < sizes_.size(); ++k) ids.insert(ids.end(), sizes_[k].area(), static_cast<int>(k));
  return ids;
}

void MultiScaleTokens::validate() const {
  expects(!schedule.empty(), "token maps need a nonempty schedule");
  expects(maps.size() == schedule.size(), "expected " + std::to_string(schedule.size()) + " token maps, got " +
                                              std::to_string(maps.size()));
  expects(vocab >= 1, "token vocabulary must be nonempty");
  for (std::size_t k = 0; k < maps.size(); ++k) {
    expects(maps[k].size() == schedule.tokens(k), "token map " + std::to_string(k) + " has wrong size");
    for (int v : maps[k]) {
      expects(v >= 0 && static_cast<std::size_t>(v) < vocab,
              "token " + std::to_string(v) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
}

std::vector<int> MultiScaleTokens::flatten() const {
  std::vector<int> flat;
  flat.reserve(schedule.total_tokens());
  for (const auto& m : maps) flat.insert(flat.end(), m.begin(), m.end());
  return flat;
}

MultiScaleTokens MultiScaleTokens::unflatten(const ScaleSchedule& s, std::size_t vocab, const std::vector<int>& flat) {
  expects(flat.size() == s.total_tokens(), "flattened token count does not match schedule");
  MultiScaleTokens t{s, {}, vocab};
  for (std::size_t k = 0; k < s.size(); ++k) {
    t.maps.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(s.offset(k)),
                        flat.begin() + static_cast<std::ptrdiff_t>(s.offset(k + 1)));
  }
  t.validate();
  return t;
}

}  // namespace varlab
