#include "varlab/var/mask.hpp"

namespace varlab {

std::size_t BlockCausalMask::allowed_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j) n += allowed(i, j) ? 1 : 0;
  return n;
}

std::vector<std::uint8_t> BlockCausalMask::matrix() const {
  std::vector<std::uint8_t> m(size() * size());
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j) m[i * size() + j] = allowed(i, j) ? 1 : 0;
  return m;
}

BlockCausalMask build_block_causal_mask(const ScaleSchedule& schedule, StartTokenLayout layout) {
  BlockCausalMask m;
  if (layout == StartTokenLayout::separate) {
    m.block.push_back(0);
    for (int id : schedule.block_ids()) m.block.push_back(id + 1);
  } else {
    m.block = schedule.block_ids();
  }
  return m;
}

}  // namespace varlab
