#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "varlab/tokenizer/schedule.hpp"

namespace varlab {

// Where the class start token sits in the attention sequence.
//   merged:   the start token fills the positions of scale 0, so the
//             sequence has sum_k h_k w_k positions (what the model runs).
//   separate: the start token is its own one-position block in front of
//             r_1..r_K.
enum class StartTokenLayout { merged, separate };

struct BlockCausalMask {
  std::vector<int> block;  // block index per position

  std::size_t size() const { return block.size(); }
  bool allowed(std::size_t query, std::size_t key) const { return block[key] <= block[query]; }
  std::size_t allowed_count() const;
  // Row-major size x size, 1 where attention is permitted.
  std::vector<std::uint8_t> matrix() const;
};

BlockCausalMask build_block_causal_mask(const ScaleSchedule& schedule,
                                        StartTokenLayout layout = StartTokenLayout::merged);

}  // namespace varlab
