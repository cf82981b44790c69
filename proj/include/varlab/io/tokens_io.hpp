#pragma once

#include <vector>

#include <json.hpp>

#include "varlab/tokenizer/schedule.hpp"

namespace varlab {

// {"schedule": [[h, w], ...], "maps": [[...], ...], "vocab": V}
nlohmann::json tokens_to_json(const MultiScaleTokens& t);
// Throws DataError on a schema problem, an empty schedule or a token
// outside [0, vocab).
MultiScaleTokens tokens_from_json(const nlohmann::json& j);

nlohmann::json token_batch_to_json(const std::vector<MultiScaleTokens>& batch);
std::vector<MultiScaleTokens> token_batch_from_json(const nlohmann::json& j);

}  // namespace varlab
