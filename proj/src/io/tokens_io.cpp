#include "varlab/io/tokens_io.hpp"

#include <string>

#include "varlab/errors.hpp"
#include "varlab/tokenizer/vqvae.hpp"

namespace varlab {

nlohmann::json tokens_to_json(const MultiScaleTokens& t) {
  t.validate();
  return {{"schedule", schedule_to_json(t.schedule)}, {"maps", t.maps}, {"vocab", t.vocab}};
}

MultiScaleTokens tokens_from_json(const nlohmann::json& j) {
  MultiScaleTokens t;
  try {
    const auto& s = j.at("schedule");
    if (!s.is_array() || s.empty()) throw DataError("tokens: schedule must be a nonempty array");
    t.schedule = schedule_from_json(s);
    t.vocab = j.at("vocab").get<std::size_t>();
    t.maps = j.at("maps").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("tokens: " + std::string(e.what()));
  } catch (const ContractViolation& e) {
    throw DataError(std::string("tokens: ") + e.what());
  }
  try {
    t.validate();
  } catch (const ContractViolation& e) {
    throw DataError(std::string("tokens: ") + e.what());
  }
  return t;
}

nlohmann::json token_batch_to_json(const std::vector<MultiScaleTokens>& batch) {
  auto j = nlohmann::json::array();
  for (const auto& t : batch) j.push_back(tokens_to_json(t));
  return j;
}

std::vector<MultiScaleTokens> token_batch_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("tokens: expected an array of token records");
  std::vector<MultiScaleTokens> out;
  for (const auto& e : j) out.push_back(tokens_from_json(e));
  return out;
}

}  // namespace varlab
