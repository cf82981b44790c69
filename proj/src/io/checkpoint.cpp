#include "varlab/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "varlab/data/dataset.hpp"
#include "varlab/errors.hpp"
#include "varlab/io/image_io.hpp"

namespace varlab {

namespace {

constexpr const char* kFormat = "varlab-checkpoint";
constexpr int kVersion = 1;

void put_le(std::vector<std::uint8_t>& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::filesystem::path blob_path(const std::filesystem::path& path) {
  auto b = path;
  b.replace_extension(".bin");
  return b;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const nn::ParameterList& params, const nlohmann::json& extra) {
  std::vector<std::uint8_t> blob;
  auto table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params.items()) {
    for (float v : p.tensor.data()) put_le(blob, v);
    table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"numel", p.tensor.numel()}});
    offset += p.tensor.numel();
  }
  const auto bin = blob_path(path);
  nlohmann::json manifest = {{"format", kFormat},
                             {"version", kVersion},
                             {"kind", kind},
                             {"config", config},
                             {"extra", extra},
                             {"blob", bin.filename().string()},
                             {"blob_sha256", sha256_hex(blob)},
                             {"tensors", table}};
  write_file(bin, blob);
  write_text(path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  Checkpoint c;
  try {
    if (m.at("format") != kFormat || m.at("version") != kVersion) {
      throw DataError(path.string() + " is not a version " + std::to_string(kVersion) + " checkpoint");
    }
    c.kind = m.at("kind").get<std::string>();
    c.config = m.at("config");
    c.extra = m.value("extra", nlohmann::json::object());
    const auto blob = read_file(path.parent_path() / m.at("blob").get<std::string>());
    if (sha256_hex(blob) != m.at("blob_sha256").get<std::string>()) {
      throw DataError("checkpoint blob hash mismatch for " + path.string());
    }
    for (const auto& t : m.at("tensors")) {
      CheckpointTensor ct;
      ct.name = t.at("name").get<std::string>();
      ct.shape = t.at("shape").get<Shape>();
      const auto off = t.at("offset").get<std::size_t>(), n = t.at("numel").get<std::size_t>();
      if (n != shape_numel(ct.shape) || (off + n) * 4 > blob.size()) {
        throw DataError("checkpoint tensor " + ct.name + " does not fit the blob");
      }
      ct.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) ct.values[i] = get_le(blob.data() + 4 * (off + i));
      c.tensors.push_back(std::move(ct));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  return c;
}

void restore_parameters(const Checkpoint& ckpt, const nn::ParameterList& params) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  if (by_name.size() != params.items().size()) {
    throw DataError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                    std::to_string(params.items().size()));
  }
  for (const auto& p : params.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw DataError("checkpoint tensor " + p.name + " has shape " + shape_str(it->second->shape) + ", model wants " +
                      shape_str(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::memcpy(t.mutable_data().data(), it->second->values.data(), it->second->values.size() * sizeof(float));
  }
}

}  // namespace varlab
