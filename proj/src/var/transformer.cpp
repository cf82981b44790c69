#include "varlab/var/transformer.hpp"

#include <cmath>
#include <string>

#include "varlab/errors.hpp"
#include "varlab/numerics/ops.hpp"

namespace varlab {

std::uint64_t n_of_d(std::uint64_t d) {
  expects(d >= 1, "n_of_d: depth must be at least 1");
  return 73728ULL * d * d * d;
}

std::uint64_t param_count_formula(std::uint64_t d) { return n_of_d(d); }

double TransformerShape::temperature() const {
  return qk_temperature > 0.0 ? qk_temperature : std::sqrt(static_cast<double>(head_dim()));
}

void TransformerShape::validate() const {
  expects(depth >= 1, "transformer: depth must be at least 1");
  expects(heads >= 1 && width % heads == 0,
          "transformer: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  expects(vocab >= 2, "transformer: vocabulary needs at least two tokens");
  expects(dropout >= 0.0 && dropout < 1.0, "transformer: dropout must be in [0, 1)");
  expects(std::isfinite(qk_temperature) && qk_temperature >= 0.0, "transformer: bad qk temperature");
}

TransformerCore::TransformerCore(const TransformerShape& shape, std::mt19937_64& rng) : shape_(shape) {
  shape_.validate();
  const std::size_t w = shape_.width;
  const double sd = shape_.init_std;
  for (std::size_t i = 0; i < shape_.depth; ++i) {
    Block b;
    b.ada = nn::Linear(w, 6 * w, false, sd, rng);
    b.qkv = nn::Linear(w, 3 * w, false, sd, rng);
    b.proj = nn::Linear(w, w, false, sd, rng);
    b.fc1 = nn::Linear(w, 4 * w, false, sd, rng);
    b.fc2 = nn::Linear(4 * w, w, false, sd, rng);
    blocks_.push_back(std::move(b));
  }
  final_ada_ = nn::Linear(w, 2 * w, false, sd, rng);
  head_ = nn::Linear(w, shape_.vocab, true, sd, rng);
}

TransformerCore::Modulation TransformerCore::modulation(const Block& b, const Tensor& cond_act) const {
  const std::size_t w = shape_.width;
  auto m = b.ada(cond_act);
  return {ops::slice_last(m, 0, w),     ops::slice_last(m, w, w),     ops::slice_last(m, 2 * w, w),
          ops::slice_last(m, 3 * w, w), ops::slice_last(m, 4 * w, w), ops::slice_last(m, 5 * w, w)};
}

Tensor TransformerCore::run_block(const Block& b, const Modulation& m, const Tensor& x, const Tensor& keys_prefix,
                                  const Tensor& values_prefix, const std::vector<int>& block_ids,
                                  std::mt19937_64* dropout_rng, Tensor* k_out, Tensor* v_out) const {
  const std::size_t w = shape_.width;
  auto h = ops::modulate(ops::layer_norm(x), m.scale1, m.shift1);
  auto qkv = b.qkv(h);
  auto q = ops::slice_last(qkv, 0, w);
  auto k = ops::slice_last(qkv, w, w);
  auto v = ops::slice_last(qkv, 2 * w, w);
  if (keys_prefix.defined()) {
    k = ops::concat_seq<float>({keys_prefix, k});
    v = ops::concat_seq<float>({values_prefix, v});
  }
  if (k_out) *k_out = k;
  if (v_out) *v_out = v;

  ops::AttentionOptions opt;
  opt.heads = shape_.heads;
  opt.qk_norm = true;
  opt.scale = shape_.temperature();
  opt.query_block = block_ids;
  opt.key_block = block_ids;
  auto a = b.proj(ops::attention(q, k, v, opt));
  if (dropout_rng) a = ops::dropout(a, shape_.dropout, *dropout_rng);
  auto x1 = ops::gated_residual(x, m.gate1, a);

  auto h2 = ops::modulate(ops::layer_norm(x1), m.scale2, m.shift2);
  auto y = b.fc2(ops::gelu(b.fc1(h2)));
  if (dropout_rng) y = ops::dropout(y, shape_.dropout, *dropout_rng);
  return ops::gated_residual(x1, m.gate2, y);
}

Tensor TransformerCore::head(const Tensor& x, const Tensor& cond_act) const {
  const std::size_t w = shape_.width;
  auto m = final_ada_(cond_act);
  auto h = ops::modulate(ops::layer_norm(x), ops::slice_last(m, 0, w), ops::slice_last(m, w, w));
  return head_(h);
}

namespace {

void check_inputs(const Tensor& x, const Tensor& cond, std::size_t width) {
  expects(x.rank() == 3 && x.dim(2) == width, "transformer: input must be [B, T, " + std::to_string(width) +
                                                  "], got " + shape_str(x.shape()));
  expects(cond.rank() == 2 && cond.dim(0) == x.dim(0) && cond.dim(1) == width,
          "transformer: conditioning must be [B, width], got " + shape_str(cond.shape()));
}

}  // namespace

Tensor TransformerCore::forward(const Tensor& x, const Tensor& cond, const std::vector<int>& block_ids,
                                std::mt19937_64* dropout_rng, AttentionTrace* trace) const {
  check_inputs(x, cond, shape_.width);
  expects(block_ids.empty() || block_ids.size() == x.dim(1), "transformer: block ids do not match sequence length");
  if (trace) trace->push_back({x.dim(1), x.dim(1)});
  auto cond_act = ops::silu(cond);
  Tensor h = x;
  for (const auto& b : blocks_) h = run_block(b, modulation(b, cond_act), h, {}, {}, block_ids, dropout_rng, nullptr, nullptr);
  return head(h, cond_act);
}

Tensor TransformerCore::forward_cached(const Tensor& x_new, const Tensor& cond, KvCache& cache,
                                       AttentionTrace* trace) const {
  check_inputs(x_new, cond, shape_.width);
  NoGradGuard no_grad;
  if (cache.layers_.empty()) {
    cache.layers_.resize(blocks_.size());
  } else {
    expects(cache.layers_.size() == blocks_.size(), "kv cache belongs to a different model");
    expects(cache.length() == 0 || cache.layers_.front().k.dim(0) == x_new.dim(0), "kv cache batch size mismatch");
  }
  if (trace) trace->push_back({x_new.dim(1), cache.length() + x_new.dim(1)});
  auto cond_act = ops::silu(cond);
  Tensor h = x_new;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& layer = cache.layers_[i];
    Tensor k, v;
    h = run_block(blocks_[i], modulation(blocks_[i], cond_act), h, layer.k, layer.v, {}, nullptr, &k, &v);
    layer.k = k;
    layer.v = v;
  }
  return head(h, cond_act);
}

nn::ParameterList TransformerCore::parameters() const {
  nn::ParameterList p;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    p.append(blocks_[i].ada.parameters(), pre + "ada.");
    p.append(blocks_[i].qkv.parameters(), pre + "qkv.");
    p.append(blocks_[i].proj.parameters(), pre + "proj.");
    p.append(blocks_[i].fc1.parameters(), pre + "fc1.");
    p.append(blocks_[i].fc2.parameters(), pre + "fc2.");
  }
  p.append(final_ada_.parameters(), "final_ada.");
  p.append(head_.parameters(), "head.");
  return p;
}

std::size_t TransformerCore::core_parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    for (const auto* l : {&b.ada, &b.qkv, &b.proj, &b.fc1, &b.fc2}) n += l->parameters().count();
  }
  return n;
}

}  // namespace varlab
