#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "varlab/numerics/ops.hpp"
#include "varlab/numerics/tensor.hpp"

namespace varlab::nn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Ordered (name, tensor) list; checkpoints and the optimizer walk it in order.
class ParameterList {
 public:
  void add(std::string name, Tensor t) { items_.push_back({std::move(name), std::move(t)}); }
  void append(const ParameterList& other, const std::string& prefix) {
    for (const auto& p : other.items_) items_.push_back({prefix + p.name, p.tensor});
  }
  const std::vector<NamedParameter>& items() const { return items_; }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<NamedParameter> items_;
};

inline Tensor normal_parameter(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor zero_parameter(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<float>(n, 0.0f));
}

// y = x @ W (+ b), W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, double stddev, std::mt19937_64& rng)
      : weight(normal_parameter({in, out}, stddev, rng)) {
    if (with_bias) bias = zero_parameter({out});
  }

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

  ParameterList parameters() const {
    ParameterList p;
    p.add("weight", weight);
    if (bias.defined()) p.add("bias", bias);
    return p;
  }
};

// Square-kernel NHWC convolution, weight stored [k, k, Cin, Cout].
struct Conv2d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad_,
         std::mt19937_64& rng)
      : weight(normal_parameter({kernel, kernel, in, out},
                                std::sqrt(2.0 / static_cast<double>(kernel * kernel * in)), rng)),
        bias(zero_parameter({out})),
        stride(stride_),
        pad(pad_) {}

  static Conv2d zeros(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad_) {
    Conv2d c;
    c.weight = zero_parameter({kernel, kernel, in, out});
    c.bias = zero_parameter({out});
    c.stride = 1;
    c.pad = pad_;
    return c;
  }

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

  ParameterList parameters() const {
    ParameterList p;
    p.add("weight", weight);
    p.add("bias", bias);
    return p;
  }
};

}  // namespace varlab::nn
