#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/layer_checks.hpp"
#include "varlab/numerics/kernels.hpp"
#include "varlab/numerics/nn.hpp"
#include "varlab/numerics/ops.hpp"
#include "varlab/numerics/optim.hpp"

using namespace varlab;
using varlab::testing::grad_check;
using varlab::testing::Projection;
using varlab::testing::random_param;
using varlab::testing::TensorD;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("backward of sum(x*x) is 2x") {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  auto loss = ops::sum(ops::mul(x, x));
  auto reached = backward(loss);
  REQUIRE(reached.size() == 1);
  CHECK(x.grad()[0] == 2.0f);
  CHECK(x.grad()[1] == 4.0f);
  CHECK(x.grad()[2] == 6.0f);
}

TEST_CASE("backward of a constant reaches nothing") {
  auto c = Tensor::from_data({2}, {1, 2});
  auto loss = ops::sum(c);
  CHECK(backward(loss).empty());
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor::parameter({2}, {1, 2});
  CHECK_THROWS_AS(backward(ops::mul(x, x)), ContractViolation);
}

TEST_CASE("backward names the op that produced a NaN gradient") {
  auto x = Tensor::parameter({2}, {0.0f, 1.0f});
  auto s = ops::scale(x, std::numeric_limits<double>::quiet_NaN());
  try {
    backward(ops::sum(s));
    FAIL("expected NumericFailure");
  } catch (const NumericFailure& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("gradient check: two-layer MLP against central differences") {
  std::mt19937_64 rng(11);
  auto x = random_param({5, 4}, rng);
  auto w1 = random_param({4, 6}, rng), b1 = random_param({6}, rng);
  auto w2 = random_param({6, 3}, rng), b2 = random_param({3}, rng);
  Projection proj(5 * 3, rng);
  auto loss = [&] {
    auto h = ops::gelu(ops::linear(x, w1, b1));
    return proj(ops::linear(h, w2, b2));
  };
  auto r = grad_check(loss, {x, w1, b1, w2, b2}, 1e-3);
  CHECK(r.checked == 20 + 24 + 6 + 18 + 3);
  CHECK(r.max_rel_error < kGradTol);
}

TEST_CASE("gradient check: elementwise activations") {
  std::mt19937_64 rng(3);
  auto x = varlab::testing::random_param_away_from_zero({7, 3}, rng);
  Projection proj(21, rng);
  for (int which = 0; which < 3; ++which) {
    auto loss = [&] {
      if (which == 0) return proj(ops::relu(x));
      if (which == 1) return proj(ops::silu(x));
      return proj(ops::gelu(x));
    };
    CHECK(grad_check(loss, {x}).max_rel_error < kGradTol);
  }
}

TEST_CASE("softmax cross-entropy values") {
  SUBCASE("uniform logits give ln V") {
    auto logits = Tensor::from_data({2, 4}, std::vector<float>(8, 0.5f));
    std::vector<int> t{0, 3};
    auto ce = ops::softmax_cross_entropy(logits, t);
    CHECK(ce.loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    CHECK(ce.stats.nll[1] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    // ties resolve to index 0
    CHECK(ce.stats.correct[0]);
    CHECK_FALSE(ce.stats.correct[1]);
  }
  SUBCASE("dominant target logit") {
    auto logits = Tensor::from_data({1, 3}, {0.0f, 1e4f, 0.0f});
    std::vector<int> t{1};
    auto ce = ops::softmax_cross_entropy(logits, t);
    CHECK(ce.loss.item() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(ce.stats.correct[0]);
  }
  SUBCASE("logits [1,2,3], target 0") {
    auto logits = Tensor::from_data({1, 3}, {1, 2, 3});
    std::vector<int> t{0};
    const double expected = -1.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    CHECK(expected == doctest::Approx(2.4076).epsilon(1e-4));
    CHECK(ops::softmax_cross_entropy(logits, t).loss.item() == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("out-of-range target") {
    auto logits = Tensor::from_data({1, 3}, {1, 2, 3});
    std::vector<int> t{3};
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, t), ContractViolation);
  }
}

TEST_CASE("gradient check: softmax cross-entropy") {
  std::mt19937_64 rng(5);
  auto logits = random_param({6, 5}, rng, -2, 2);
  std::vector<int> t{0, 4, 2, 2, 1, 3};
  auto loss = [&] { return ops::softmax_cross_entropy(logits, t).loss; };
  CHECK(grad_check(loss, {logits}).max_rel_error < kGradTol);
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_floats(17, rng);
    for (auto& x : v) x *= 10.0f;
    auto p = ops::softmax<float>(v);
    double s = 0;
    for (double x : p) s += x;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("AdamW updates") {
  SUBCASE("zero gradient and zero decay leave params unchanged") {
    auto p = Tensor::parameter({2, 2}, {1, -2, 3, 4});
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt({p}, cfg);
    p.grad_buffer();
    opt.step();
    CHECK(std::vector<float>(p.data().begin(), p.data().end()) == std::vector<float>{1, -2, 3, 4});
  }
  SUBCASE("first step on unit gradient moves by lr") {
    auto p = Tensor::parameter({1}, {0.0f});
    OptimizerState st;
    st.config = {0.1, 0.9, 0.999, 1e-8, 0.0};
    std::vector<Tensor> params{p};
    adam_step(params, {{1.0f}}, st);
    CHECK(st.step == 1);
    CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
  }
  SUBCASE("second step with constant gradient is not larger") {
    auto p = Tensor::parameter({1}, {0.0f});
    OptimizerState st;
    st.config = {0.1, 0.9, 0.999, 1e-8, 0.0};
    std::vector<Tensor> params{p};
    adam_step(params, {{1.0f}}, st);
    const double first = -static_cast<double>(p.data()[0]);
    const double before = p.data()[0];
    adam_step(params, {{1.0f}}, st);
    const double second = before - static_cast<double>(p.data()[0]);
    CHECK(st.step == 2);
    CHECK(second <= first + 1e-7);
  }
  SUBCASE("shape mismatch is a contract violation") {
    auto p = Tensor::parameter({2}, {0, 0});
    OptimizerState st;
    std::vector<Tensor> params{p};
    CHECK_THROWS_AS(adam_step(params, {{1.0f}}, st), ContractViolation);
  }
}

TEST_CASE("OpenMP kernels match their serial references bit for bit") {
  // Oversubscribe on purpose so the parallel split is exercised on any host.
  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(4);
  std::mt19937_64 rng(21);
  const std::size_t m = 37, k = 29, n = 41;
  auto a = random_floats(m * k, rng), b = random_floats(k * n, rng);
  std::vector<float> c1(m * n), c2(m * n);
  kernels::matmul_serial(a.data(), b.data(), c1.data(), m, k, n);
  kernels::matmul(a.data(), b.data(), c2.data(), m, k, n);
  CHECK(c1 == c2);

  auto bt = random_floats(n * k, rng);
  kernels::matmul_nt_serial(a.data(), bt.data(), c1.data(), m, k, n);
  kernels::matmul_nt(a.data(), bt.data(), c2.data(), m, k, n);
  CHECK(c1 == c2);

  auto g = random_floats(m * n, rng);
  std::vector<float> d1(k * n), d2(k * n);
  kernels::matmul_tn_serial(a.data(), g.data(), d1.data(), m, k, n);
  kernels::matmul_tn(a.data(), g.data(), d2.data(), m, k, n);
  CHECK(d1 == d2);

  kernels::AttentionShape s{23, 23, 4, 8};
  auto q = random_floats(s.tq * s.width(), rng), kk = random_floats(s.tk * s.width(), rng),
       v = random_floats(s.tk * s.width(), rng);
  std::vector<int> blocks(23);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] = static_cast<int>(i / 5);
  kernels::AttentionMaskView mask{blocks.data(), blocks.data()};
  std::vector<float> o1(q.size()), o2(q.size()), p1(s.heads * s.tq * s.tk), p2(p1.size());
  kernels::attention_forward_serial(q.data(), kk.data(), v.data(), o1.data(), p1.data(), s, mask, true, 4.0);
  kernels::attention_forward(q.data(), kk.data(), v.data(), o2.data(), p2.data(), s, mask, true, 4.0);
  CHECK(o1 == o2);
  CHECK(p1 == p2);
  omp_set_num_threads(saved_threads);
}

TEST_CASE("gradient check: every layer kind, 20 random instances each") {
  for (auto kind : varlab::testing::kLayerKinds) {
    for (int inst = 0; inst < 20; ++inst) {
      CAPTURE(varlab::testing::layer_name(kind));
      CAPTURE(inst);
      CHECK(varlab::testing::layer_grad_error(kind, inst) < kGradTol);
    }
  }
}

TEST_CASE("bilinear resize") {
  SUBCASE("shrinking to 1x1 averages") {
    auto x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 6});
    auto y = ops::resize_bilinear(x, 1, 1);
    CHECK(y.item() == doctest::Approx(3.0));
  }
  SUBCASE("align-corners keeps the corners") {
    auto x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
    auto y = ops::resize_bilinear(x, 3, 3);
    CHECK(y[0] == 1.0f);
    CHECK(y[2] == 2.0f);
    CHECK(y[6] == 3.0f);
    CHECK(y[8] == 4.0f);
    CHECK(y[4] == doctest::Approx(2.5));
  }
  SUBCASE("growing from 1x1 replicates") {
    auto x = Tensor::from_data({1, 1, 1, 2}, {5, -1});
    auto y = ops::resize_bilinear(x, 2, 3);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(y[2 * i] == 5.0f);
      CHECK(y[2 * i + 1] == -1.0f);
    }
  }
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 rng(77);
  auto x = Tensor::from_data({2, 6, 6, 3}, random_floats(216, rng));
  nn::Conv2d conv(3, 5, 3, 2, 1, rng);
  auto a = conv(x), b = conv(x);
  CHECK(std::vector<float>(a.data().begin(), a.data().end()) == std::vector<float>(b.data().begin(), b.data().end()));
}
