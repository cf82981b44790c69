#include <doctest.h>

#include <cmath>

#include "varlab/complexity/complexity.hpp"
#include "varlab/errors.hpp"
#include "varlab/tokenizer/vqvae.hpp"
#include "varlab/var/ar_model.hpp"
#include "varlab/var/sampling.hpp"
#include "varlab/var/var_model.hpp"

using namespace varlab;

namespace {

VarConfig tiny(const ScaleSchedule& s) {
  VarConfig c;
  c.depth = 1;
  c.width = 32;
  c.heads = 2;
  c.schedule = s;
  return c;
}

VqVae tokenizer_for(const ScaleSchedule& s) {
  VqVaeConfig c;
  c.image_size = 4 * s.last().h;
  c.hidden = 8;
  c.schedule = s;
  return VqVae(c);
}

}  // namespace

TEST_CASE("ar closed form: worked values") {
  CHECK(ar_cost_closed(1) == 1);
  CHECK(ar_cost_closed(2) == 30);
  CHECK(ar_cost_closed(16) == 16ULL * 16 * 257 * 513 / 6);
  CHECK(ar_cost_closed(16) == 5'625'216);
  CHECK(ar_cost_closed(8) == 89'440);
}

TEST_CASE("var closed form: worked values") {
  const auto one = var_cost_closed(1, 2);
  CHECK(one.iterations == 1);
  CHECK(one.pairs_recompute == 1);
  CHECK(one.pairs_cached == 1);

  const auto four = var_cost_closed(4, 2);
  CHECK(four.steps_recompute == std::vector<std::uint64_t>{1, 25, 441});
  CHECK(four.pairs_recompute == 467);

  const auto eight = var_cost_closed(8, 2);
  CHECK(eight.steps_recompute == std::vector<std::uint64_t>{1, 25, 441, 7225});
  CHECK(eight.pairs_recompute == 7692);
  // new tokens times cumulative keys: 1*1 + 4*5 + 16*21 + 64*85
  CHECK(eight.pairs_cached == 1 + 20 + 336 + 5440);
  CHECK(eight.iterations == 4);
}

TEST_CASE("closed forms equal brute-force sums for every n up to 64") {
  for (std::uint64_t n = 1; n <= 64; ++n) {
    CHECK(ar_cost_closed(n) == ar_cost_bruteforce(n));
    const auto r = ar_cost_report(n);
    CHECK(r.pairs_recompute == ar_cost_closed(n));
    CHECK(r.pairs_cached == n * n * (n * n + 1) / 2);
    CHECK(r.iterations == n * n);
  }
  for (std::uint64_t a = 2; a <= 64; ++a) {
    for (std::uint64_t n = 1; n <= 64; n *= a) {
      const auto r = var_cost_closed(n, a);
      CHECK(r.pairs_recompute == var_cost_bruteforce(n, a));
      CHECK(r.iterations == static_cast<std::uint64_t>(std::llround(std::log(n) / std::log(a))) + 1);
    }
  }
}

TEST_CASE("the appendix's logarithmic expression agrees with the step sum") {
  for (std::uint64_t a : {2, 3, 4}) {
    for (std::uint64_t n = a; n <= 64; n *= a) {
      const double exact = static_cast<double>(var_cost_closed(n, a).pairs_recompute);
      CHECK(var_cost_log_form(static_cast<double>(n), static_cast<double>(a)) == doctest::Approx(exact).epsilon(1e-12));
    }
  }
}

TEST_CASE("var cost rejects n that is not a power of a") {
  CHECK_THROWS_AS(var_cost_closed(6, 2), ContractViolation);
  CHECK_THROWS_AS(var_cost_closed(8, 1), ContractViolation);
  CHECK_THROWS_AS(var_cost_bruteforce(10, 3), ContractViolation);
  CHECK_THROWS_AS(ar_cost_closed(0), ContractViolation);
}

TEST_CASE("asymptotics: ar/n^6 falls to 1/3 and var/n^4 settles") {
  double prev_ar = 1e9, prev_gap = 1e9;
  const double limit = 256.0 / (27.0 * 5.0);  // a^8 / ((a^2-1)^3 (a^2+1)) at a = 2
  for (std::uint64_t n : {4, 8, 16, 32, 64}) {
    const double ar = static_cast<double>(ar_cost_closed(n)) / std::pow(static_cast<double>(n), 6);
    CHECK(ar < prev_ar);
    CHECK(ar > 1.0 / 3.0);
    prev_ar = ar;
    const double var = static_cast<double>(var_cost_closed(n, 2).pairs_recompute) / std::pow(static_cast<double>(n), 4);
    const double gap = std::fabs(var - limit);
    CHECK(gap < prev_gap);
    CHECK(var < 2.0);
    prev_gap = gap;
  }
  CHECK(prev_ar == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("instrumented var sampling matches the closed forms") {
  for (std::uint64_t n : {4, 8}) {
    std::vector<std::size_t> sides;
    for (std::size_t s = 1; s <= n; s *= 2) sides.push_back(s);
    const auto sched = ScaleSchedule::square(sides);
    VarModel m(tiny(sched));
    const auto vq = tokenizer_for(sched);
    SampleOptions opt;
    opt.mode = CacheMode::recompute;
    const auto full = count_empirical(sample_var(m, vq, opt).trace, Regime::var, n, 2);
    opt.mode = CacheMode::cached;
    const auto cached = count_empirical(sample_var(m, vq, opt).trace, Regime::var, n, 2);
    const auto closed = var_cost_closed(n, 2);
    CHECK(full == closed);
    CHECK(cached == closed);
  }
}

TEST_CASE("instrumented ar sampling matches the closed forms") {
  for (std::uint64_t n : {4, 8}) {
    ArModel ar(tiny(ScaleSchedule::square({n})));
    GenerationParams p;
    const auto full = count_empirical(sample_ar(ar, p, 1, CacheMode::recompute).trace, Regime::ar, n);
    const auto cached = count_empirical(sample_ar(ar, p, 1, CacheMode::cached).trace, Regime::ar, n);
    CHECK(full.pairs_recompute == ar_cost_closed(n));
    CHECK(full == ar_cost_report(n));
    CHECK(cached == ar_cost_report(n));
  }
}

TEST_CASE("a single-scale trace reads the same under both conventions") {
  const AttentionTrace t{{1, 1}};
  const auto r = count_empirical(t, Regime::var, 1, 2);
  CHECK(r.pairs_recompute == r.pairs_cached);
}

TEST_CASE("count_empirical rejects traces that do not fit") {
  CHECK_THROWS_AS(count_empirical({}, Regime::ar, 2), ContractViolation);
  CHECK_NOTHROW(count_empirical({{1, 1}, {4, 5}}, Regime::var, 2, 2));
  CHECK_THROWS_AS(count_empirical({{1, 1}, {3, 5}}, Regime::var, 2, 2), ContractViolation);
  CHECK_THROWS_AS(count_empirical({{1, 1}, {4, 5}}, Regime::var, 4, 2), ContractViolation);
  CHECK_THROWS_AS(count_empirical({{2, 2}, {1, 1}}, Regime::ar, 1), ContractViolation);
}

TEST_CASE("cost csv layout") {
  const auto csv = cost_csv({var_cost_closed(8, 2), ar_cost_report(2)});
  CHECK(csv == "regime,n,a,iterations,pairs_recompute,pairs_cached\n"
               "VAR,8,2,4,7692,5797\n"
               "AR,2,,4,30,10\n");
  CHECK(attention_flops(10, 64, 2) == 5120.0);
}
