#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "varlab/errors.hpp"
#include "varlab/scaling/scaling.hpp"
#include "varlab/var/transformer.hpp"

using namespace varlab;

namespace {

std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  return v;
}

std::vector<XY> law(double beta, double alpha, const std::vector<double>& xs) {
  std::vector<XY> p;
  for (double x : xs) p.push_back({x, std::pow(beta * x, alpha)});
  return p;
}

MetricsRow row(const std::string& id, double c, double l) {
  MetricsRow r;
  r.model_id = id;
  r.compute = c;
  r.l_last = r.l_avg = l;
  r.err_last = r.err_avg = 0.5;
  return r;
}

}  // namespace

TEST_CASE("noiseless published laws are recovered") {
  const auto xs = log_spaced(1e7, 2e9, 12);
  for (auto [beta, alpha] : {std::pair{2.0, -0.23}, std::pair{4.9e2, -0.016}}) {
    const auto f = fit_power_law(law(beta, alpha, xs));
    CHECK(f.alpha == doctest::Approx(alpha).epsilon(1e-6));
    CHECK(f.beta == doctest::Approx(beta).epsilon(1e-6));
    CHECK(f.pearson == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(f.residual_rms < 1e-12);
    CHECK_FALSE(f.degenerate);
  }
}

TEST_CASE("round trip over a grid of alpha and beta") {
  const auto xs = log_spaced(1e3, 1e9, 7);
  for (double alpha : {-1.0, -0.5, -0.1, -0.01}) {
    for (double beta : {0.1, 1.0, 3.7, 10.0}) {
      const auto f = fit_power_law(law(beta, alpha, xs));
      CHECK(f.alpha == doctest::Approx(alpha).epsilon(1e-6));
      CHECK(f.beta == doctest::Approx(beta).epsilon(1e-6));
    }
  }
}

TEST_CASE("two points interpolate exactly") {
  const std::vector<XY> p{{10.0, 3.0}, {1000.0, 1.5}};
  const auto f = fit_power_law(p);
  CHECK(f.residual_rms == doctest::Approx(0.0));
  CHECK(forecast(f, 10.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(forecast(f, 1000.0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("stored residual matches a recomputation from alpha and beta") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 0.05);
  std::vector<XY> p;
  for (double x : log_spaced(1.0, 1e4, 9)) p.push_back({x, std::pow(2.0 * x, -0.3) * std::exp(z(rng))});
  const auto f = fit_power_law(p);
  double ss = 0;
  for (auto [x, y] : p) {
    const double r = std::log(y) - (f.alpha * std::log(x) + f.alpha * std::log(f.beta));
    ss += r * r;
  }
  CHECK(f.residual_rms == doctest::Approx(std::sqrt(ss / p.size())).epsilon(1e-9));
  CHECK(f.pearson >= -1.0);
  CHECK(f.pearson <= 1.0);
}

TEST_CASE("one percent log-noise keeps |pearson| above 0.99") {
  const auto xs = log_spaced(1e7, 2e9, 12);
  int pass = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 0.01);
    auto p = law(2.0, -0.23, xs);
    for (auto& [x, y] : p) y *= std::exp(z(rng));
    pass += std::fabs(fit_power_law(p).pearson) > 0.99;
  }
  CHECK(pass >= 95);
}

TEST_CASE("scaling X by c leaves alpha and divides beta by c") {
  const auto p = law(2.0, -0.23, log_spaced(1e7, 2e9, 6));
  auto q = p;
  for (auto& [x, y] : q) x *= 8.0;
  const auto a = fit_power_law(p), b = fit_power_law(q);
  CHECK(b.alpha == doctest::Approx(a.alpha).epsilon(1e-12));
  CHECK(b.beta == doctest::Approx(a.beta / 8.0).epsilon(1e-9));
}

TEST_CASE("flat data is a degenerate fit and cannot forecast") {
  const std::vector<XY> p{{1.0, 2.0}, {10.0, 2.0}, {100.0, 2.0}};
  const auto f = fit_power_law(p);
  CHECK(f.degenerate);
  CHECK(std::isnan(f.beta));
  CHECK(fit_report(f).at("beta").is_null());
  CHECK_THROWS_AS(forecast(f, 5.0), ContractViolation);
}

TEST_CASE("fit rejects bad input") {
  const std::vector<XY> one{{1.0, 1.0}};
  CHECK_THROWS_AS(fit_power_law(one), ContractViolation);
  const std::vector<XY> dup{{1.0, 1.0}, {1.0, 2.0}};
  CHECK_THROWS_AS(fit_power_law(dup), ContractViolation);
  const std::vector<XY> neg{{1.0, 1.0}, {2.0, -1.0}};
  CHECK_THROWS_AS(fit_power_law(neg), ContractViolation);
}

TEST_CASE("forecast from the published L law at two billion parameters") {
  PowerLawFit f;
  f.alpha = -0.23;
  f.beta = 2.0;
  CHECK(forecast(f, 2.0e9) == doctest::Approx(std::pow(4.0e9, -0.23)).epsilon(1e-12));
  CHECK(forecast(f, 2.0e9) == doctest::Approx(0.00624).epsilon(0.01));
  CHECK_THROWS_AS(forecast(f, 0.0), ContractViolation);
}

TEST_CASE("floor search finds a planted irreducible loss") {
  std::vector<XY> p;
  for (double x : log_spaced(1e2, 1e6, 10)) p.push_back({x, 0.5 + std::pow(3.0 * x, -0.4)});
  const auto plain = fit_power_law(p);
  const auto f = fit_power_law_with_floor(p, 1000);
  CHECK(f.residual_rms < plain.residual_rms);
  CHECK(f.l_inf == doctest::Approx(0.5).epsilon(0.01));
  CHECK(f.alpha == doctest::Approx(-0.4).epsilon(0.02));
}

TEST_CASE("n_of_d is the same function scaling uses") { CHECK(n_of_d(16) == 301989888ULL); }

TEST_CASE("frontier of a single monotone run is the run") {
  const std::vector<RunCurve> c{{"a", 1, {row("a", 1, 5), row("a", 2, 4), row("a", 3, 3)}}};
  const auto f = pareto_frontier(c, Metric::l_avg);
  CHECK(f == std::vector<CurvePoint>{{1, 5, "a"}, {2, 4, "a"}, {3, 3, "a"}});
}

TEST_CASE("frontier switches runs exactly at the crossover") {
  // small: fast early, plateaus; big: starts worse, overtakes between C=4 and C=5.
  const RunCurve small{"small", 1, {row("small", 1, 4.0), row("small", 2, 3.0), row("small", 4, 2.6), row("small", 8, 2.5)}};
  const RunCurve big{"big", 8, {row("big", 3, 3.5), row("big", 5, 2.4), row("big", 10, 1.5)}};
  const auto f = pareto_frontier({small, big}, Metric::l_last);
  const std::vector<CurvePoint> want{{1, 4.0, "small"}, {2, 3.0, "small"}, {4, 2.6, "small"}, {5, 2.4, "big"},
                                     {10, 1.5, "big"}};
  CHECK(f == want);
  for (std::size_t i = 1; i < f.size(); ++i) {
    CHECK(f[i].compute > f[i - 1].compute);
    CHECK(f[i].value < f[i - 1].value);
  }
}

TEST_CASE("frontier tie on compute keeps the smaller value") {
  const RunCurve a{"a", 1, {row("a", 1, 3.0), row("a", 2, 2.0)}};
  const RunCurve b{"b", 1, {row("b", 2, 1.0)}};
  const auto f = pareto_frontier({a, b}, Metric::l_avg);
  CHECK(f == std::vector<CurvePoint>{{1, 3.0, "a"}, {2, 1.0, "b"}});
  CHECK(frontier_csv(f) == "C_min,value,model_id\n1,3,a\n2,1,b\n");
}

TEST_CASE("runs must have increasing compute and positive values") {
  CHECK_THROWS_AS(pareto_frontier({{"a", 1, {row("a", 2, 3.0), row("a", 2, 2.0)}}}, Metric::l_avg), ContractViolation);
  CHECK_THROWS_AS(pareto_frontier({{"a", 1, {row("a", 1, 0.0)}}}, Metric::l_avg), ContractViolation);
  CHECK_THROWS_AS(pareto_frontier({}, Metric::l_avg), ContractViolation);
}

TEST_CASE("metric rows group by model id") {
  const auto c = curves_from_rows({row("x", 1, 2), row("y", 1, 3), row("x", 2, 1)});
  REQUIRE(c.size() == 2);
  CHECK(c[0].model_id == "x");
  CHECK(c[0].rows.size() == 2);
  CHECK(metric_from_name("Err_avg") == Metric::err_avg);
  CHECK_THROWS_AS(metric_from_name("loss"), ContractViolation);
}
