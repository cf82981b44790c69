#include "varlab/complexity/complexity.hpp"

#include <cmath>
#include <sstream>

#include "varlab/errors.hpp"

namespace varlab {

std::string regime_name(Regime r) { return r == Regime::ar ? "AR" : "VAR"; }

namespace {

std::uint64_t checked(unsigned __int128 v) {
  expects(v <= UINT64_MAX, "complexity: count overflows 64 bits");
  return static_cast<std::uint64_t>(v);
}

void finish(CostReport& r) {
  r.iterations = r.steps_recompute.size();
  r.pairs_recompute = r.pairs_cached = 0;
  for (auto s : r.steps_recompute) r.pairs_recompute += s;
  for (auto s : r.steps_cached) r.pairs_cached += s;
}

}  // namespace

std::uint64_t ar_cost_closed(std::uint64_t n) {
  expects(n >= 1, "ar_cost_closed: n must be at least 1");
  const unsigned __int128 m = static_cast<unsigned __int128>(n) * n;
  return checked(m * (m + 1) * (2 * m + 1) / 6);
}

std::uint64_t ar_cost_bruteforce(std::uint64_t n) {
  expects(n >= 1, "ar_cost_bruteforce: n must be at least 1");
  std::uint64_t total = 0;
  for (std::uint64_t t = 1; t <= n * n; ++t) total += t * t;
  return total;
}

CostReport ar_cost_report(std::uint64_t n) {
  expects(n >= 1, "ar_cost_report: n must be at least 1");
  CostReport r;
  r.regime = Regime::ar;
  r.n = n;
  for (std::uint64_t t = 1; t <= n * n; ++t) {
    r.steps_recompute.push_back(t * t);
    r.steps_cached.push_back(t);
  }
  finish(r);
  return r;
}

std::uint64_t var_scale_count(std::uint64_t n, std::uint64_t a) {
  expects(a >= 2, "var cost: scale ratio a must be at least 2");
  expects(n >= 1, "var cost: n must be at least 1");
  std::uint64_t k = 1;
  std::uint64_t side = 1;
  while (side < n) {
    side *= a;
    ++k;
  }
  expects(side == n, "var cost: n = " + std::to_string(n) + " is not a power of a = " + std::to_string(a));
  return k;
}

CostReport var_cost_closed(std::uint64_t n, std::uint64_t a) {
  const std::uint64_t K = var_scale_count(n, a);
  CostReport r;
  r.regime = Regime::var;
  r.n = n;
  r.a = a;
  const unsigned __int128 a2 = static_cast<unsigned __int128>(a) * a;
  unsigned __int128 a2k = 1, prev = 0;
  for (std::uint64_t k = 1; k <= K; ++k) {
    a2k *= a2;
    const unsigned __int128 cum = (a2k - 1) / (a2 - 1);
    r.steps_recompute.push_back(checked(cum * cum));
    r.steps_cached.push_back(checked((cum - prev) * cum));
    prev = cum;
  }
  finish(r);
  return r;
}

std::uint64_t var_cost_bruteforce(std::uint64_t n, std::uint64_t a) {
  const std::uint64_t K = var_scale_count(n, a);
  std::uint64_t total = 0, cum = 0, side = 1;
  for (std::uint64_t k = 1; k <= K; ++k, side *= a) {
    cum += side * side;
    total += cum * cum;
  }
  return total;
}

double var_cost_log_form(double n, double a) {
  const double a2 = a * a, a4 = a2 * a2, a6 = a4 * a2, a8 = a4 * a4, n2 = n * n, n4 = n2 * n2;
  const double num = (a4 - 1) * std::log(n) + (a8 * n4 - 2 * a6 * n2 - 2 * a4 * (n2 - 1) + 2 * a2 - 1) * std::log(a);
  return num / ((a2 - 1) * (a2 - 1) * (a2 - 1) * (a2 + 1) * std::log(a));
}

CostReport count_empirical(const AttentionTrace& trace, Regime regime, std::uint64_t n, std::uint64_t a) {
  expects(!trace.empty(), "count_empirical: empty trace");
  CostReport r;
  r.regime = regime;
  r.n = n;
  r.a = regime == Regime::var ? a : 0;
  std::uint64_t prev = 0;
  for (const auto& s : trace) {
    expects(s.keys > prev, "count_empirical: key counts must grow every step");
    const std::uint64_t fresh = s.keys - prev;
    expects(s.queries == s.keys || s.queries == fresh,
            "count_empirical: step queries match neither the recompute nor the cached convention");
    r.steps_recompute.push_back(s.keys * s.keys);
    r.steps_cached.push_back(fresh * s.keys);
    prev = s.keys;
  }
  finish(r);
  const std::uint64_t want_iters = regime == Regime::ar ? n * n : var_scale_count(n, a);
  expects(r.iterations == want_iters, "count_empirical: trace has " + std::to_string(r.iterations) +
                                          " steps, expected " + std::to_string(want_iters));
  std::uint64_t want_tokens = n * n;
  if (regime == Regime::var) {
    want_tokens = 0;
    for (std::uint64_t side = 1; side <= n; side *= a) want_tokens += side * side;
  }
  expects(prev == want_tokens, "count_empirical: trace ends with " + std::to_string(prev) + " keys, expected " +
                                   std::to_string(want_tokens));
  return r;
}

double attention_flops(std::uint64_t pairs, std::uint64_t width, std::uint64_t depth) {
  return 4.0 * static_cast<double>(width) * static_cast<double>(depth) * static_cast<double>(pairs);
}

std::string cost_csv(const std::vector<CostReport>& rows) {
  std::ostringstream o;
  o << "regime,n,a,iterations,pairs_recompute,pairs_cached\n";
  for (const auto& r : rows) {
    o << regime_name(r.regime) << ',' << r.n << ',';
    if (r.regime == Regime::var) o << r.a;
    o << ',' << r.iterations << ',' << r.pairs_recompute << ',' << r.pairs_cached << '\n';
  }
  return o.str();
}

}  // namespace varlab
