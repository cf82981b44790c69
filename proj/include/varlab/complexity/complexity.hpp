#pragma once

// Generation cost counted in attention query-key pairs. Under full
// recompute, step t attends all cumulative tokens to each other (cum_t^2);
// with a kv cache only the new tokens query (new_t * cum_t).

#include <cstdint>
#include <string>
#include <vector>

#include "varlab/var/transformer.hpp"

namespace varlab {

enum class Regime { ar, var };
std::string regime_name(Regime r);

struct CostReport {
  Regime regime = Regime::var;
  std::uint64_t n = 0;
  std::uint64_t a = 0;  // scale ratio; 0 for AR
  std::uint64_t iterations = 0;
  std::vector<std::uint64_t> steps_recompute;
  std::vector<std::uint64_t> steps_cached;
  std::uint64_t pairs_recompute = 0;
  std::uint64_t pairs_cached = 0;

  bool operator==(const CostReport&) const = default;
};

// n^2 (n^2 + 1)(2 n^2 + 1) / 6
std::uint64_t ar_cost_closed(std::uint64_t n);
std::uint64_t ar_cost_bruteforce(std::uint64_t n);
CostReport ar_cost_report(std::uint64_t n);

// K = log_a(n) + 1; step k costs ((a^{2k} - 1) / (a^2 - 1))^2.
// Throws ContractViolation when n is not a power of a or a < 2.
std::uint64_t var_scale_count(std::uint64_t n, std::uint64_t a);
CostReport var_cost_closed(std::uint64_t n, std::uint64_t a);
std::uint64_t var_cost_bruteforce(std::uint64_t n, std::uint64_t a);
// The appendix's logarithmic expression for the same total, in floating point.
double var_cost_log_form(double n, double a);

// Reads cumulative key counts off a sampling trace (either convention) and
// returns both totals. Throws ContractViolation if the trace does not fit
// the stated regime and size.
CostReport count_empirical(const AttentionTrace& trace, Regime regime, std::uint64_t n, std::uint64_t a = 0);

// Multiply-adds for QK^T and AV over all layers: 2 * 2 * width * depth per pair.
double attention_flops(std::uint64_t pairs, std::uint64_t width, std::uint64_t depth);

// Header: regime,n,a,iterations,pairs_recompute,pairs_cached (a empty for AR).
std::string cost_csv(const std::vector<CostReport>& rows);

}  // namespace varlab
