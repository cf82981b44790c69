#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace varlab {

// One evaluation point of a training run.
struct MetricsRow {
  std::string model_id;
  std::uint64_t d = 0;
  std::uint64_t n = 0;  // parameter count used for compute accounting
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  double compute = 0.0;  // PFlops, 6 N T / 1e15
  double l_last = 0.0;
  double l_avg = 0.0;
  double err_last = 0.0;
  double err_avg = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// 6 * N * tokens in PFlops.
double training_compute_pflops(std::uint64_t n, std::uint64_t tokens);

// Columns: model_id,d,N,step,tokens_seen,compute,L_last,L_avg,Err_last,Err_avg
std::string metrics_csv(const std::vector<MetricsRow>& rows);
// Throws ParseError on a bad header or row.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

}  // namespace varlab
