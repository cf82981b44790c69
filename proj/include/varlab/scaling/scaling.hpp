#pragma once

// Power laws L = (beta X)^alpha fitted by least squares in log space:
// log L = alpha log X + alpha log beta.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "varlab/io/metrics.hpp"

namespace varlab {

struct PowerLawFit {
  double alpha = 0.0;
  double beta = 0.0;  // NaN when degenerate
  double pearson = 0.0;
  double residual_rms = 0.0;  // in natural-log units
  std::size_t n_points = 0;
  double l_inf = 0.0;  // irreducible loss subtracted before fitting
  bool degenerate = false;  // alpha numerically zero, beta undefined
};

using XY = std::pair<double, double>;

// Needs >= 2 points, all positive, distinct X (ContractViolation otherwise).
PowerLawFit fit_power_law(std::span<const XY> points);

// Grid search over L_inf in [0, min L) that minimises the log-space residual
// of the fit to L - L_inf. steps = number of grid points.
PowerLawFit fit_power_law_with_floor(std::span<const XY> points, std::size_t steps = 200);

// (beta X)^alpha + l_inf. Throws on X <= 0 or a degenerate fit.
double forecast(const PowerLawFit& fit, double x);

nlohmann::json fit_report(const PowerLawFit& fit);

enum class Metric { l_last, l_avg, err_last, err_avg };
Metric metric_from_name(const std::string& name);  // "L_last", "L_avg", ...
std::string metric_name(Metric m);
double metric_value(const MetricsRow& row, Metric m);

struct CurvePoint {
  double compute = 0.0;
  double value = 0.0;
  std::string model_id;
  bool operator==(const CurvePoint&) const = default;
};

struct RunCurve {
  std::string model_id;
  std::uint64_t n = 0;
  std::vector<MetricsRow> rows;

  // Compute strictly increasing, every metric finite and positive.
  void validate() const;
};

// Groups rows by model_id, keeping file order within a run.
std::vector<RunCurve> curves_from_rows(const std::vector<MetricsRow>& rows);

// Lower envelope of all (C, value) points: sort by C (ties by value), keep a
// point only if it beats every value at smaller C.
std::vector<CurvePoint> pareto_frontier(const std::vector<RunCurve>& curves, Metric metric);

// C_min,value,model_id
std::string frontier_csv(const std::vector<CurvePoint>& frontier);
// x,y per line with a header, for plotting.
std::string xy_csv(std::span<const XY> points, const std::string& x_name, const std::string& y_name);

}  // namespace varlab
