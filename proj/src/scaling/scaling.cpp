#include "varlab/scaling/scaling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "varlab/errors.hpp"

namespace varlab {

namespace {

void check_points(std::span<const XY> points) {
  expects(points.size() >= 2, "power-law fit needs at least two points");
  std::set<double> xs;
  for (const auto& [x, y] : points) {
    expects(std::isfinite(x) && std::isfinite(y) && x > 0.0 && y > 0.0,
            "power-law fit needs finite positive X and L");
    expects(xs.insert(x).second, "power-law fit needs distinct X values");
  }
}

PowerLawFit fit_logs(const std::vector<double>& lx, const std::vector<double>& ly) {
  const auto n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double dx = lx[i] - mx, dy = ly[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  PowerLawFit f;
  f.n_points = lx.size();
  f.alpha = sxy / sxx;
  const double intercept = my - f.alpha * mx;
  f.pearson = syy > 0 ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
  double ss = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (f.alpha * lx[i] + intercept);
    ss += r * r;
  }
  f.residual_rms = std::sqrt(ss / n);
  // Slope within rounding of zero relative to the spread of log L.
  f.degenerate = std::fabs(f.alpha) * std::sqrt(sxx) <= 1e-12 * std::max(1.0, std::fabs(my));
  f.beta = f.degenerate ? std::numeric_limits<double>::quiet_NaN() : std::exp(intercept / f.alpha);
  return f;
}

}  // namespace

PowerLawFit fit_power_law(std::span<const XY> points) {
  check_points(points);
  std::vector<double> lx, ly;
  for (const auto& [x, y] : points) {
    lx.push_back(std::log(x));
    ly.push_back(std::log(y));
  }
  return fit_logs(lx, ly);
}

PowerLawFit fit_power_law_with_floor(std::span<const XY> points, std::size_t steps) {
  check_points(points);
  expects(steps >= 1, "floor search needs at least one grid step");
  double min_l = std::numeric_limits<double>::infinity();
  for (const auto& p : points) min_l = std::min(min_l, p.second);
  PowerLawFit best = fit_power_law(points);
  std::vector<XY> shifted(points.begin(), points.end());
  for (std::size_t s = 1; s < steps; ++s) {
    const double floor = min_l * static_cast<double>(s) / static_cast<double>(steps);
    for (std::size_t i = 0; i < points.size(); ++i) shifted[i].second = points[i].second - floor;
    auto f = fit_power_law(shifted);
    f.l_inf = floor;
    if (f.residual_rms < best.residual_rms) best = f;
  }
  return best;
}

double forecast(const PowerLawFit& fit, double x) {
  expects(x > 0.0 && std::isfinite(x), "forecast: X must be positive");
  expects(!fit.degenerate, "forecast: degenerate fit (alpha = 0) has no beta");
  return std::pow(fit.beta * x, fit.alpha) + fit.l_inf;
}

nlohmann::json fit_report(const PowerLawFit& fit) {
  nlohmann::json j = {{"alpha", fit.alpha},
                      {"pearson", fit.pearson},
                      {"residual_rms", fit.residual_rms},
                      {"n_points", fit.n_points},
                      {"l_inf", fit.l_inf},
                      {"degenerate", fit.degenerate}};
  j["beta"] = fit.degenerate ? nlohmann::json(nullptr) : nlohmann::json(fit.beta);
  return j;
}

Metric metric_from_name(const std::string& name) {
  if (name == "L_last") return Metric::l_last;
  if (name == "L_avg") return Metric::l_avg;
  if (name == "Err_last") return Metric::err_last;
  if (name == "Err_avg") return Metric::err_avg;
  throw ContractViolation("unknown metric '" + name + "' (want L_last, L_avg, Err_last or Err_avg)");
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::l_last: return "L_last";
    case Metric::l_avg: return "L_avg";
    case Metric::err_last: return "Err_last";
    case Metric::err_avg: return "Err_avg";
  }
  return "";
}

double metric_value(const MetricsRow& r, Metric m) {
  switch (m) {
    case Metric::l_last: return r.l_last;
    case Metric::l_avg: return r.l_avg;
    case Metric::err_last: return r.err_last;
    case Metric::err_avg: return r.err_avg;
  }
  return 0.0;
}

void RunCurve::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    expects(r.compute > 0.0, "run " + model_id + ": compute must be positive");
    expects(i == 0 || r.compute > rows[i - 1].compute, "run " + model_id + ": compute must strictly increase");
    for (double v : {r.l_last, r.l_avg, r.err_last, r.err_avg}) {
      expects(std::isfinite(v) && v > 0.0, "run " + model_id + ": metric values must be positive");
    }
  }
}

std::vector<RunCurve> curves_from_rows(const std::vector<MetricsRow>& rows) {
  std::vector<RunCurve> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.try_emplace(r.model_id, out.size());
    if (fresh) out.push_back({r.model_id, r.n, {}});
    out[it->second].rows.push_back(r);
  }
  return out;
}

std::vector<CurvePoint> pareto_frontier(const std::vector<RunCurve>& curves, Metric metric) {
  expects(!curves.empty(), "pareto_frontier: no runs");
  std::vector<CurvePoint> all;
  for (const auto& c : curves) {
    c.validate();
    for (const auto& r : c.rows) all.push_back({r.compute, metric_value(r, metric), c.model_id});
  }
  std::stable_sort(all.begin(), all.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.compute != b.compute ? a.compute < b.compute : a.value < b.value;
  });
  std::vector<CurvePoint> front;
  for (const auto& p : all) {
    if (front.empty() || p.value < front.back().value) front.push_back(p);
  }
  return front;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string frontier_csv(const std::vector<CurvePoint>& frontier) {
  std::string s = "C_min,value,model_id\n";
  for (const auto& p : frontier) s += num(p.compute) + "," + num(p.value) + "," + p.model_id + "\n";
  return s;
}

std::string xy_csv(std::span<const XY> points, const std::string& x_name, const std::string& y_name) {
  std::string s = x_name + "," + y_name + "\n";
  for (const auto& [x, y] : points) s += num(x) + "," + num(y) + "\n";
  return s;
}

}  // namespace varlab
