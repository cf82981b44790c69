#include "varlab/io/metrics.hpp"

#include <charconv>

#include "varlab/errors.hpp"

namespace varlab {

namespace {

constexpr std::string_view kHeader = "model_id,d,N,step,tokens_seen,compute,L_last,L_avg,Err_last,Err_avg";

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_field(std::string_view field, std::size_t offset) {
  T v{};
  auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || end != field.data() + field.size()) {
    throw ParseError("bad numeric field '" + std::string(field) + "' in metrics CSV", offset);
  }
  return v;
}

}  // namespace

double training_compute_pflops(std::uint64_t n, std::uint64_t tokens) {
  return 6.0 * static_cast<double>(n) * static_cast<double>(tokens) / 1e15;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) {
    expects(r.model_id.find_first_of(",\n\"") == std::string::npos, "metrics: model_id may not contain , or quotes");
    out += r.model_id + ',' + std::to_string(r.d) + ',' + std::to_string(r.n) + ',' + std::to_string(r.step) + ',' +
           std::to_string(r.tokens_seen) + ',' + format_double(r.compute) + ',' + format_double(r.l_last) + ',' +
           format_double(r.l_avg) + ',' + format_double(r.err_last) + ',' + format_double(r.err_avg) + '\n';
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::size_t line_offset = pos;
    pos = eol + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != kHeader) throw ParseError("unexpected metrics CSV header", line_offset);
      header = false;
      continue;
    }
    std::vector<std::string_view> f;
    std::vector<std::size_t> offs;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      offs.push_back(line_offset + start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != 10) throw ParseError("metrics row needs 10 fields, got " + std::to_string(f.size()), line_offset);
    MetricsRow r;
    r.model_id = std::string(f[0]);
    r.d = parse_field<std::uint64_t>(f[1], offs[1]);
    r.n = parse_field<std::uint64_t>(f[2], offs[2]);
    r.step = parse_field<std::uint64_t>(f[3], offs[3]);
    r.tokens_seen = parse_field<std::uint64_t>(f[4], offs[4]);
    r.compute = parse_field<double>(f[5], offs[5]);
    r.l_last = parse_field<double>(f[6], offs[6]);
    r.l_avg = parse_field<double>(f[7], offs[7]);
    r.err_last = parse_field<double>(f[8], offs[8]);
    r.err_avg = parse_field<double>(f[9], offs[9]);
    rows.push_back(std::move(r));
  }
  if (header) throw ParseError("metrics CSV is empty", 0);
  return rows;
}

}  // namespace varlab
