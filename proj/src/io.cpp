#include "trunc_sim/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "json.hpp"

#include "trunc_sim/errors.hpp"

namespace trunc_sim {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

double parse_number(std::string_view field, std::size_t row, std::string_view column) {
  double x = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(x)) {
    std::ostringstream os;
    os << "row " << row << ": column " << column << ": '" << field << "' is not a finite number";
    throw InvalidSample(os.str());
  }
  return x;
}

nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

TruncatedSample read_sample_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidSample("empty input: expected header u1,...,ud,v,w");
  const auto header = split(line);
  const std::size_t cols = header.size();
  bool ok = cols >= 3 && header[cols - 2] == "v" && header[cols - 1] == "w";
  for (std::size_t k = 0; ok && k + 2 < cols; ++k) ok = header[k] == "u" + std::to_string(k + 1);
  if (!ok) throw InvalidSample("header must be u1,...,ud,v,w; got '" + std::string(trim(line)) + "'");
  const std::size_t d = cols - 2;

  std::vector<double> u, v, w;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split(line);
    if (fields.size() != cols) {
      std::ostringstream os;
      os << "row " << row << ": expected " << cols << " fields, found " << fields.size();
      throw InvalidSample(os.str());
    }
    for (std::size_t k = 0; k < d; ++k) u.push_back(parse_number(fields[k], row, header[k]));
    v.push_back(parse_number(fields[d], row, "v"));
    w.push_back(parse_number(fields[d + 1], row, "w"));
  }
  if (row == 0) throw InvalidSample("no data rows");
  return TruncatedSample(d, std::move(u), std::move(v), std::move(w));
}

TruncatedSample read_sample_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSample("cannot open " + path.string());
  return read_sample_csv(in);
}

void write_sample_csv(std::ostream& out, const TruncatedSample& sample) {
  for (std::size_t k = 0; k < sample.dim(); ++k) out << 'u' << k + 1 << ',';
  out << "v,w\n";
  for (std::size_t i = 0; i < sample.size(); ++i) {
    for (double x : sample.u(i)) out << format_double(x) << ',';
    out << format_double(sample.v(i)) << ',' << format_double(sample.w(i)) << '\n';
  }
}

std::string study_csv(const StudyResult& result) {
  std::ostringstream os;
  os << "model,lambda,trunc_rate,N,coord,bias,mse,reps,failures,mean_n\n";
  for (const auto& c : result.cells) {
    os << result.model_id << ',' << format_double(c.lambda) << ',' << format_double(c.trunc_rate) << ',' << c.N
       << ',' << c.coord + 1 << ',' << format_double(c.bias) << ',' << format_double(c.mse) << ',' << c.reps << ','
       << c.failures << ',' << format_double(c.mean_n) << '\n';
  }
  return os.str();
}

std::string study_json(const StudyResult& result) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : result.cells) {
    cells.push_back({{"model", result.model_id},
                     {"lambda", c.lambda},
                     {"trunc_rate", c.trunc_rate},
                     {"N", c.N},
                     {"coord", c.coord + 1},
                     {"bias", number_or_null(c.bias)},
                     {"mse", number_or_null(c.mse)},
                     {"reps", c.reps},
                     {"failures", c.failures},
                     {"mean_n", number_or_null(c.mean_n)},
                     {"flagged", c.flagged}});
  }
  return nlohmann::json{{"model", result.model_id}, {"cells", cells}}.dump(2) + "\n";
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "s,g_true,g_hat\n";
  for (const auto& p : curve)
    os << format_double(p.s) << ',' << format_double(p.g_true) << ',' << format_double(p.g_hat) << '\n';
  return os.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

}  // namespace trunc_sim
