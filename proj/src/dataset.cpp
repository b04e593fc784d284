#include "neuralme/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "neuralme/errors.hpp"

namespace neuralme {

void Dataset::validate() const {
  if (times.empty()) throw ValidationError("dataset is empty");
  if (pressures.rows() != static_cast<long>(times.size()) ||
      pressures.cols() != static_cast<long>(segment_ids.size()))
    throw ValidationError("dataset shape mismatch");
  if (rate <= 0.0) throw ValidationError("dataset rate must be positive");
  const double dt = 1.0 / rate;
  for (size_t i = 1; i < times.size(); ++i)
    if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, dt))
      throw NonUniformInput("dataset grid is not uniform at the stated rate");
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& ctx) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError(ctx + ": bad number '" + std::string(s) + "'");
  return v;
}

} // namespace

void write_waveform_csv(const std::filesystem::path& path,
                        const std::vector<double>& times, const Mat& columns,
                        const std::vector<std::string>& segment_ids) {
  if (columns.rows() != static_cast<long>(times.size()) ||
      columns.cols() != static_cast<long>(segment_ids.size()))
    throw DimensionMismatch("write_waveform_csv", times.size(), columns.rows());

  std::string out = "t";
  for (const auto& id : segment_ids) {
    out += ",p_";
    out += id;
  }
  out += '\n';
  for (size_t r = 0; r < times.size(); ++r) {
    append_double(out, times[r]);
    for (long c = 0; c < columns.cols(); ++c) {
      out += ',';
      append_double(out, columns(static_cast<long>(r), c));
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open '" + path.string() + "' for writing");
  f << out;
}

Dataset read_waveform_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open waveform CSV '" + path.string() + "'");

  std::string line;
  if (!std::getline(f, line))
    throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  Dataset ds;
  {
    std::stringstream header(line);
    std::string tok;
    bool first = true;
    while (std::getline(header, tok, ',')) {
      if (first) {
        if (tok != "t")
          throw ParseError(path.string() + ": first column must be 't'");
        first = false;
      } else {
        if (tok.rfind("p_", 0) != 0)
          throw ParseError(path.string() + ": column '" + tok +
                           "' does not match p_<segid>");
        ds.segment_ids.push_back(tok.substr(2));
      }
    }
  }
  const size_t n_cols = ds.segment_ids.size();
  std::vector<std::vector<double>> rows;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(n_cols + 1);
    size_t start = 0;
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    while (true) {
      const size_t comma = line.find(',', start);
      const std::string_view field(line.data() + start,
                                   (comma == std::string::npos ? line.size()
                                                               : comma) -
                                       start);
      row.push_back(parse_double(field, ctx));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (row.size() != n_cols + 1)
      throw ParseError(ctx + ": expected " + std::to_string(n_cols + 1) +
                       " fields, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2)
    throw ParseError(path.string() + ": need at least two samples");

  ds.times.resize(rows.size());
  ds.pressures.resize(static_cast<long>(rows.size()), static_cast<long>(n_cols));
  for (size_t r = 0; r < rows.size(); ++r) {
    ds.times[r] = rows[r][0];
    for (size_t c = 0; c < n_cols; ++c)
      ds.pressures(static_cast<long>(r), static_cast<long>(c)) = rows[r][c + 1];
  }

  const double dt = ds.times[1] - ds.times[0];
  if (dt <= 0.0) throw NonUniformInput(path.string() + ": non-increasing grid");
  for (size_t i = 1; i < ds.times.size(); ++i)
    if (std::abs(ds.times[i] - ds.times[i - 1] - dt) > 1e-9 * std::max(1.0, dt))
      throw NonUniformInput(path.string() + ": grid is not uniform");
  ds.rate = 1.0 / dt;
  return ds;
}

Dataset build_dataset(const Dataset& raw, double heart_rate, double rate) {
  if (rate <= 0.0) throw ValidationError("build_dataset: rate must be positive");
  if (raw.times.size() < 2) throw ValidationError("build_dataset: raw too short");
  raw.validate();
  if (raw.rate + 1e-9 < rate)
    throw ValidationError("build_dataset: raw grid rate below target rate");

  const double period = 60.0 / heart_rate;
  const double t_end = raw.times.back();
  // the last raw sample may fall one grid interval short of the cycle end
  if (t_end + 1.0 / raw.rate < 3.0 * period - 1e-9)
    throw InsufficientCycles("build_dataset: need at least 3 cardiac cycles, have " +
                             std::to_string(t_end / period));

  // uniform target grid over the raw span; the first period is transient
  // settle time and is dropped, and at most the last two cycles are kept
  const long k_last = static_cast<long>(std::floor(t_end * rate * (1.0 + 1e-12)));
  const double t_cut = std::max(period, t_end - 2.0 * period);
  const long k_first = static_cast<long>(std::ceil(t_cut * rate * (1.0 - 1e-12)));

  Dataset out;
  out.segment_ids = raw.segment_ids;
  out.patient = raw.patient;
  out.patient.heart_rate = heart_rate;
  out.rate = rate;
  const long n = k_last - k_first + 1;
  out.times.resize(n);
  out.pressures.resize(n, raw.pressures.cols());

  const double raw_t0 = raw.times.front();
  const double raw_dt = 1.0 / raw.rate;
  const long raw_n = static_cast<long>(raw.times.size());
  for (long k = 0; k < n; ++k) {
    const double t = static_cast<double>(k_first + k) / rate;
    out.times[k] = t;
    double pos = (t - raw_t0) / raw_dt;
    long i = static_cast<long>(std::floor(pos));
    if (i < 0) i = 0;
    if (i >= raw_n - 1) i = raw_n - 2;
    const double frac = pos - static_cast<double>(i);
    if (std::abs(frac) < 1e-9) {
      out.pressures.row(k) = raw.pressures.row(i); // shared grid point, exact
    } else if (frac > 1.0 - 1e-9) {
      out.pressures.row(k) = raw.pressures.row(i + 1);
    } else {
      out.pressures.row(k) =
          (1.0 - frac) * raw.pressures.row(i) + frac * raw.pressures.row(i + 1);
    }
  }
  return out;
}

} // namespace neuralme
