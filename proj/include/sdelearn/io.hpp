#ifndef SDELEARN_IO_HPP
#define SDELEARN_IO_HPP

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/gibbs.hpp"
#include "sdelearn/linalg.hpp"
#include "sdelearn/sde.hpp"

namespace sdelearn {

using Json = nlohmann::json;

/// Shortest text form that round-trips (printf %.17g).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path &path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
      throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  return out;
}

inline std::ifstream open_for_read(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return in;
}

inline std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

inline double parse_double(const std::string &text, const std::string &where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) {
      throw IoError(where + ": trailing characters in number '" + text + "'");
    }
    return v;
  } catch (const std::logic_error &) {
    throw IoError(where + ": cannot parse number '" + text + "'");
  }
}

inline void strip_cr(std::string &line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
}

inline std::string join_row(const std::vector<double> &row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i > 0) {
      out += ',';
    }
    out += format_double(row[i]);
  }
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Trajectory CSV
//
//   # x0=<v1> <v2> ...
//   # delta=<v>
//   t,x1,...,xd
//   <t_1>,<x_1>...

inline void write_trajectory_csv(std::ostream &out, const Trajectory &traj) {
  out << "# x0=";
  for (Eigen::Index c = 0; c < traj.dim(); ++c) {
    out << (c > 0 ? " " : "") << format_double(traj.x0()(c));
  }
  out << "\n# delta=" << format_double(traj.delta()) << "\nt";
  for (Eigen::Index c = 0; c < traj.dim(); ++c) {
    out << ",x" << c + 1;
  }
  out << '\n';
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    out << format_double(traj.times()(i));
    for (Eigen::Index c = 0; c < traj.dim(); ++c) {
      out << ',' << format_double(traj.states()(i, c));
    }
    out << '\n';
  }
}

inline void write_trajectory_csv(const std::filesystem::path &path, const Trajectory &traj) {
  auto out = detail::open_for_write(path);
  write_trajectory_csv(out, traj);
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

inline Trajectory read_trajectory_csv(std::istream &in, const std::string &name = "trajectory") {
  std::string line;
  std::vector<double> x0;
  double delta = 0.0;
  bool have_delta = false;
  while (std::getline(in, line)) {
    detail::strip_cr(line);
    if (line.rfind("# x0=", 0) == 0) {
      std::istringstream ss(line.substr(5));
      std::string tok;
      while (ss >> tok) {
        x0.push_back(detail::parse_double(tok, name + ": x0"));
      }
    } else if (line.rfind("# delta=", 0) == 0) {
      delta = detail::parse_double(line.substr(8), name + ": delta");
      have_delta = true;
    } else if (line.rfind('#', 0) == 0 || line.empty()) {
      continue;
    } else {
      break;
    }
  }
  if (x0.empty() || !have_delta) {
    throw IoError(name + ": missing '# x0=' or '# delta=' metadata");
  }
  const auto header = detail::split(line, ',');
  const auto d = static_cast<Eigen::Index>(x0.size());
  if (header.size() != x0.size() + 1 || header[0] != "t") {
    throw IoError(name + ": header must be t,x1,...,x" + std::to_string(d));
  }
  std::vector<double> times;
  std::vector<double> values;
  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto fields = detail::split(line, ',');
    const std::string where = name + ":" + std::to_string(lineno);
    if (fields.size() != header.size()) {
      throw IoError(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    times.push_back(detail::parse_double(fields[0], where));
    for (std::size_t c = 1; c < fields.size(); ++c) {
      values.push_back(detail::parse_double(fields[c], where));
    }
  }
  if (times.empty()) {
    throw IoError(name + ": no observations");
  }
  const auto m = static_cast<Eigen::Index>(times.size());
  Matrix states = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), m, d);
  Vector x0v = Eigen::Map<const Vector>(x0.data(), d);
  try {
    Trajectory traj(std::move(x0v), delta, std::move(states), times.front() - delta);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::abs(traj.times()(i) - times[static_cast<std::size_t>(i)]) > 1e-9 * delta * static_cast<double>(i + 1)) {
        throw IoError(name + ": time column is not uniform with delta at row " + std::to_string(i + 1));
      }
    }
    return traj;
  } catch (const ParameterError &e) {
    throw IoError(name + ": " + e.what());
  }
}

inline Trajectory read_trajectory_csv(const std::filesystem::path &path) {
  auto in = detail::open_for_read(path);
  return read_trajectory_csv(in, path.string());
}

// ---------------------------------------------------------------------------
// Samples CSV: iter, beta_1..beta_{md}, sigma_11..sigma_dd, tau, theta0,
// then lambda_i (scalar scales) or lambda_i_jk (matrix scales), then theta_i.

inline std::vector<std::string> samples_header(const ChainState &s, Eigen::Index dim) {
  std::vector<std::string> cols{"iter"};
  for (Eigen::Index i = 0; i < s.beta.size(); ++i) {
    cols.push_back("beta_" + std::to_string(i + 1));
  }
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      cols.push_back("sigma_" + std::to_string(r + 1) + std::to_string(c + 1));
    }
  }
  cols.emplace_back("tau");
  cols.emplace_back("theta0");
  for (Eigen::Index i = 0; i < s.local.scalars.size(); ++i) {
    cols.push_back("lambda_" + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < s.local.matrices.size(); ++i) {
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) {
        cols.push_back("lambda_" + std::to_string(i + 1) + "_" + std::to_string(r + 1) +
                       std::to_string(c + 1));
      }
    }
  }
  for (Eigen::Index i = 0; i < s.theta.size(); ++i) {
    cols.push_back("theta_" + std::to_string(i + 1));
  }
  return cols;
}

inline void write_samples_csv(std::ostream &out, const PosteriorSamples &samples) {
  if (samples.states.empty()) {
    throw ParameterError("write_samples_csv: no stored states");
  }
  const Eigen::Index d = samples.dim();
  const auto header = samples_header(samples.states.front(), d);
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i > 0 ? "," : "") << header[i];
  }
  out << '\n';
  for (std::size_t k = 0; k < samples.states.size(); ++k) {
    const ChainState &s = samples.states[k];
    std::vector<double> row;
    row.reserve(header.size());
    row.push_back(static_cast<double>(samples.sweeps[k]));
    row.insert(row.end(), s.beta.data(), s.beta.data() + s.beta.size());
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        row.push_back(s.sigma(r, c));
      }
    }
    row.push_back(s.tau);
    row.push_back(s.theta0);
    row.insert(row.end(), s.local.scalars.data(), s.local.scalars.data() + s.local.scalars.size());
    for (const Matrix &lam : s.local.matrices) {
      for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
          row.push_back(lam(r, c));
        }
      }
    }
    row.insert(row.end(), s.theta.data(), s.theta.data() + s.theta.size());
    out << detail::join_row(row) << '\n';
  }
}

inline void write_samples_csv(const std::filesystem::path &path, const PosteriorSamples &samples) {
  auto out = detail::open_for_write(path);
  write_samples_csv(out, samples);
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

/// Reads the sampled states back; the kernel and centers are not stored in
/// the samples file and are left empty.
inline PosteriorSamples read_samples_csv(std::istream &in, const std::string &name = "samples") {
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError(name + ": empty file");
  }
  detail::strip_cr(line);
  const auto header = detail::split(line, ',');
  if (header.empty() || header[0] != "iter") {
    throw IoError(name + ": header must start with 'iter'");
  }
  Eigen::Index n_beta = 0;
  Eigen::Index n_sigma = 0;
  Eigen::Index n_lambda = 0;
  Eigen::Index n_lambda_mat = 0;
  Eigen::Index n_theta = 0;
  for (const auto &col : header) {
    if (col.rfind("beta_", 0) == 0) {
      ++n_beta;
    } else if (col.rfind("sigma_", 0) == 0) {
      ++n_sigma;
    } else if (col.rfind("lambda_", 0) == 0) {
      (col.find('_', 7) == std::string::npos ? n_lambda : n_lambda_mat) += 1;
    } else if (col.rfind("theta_", 0) == 0) {
      ++n_theta;
    }
  }
  const auto d = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n_sigma))));
  if (d * d != n_sigma || d == 0 || n_beta % d != 0) {
    throw IoError(name + ": inconsistent beta/sigma column counts");
  }
  PosteriorSamples out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto fields = detail::split(line, ',');
    const std::string where = name + ":" + std::to_string(lineno);
    if (fields.size() != header.size()) {
      throw IoError(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    std::vector<double> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      v[i] = detail::parse_double(fields[i], where);
    }
    std::size_t pos = 0;
    const auto take = [&](Eigen::Index n) {
      Vector x = Eigen::Map<const Vector>(v.data() + pos, n);
      pos += static_cast<std::size_t>(n);
      return x;
    };
    ChainState s;
    out.sweeps.push_back(static_cast<int>(v[pos++]));
    s.beta = take(n_beta);
    s.sigma = take(n_sigma).reshaped<Eigen::RowMajor>(d, d);
    s.tau = v[pos++];
    s.theta0 = v[pos++];
    s.local.scalars = take(n_lambda);
    for (Eigen::Index i = 0; i < n_lambda_mat / (d * d); ++i) {
      s.local.matrices.push_back(take(d * d).reshaped<Eigen::RowMajor>(d, d));
    }
    s.theta = take(n_theta);
    out.states.push_back(std::move(s));
  }
  if (out.states.empty()) {
    throw IoError(name + ": no sample rows");
  }
  return out;
}

inline PosteriorSamples read_samples_csv(const std::filesystem::path &path) {
  auto in = detail::open_for_read(path);
  return read_samples_csv(in, path.string());
}

// ---------------------------------------------------------------------------
// Plain numeric tables and JSON helpers

inline void write_table_csv(const std::filesystem::path &path, const std::vector<std::string> &header,
                            const Matrix &rows) {
  if (static_cast<Eigen::Index>(header.size()) != rows.cols()) {
    throw ParameterError("write_table_csv: header width does not match table");
  }
  auto out = detail::open_for_write(path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i > 0 ? "," : "") << header[i];
  }
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = rows(r, c);
    }
    out << detail::join_row(row) << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

inline Json to_json(const Vector &v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Json to_json(const Matrix &m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row.push_back(m(r, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vector vector_from_json(const Json &j, const std::string &field) {
  if (j.is_number()) {
    return Vector::Constant(1, j.get<double>());
  }
  if (!j.is_array()) {
    throw ConfigError(field + ": expected a number array");
  }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw ConfigError(field + ": expected a number array");
    }
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

/// Accepts a scalar (1x1), a flat array (diagonal) or an array of rows.
inline Matrix matrix_from_json(const Json &j, const std::string &field) {
  if (j.is_number()) {
    return Matrix::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array() || j.empty()) {
    throw ConfigError(field + ": expected a matrix");
  }
  if (!j[0].is_array()) {
    return vector_from_json(j, field).asDiagonal();
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = vector_from_json(j[static_cast<std::size_t>(r)], field);
    if (row.size() != cols) {
      throw ConfigError(field + ": ragged matrix rows");
    }
    m.row(r) = row.transpose();
  }
  return m;
}

inline void write_json(const std::filesystem::path &path, const Json &j) {
  auto out = detail::open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

inline Json read_json(const std::filesystem::path &path) {
  auto in = detail::open_for_read(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error &e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

} // namespace sdelearn

#endif // SDELEARN_IO_HPP
