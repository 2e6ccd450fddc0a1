#ifndef CMGP_DATASET_HPP
#define CMGP_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numcore.hpp"

namespace cmgp {

struct DatasetMeta {
  int num_actions = 0;
  int num_outcomes = 0;
  std::uint64_t seed = 0;
  std::string dgp;
};

/// Observational sample: covariates X (N x P), observed action A, outcomes
/// Y (N x M) revealed under the observed action only.
struct Dataset {
  Matrix X;
  std::vector<int> A;
  Matrix Y;
  DatasetMeta meta;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index num_covariates() const { return X.cols(); }
  int num_actions() const { return meta.num_actions; }
  int num_outcomes() const { return meta.num_outcomes; }

  void validate() const {
    if (static_cast<Eigen::Index>(A.size()) != X.rows() || Y.rows() != X.rows()) {
      throw DimensionMismatch("dataset row counts disagree");
    }
    if (Y.cols() != meta.num_outcomes) {
      throw DimensionMismatch("outcome columns vs meta.num_outcomes");
    }
    if (!X.allFinite() || !Y.allFinite()) {
      throw InvalidArgument("dataset contains non-finite values");
    }
    for (int a : A) {
      if (a < 0 || a >= meta.num_actions) {
        throw InvalidArgument("action index " + std::to_string(a) +
                              " outside [0, " +
                              std::to_string(meta.num_actions) + ")");
      }
    }
  }

  Dataset subset(const std::vector<Eigen::Index> &rows) const {
    Dataset out;
    out.meta = meta;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.Y.resize(static_cast<Eigen::Index>(rows.size()), Y.cols());
    out.A.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.X.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
      out.Y.row(static_cast<Eigen::Index>(r)) = Y.row(rows[r]);
      out.A.push_back(A[static_cast<std::size_t>(rows[r])]);
    }
    return out;
  }
};

/// 17 significant digits: every double round-trips exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string &s) {
  char *end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw FormatError("not a number: '" + s + "'");
  }
  return v;
}

} // namespace detail

/// Header x0,...,x{P-1},a,y0,...,y{M-1}.
inline void write_csv(std::ostream &out, const Dataset &data) {
  for (Eigen::Index j = 0; j < data.X.cols(); ++j) out << 'x' << j << ',';
  out << 'a';
  for (Eigen::Index m = 0; m < data.Y.cols(); ++m) out << ",y" << m;
  out << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) {
      out << format_double(data.X(i, j)) << ',';
    }
    out << data.A[static_cast<std::size_t>(i)];
    for (Eigen::Index m = 0; m < data.Y.cols(); ++m) {
      out << ',' << format_double(data.Y(i, m));
    }
    out << '\n';
  }
}

inline void write_csv(const std::string &path, const Dataset &data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  write_csv(out, data);
}

/*
 * Reads the dataset CSV. The number of actions is not part of the format;
 * it is taken from num_actions when positive, otherwise max(a) + 1.
 */
inline Dataset read_csv(std::istream &in, int num_actions = 0) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  int p = 0;
  int m = 0;
  int action_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string &h = header[c];
    if (h == "a") {
      action_col = static_cast<int>(c);
    } else if (!h.empty() && h[0] == 'x' && action_col < 0 &&
               h == "x" + std::to_string(p)) {
      ++p;
    } else if (!h.empty() && h[0] == 'y' && action_col >= 0 &&
               h == "y" + std::to_string(m)) {
      ++m;
    } else {
      throw FormatError("unexpected header column '" + h + "'");
    }
  }
  if (action_col != p || m < 1) {
    throw FormatError("header must be x0..x{P-1},a,y0..y{M-1}");
  }
  std::vector<std::vector<double>> rows;
  std::vector<int> actions;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("row has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (static_cast<int>(c) == action_col) {
        const double a = detail::parse_double(cells[c]);
        if (a != std::floor(a)) throw FormatError("non-integer action");
        actions.push_back(static_cast<int>(a));
      } else {
        row.push_back(detail::parse_double(cells[c]));
      }
    }
    rows.push_back(std::move(row));
  }
  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.X.resize(n, p);
  data.Y.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &r = rows[static_cast<std::size_t>(i)];
    for (int j = 0; j < p; ++j) data.X(i, j) = r[static_cast<std::size_t>(j)];
    for (int k = 0; k < m; ++k) data.Y(i, k) = r[static_cast<std::size_t>(p + k)];
  }
  data.A = std::move(actions);
  int max_action = -1;
  for (int a : data.A) max_action = std::max(max_action, a);
  data.meta.num_actions = num_actions > 0 ? num_actions : max_action + 1;
  data.meta.num_outcomes = m;
  data.validate();
  return data;
}

inline Dataset read_csv(const std::string &path, int num_actions = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return read_csv(in, num_actions);
}

} // namespace cmgp

#endif
