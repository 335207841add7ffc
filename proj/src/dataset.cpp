#include "forestiv/dataset.hpp"

#include "forestiv/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace forestiv {

namespace {

constexpr const char* kPartitionColumn = "__partition";

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    cells.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + s.size()) return false;
  *out = v;
  return true;
}

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::test: return "test";
    case Partition::unlabel: return "unlabel";
  }
  return "?";
}

std::vector<Index> Dataset::rows_with(Partition p) const {
  std::vector<Index> out;
  for (Index i = 0; i < n_rows(); ++i)
    if (partition[static_cast<std::size_t>(i)] == p) out.push_back(i);
  return out;
}

std::vector<Index> Dataset::label_rows() const {
  std::vector<Index> out;
  for (Index i = 0; i < n_rows(); ++i)
    if (partition[static_cast<std::size_t>(i)] != Partition::unlabel) out.push_back(i);
  return out;
}

std::vector<Index> Dataset::pool_rows() const {
  std::vector<Index> out;
  for (Index i = 0; i < n_rows(); ++i)
    if (partition[static_cast<std::size_t>(i)] != Partition::train) out.push_back(i);
  return out;
}

std::vector<Index> Dataset::all_rows() const {
  std::vector<Index> out(static_cast<std::size_t>(n_rows()));
  for (Index i = 0; i < n_rows(); ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.features = features(rows, Eigen::all);
  out.truth = truth(rows);
  out.has_truth.reserve(rows.size());
  out.partition.reserve(rows.size());
  for (Index r : rows) {
    out.has_truth.push_back(has_truth[static_cast<std::size_t>(r)]);
    out.partition.push_back(partition[static_cast<std::size_t>(r)]);
  }
  out.feature_names = feature_names;
  out.truth_name = truth_name;
  return out;
}

void Dataset::validate() const {
  const Index n = n_rows();
  if (n < 1 || n_features() < 1)
    throw std::invalid_argument("dataset: need at least one row and one feature");
  if (truth.size() != n || static_cast<Index>(has_truth.size()) != n ||
      static_cast<Index>(partition.size()) != n)
    throw std::invalid_argument("dataset: column lengths disagree");
  if (!features.allFinite())
    throw std::invalid_argument("dataset: non-finite feature value");
  for (Index i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    if (partition[s] != Partition::unlabel && !has_truth[s])
      throw std::invalid_argument("dataset: labeled row without truth");
    if (has_truth[s] && !std::isfinite(truth[i]))
      throw std::invalid_argument("dataset: non-finite truth value");
  }
}

Dataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const std::vector<std::string> header = split_line(line);
  if (header.empty()) throw ConfigError(path + ": empty header");

  for (const auto& [name, role] : schema) {
    (void)role;
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw ConfigError(path + ": schema names missing column '" + name + "'");
  }

  std::vector<ColumnRole> roles(header.size());
  int partition_col = -1;
  int truth_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == kPartitionColumn) {
      partition_col = static_cast<int>(c);
      roles[c] = ColumnRole::ignore;
      continue;
    }
    const auto it = schema.find(header[c]);
    if (it == schema.end())
      throw ConfigError(path + ": no schema role for column '" + header[c] + "'");
    roles[c] = it->second;
    if (it->second == ColumnRole::truth) {
      if (truth_col >= 0) throw ConfigError(path + ": more than one truth column");
      truth_col = static_cast<int>(c);
    }
  }

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw ConfigError(path + ": row " + std::to_string(rows.size() + 2) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ConfigError(path + ": zero data rows");
  const Index n = static_cast<Index>(rows.size());

  // feature columns: numeric unless some cell fails to parse, in which case
  // the whole column is integer-encoded by first appearance
  std::vector<int> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (roles[c] == ColumnRole::feature) feature_cols.push_back(static_cast<int>(c));
  if (feature_cols.empty()) throw ConfigError(path + ": schema defines no feature column");

  Dataset d;
  d.features.resize(n, static_cast<Index>(feature_cols.size()));
  for (std::size_t k = 0; k < feature_cols.size(); ++k) {
    const auto c = static_cast<std::size_t>(feature_cols[k]);
    d.feature_names.push_back(header[c]);
    bool numeric = true;
    for (Index r = 0; r < n; ++r) {
      double v;
      if (!parse_double(rows[static_cast<std::size_t>(r)][c], &v)) {
        numeric = false;
        break;
      }
      if (!std::isfinite(v)) throw ConfigError(path + ": non-finite value in column '" + header[c] + "'");
      d.features(r, static_cast<Index>(k)) = v;
    }
    if (numeric) continue;
    std::map<std::string, double> codes;
    for (Index r = 0; r < n; ++r) {
      const std::string& cell = rows[static_cast<std::size_t>(r)][c];
      if (cell.empty()) throw ConfigError(path + ": missing value in column '" + header[c] + "'");
      auto it = codes.find(cell);
      if (it == codes.end())
        it = codes.emplace(cell, static_cast<double>(codes.size())).first;
      d.features(r, static_cast<Index>(k)) = it->second;
    }
  }

  d.truth = Vec::Constant(n, std::numeric_limits<double>::quiet_NaN());
  d.has_truth.assign(static_cast<std::size_t>(n), 0);
  if (truth_col >= 0) {
    d.truth_name = header[static_cast<std::size_t>(truth_col)];
    for (Index r = 0; r < n; ++r) {
      const std::string& cell = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(truth_col)];
      if (cell.empty()) continue;
      double v;
      if (!parse_double(cell, &v))
        throw ConfigError(path + ": non-numeric cell in numeric column '" + d.truth_name + "'");
      d.truth[r] = v;
      d.has_truth[static_cast<std::size_t>(r)] = 1;
    }
  }

  d.partition.assign(static_cast<std::size_t>(n), Partition::unlabel);
  if (partition_col >= 0) {
    for (Index r = 0; r < n; ++r) {
      const std::string& cell = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(partition_col)];
      if (cell == "train")
        d.partition[static_cast<std::size_t>(r)] = Partition::train;
      else if (cell == "test")
        d.partition[static_cast<std::size_t>(r)] = Partition::test;
      else if (cell == "unlabel")
        d.partition[static_cast<std::size_t>(r)] = Partition::unlabel;
      else
        throw ConfigError(path + ": bad __partition value '" + cell + "'");
    }
  }

  d.validate();
  return d;
}

void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write file: " + path);
  for (Index c = 0; c < d.n_features(); ++c) {
    if (c) out << ',';
    out << d.feature_names[static_cast<std::size_t>(c)];
  }
  if (!d.truth_name.empty()) out << ',' << d.truth_name;
  out << ',' << kPartitionColumn << '\n';
  for (Index r = 0; r < d.n_rows(); ++r) {
    for (Index c = 0; c < d.n_features(); ++c) {
      if (c) out << ',';
      out << format_double(d.features(r, c));
    }
    if (!d.truth_name.empty()) {
      out << ',';
      if (d.has_truth[static_cast<std::size_t>(r)]) out << format_double(d.truth[r]);
    }
    out << ',' << partition_name(d.partition[static_cast<std::size_t>(r)]) << '\n';
  }
}

Dataset split(const Dataset& d, Index n_train, Index n_test, std::uint64_t seed) {
  const Index n = d.n_rows();
  if (n_train < 0 || n_test < 0 || n_train + n_test > n)
    throw std::invalid_argument("split: insufficient rows");
  Rng rng(seed);
  auto order = rng.sample_without_replacement<Index>(n, n_train + n_test);
  Dataset out = d;
  out.partition.assign(static_cast<std::size_t>(n), Partition::unlabel);
  for (Index k = 0; k < n_train + n_test; ++k) {
    const Index r = order[static_cast<std::size_t>(k)];
    if (!d.has_truth[static_cast<std::size_t>(r)])
      throw std::invalid_argument("split: truth missing on a labeled row");
    out.partition[static_cast<std::size_t>(r)] = k < n_train ? Partition::train : Partition::test;
  }
  return out;
}

void EconData::validate(Index n) const {
  if (y.size() != n || controls.rows() != n)
    throw std::invalid_argument("econ data: row count mismatch");
  if (controls.cols() < 1 || !(controls.col(0).array() == 1.0).all())
    throw std::invalid_argument("econ data: controls must carry a leading intercept column");
  if (static_cast<Index>(control_names.size()) != controls.cols())
    throw std::invalid_argument("econ data: control name count mismatch");
}

std::vector<std::string> coefficient_names(const EconData& econ) {
  std::vector<std::string> names;
  names.push_back(econ.control_names.empty() ? "(Intercept)" : econ.control_names[0]);
  names.push_back(econ.x_name);
  for (std::size_t k = 1; k < econ.control_names.size(); ++k)
    names.push_back(econ.control_names[k]);
  return names;
}

EconSample make_sample(const EconData& econ, const std::vector<Index>& rows,
                       const Vec& x_at_rows) {
  if (static_cast<Index>(rows.size()) != x_at_rows.size())
    throw std::invalid_argument("make_sample: x length must match row count");
  EconSample s;
  s.y = econ.y(rows);
  s.x = x_at_rows;
  s.controls = econ.controls(rows, Eigen::all);
  s.row_ids = rows;
  return s;
}

std::map<std::string, Vec> read_csv_columns(const std::string& path,
                                            const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_line(line);
  std::map<std::string, std::size_t> col;
  for (const auto& name : names) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError(path + ": missing column '" + name + "'");
    col[name] = static_cast<std::size_t>(it - header.begin());
  }
  std::map<std::string, std::vector<double>> vals;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto cells = split_line(line);
    for (const auto& [name, c] : col) {
      double v;
      if (c >= cells.size() || !parse_double(cells[c], &v))
        throw ConfigError(path + ": non-numeric cell in column '" + name + "'");
      vals[name].push_back(v);
    }
  }
  std::map<std::string, Vec> out;
  for (auto& [name, v] : vals)
    out[name] = Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
  return out;
}

}  // namespace forestiv
