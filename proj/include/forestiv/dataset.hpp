#pragma once

#include "forestiv/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace forestiv {

enum class Partition : std::uint8_t { train = 0, test = 1, unlabel = 2 };

const char* partition_name(Partition p);

enum class ColumnRole { feature, truth, ignore };

// Column name -> role. Every column in the file must be named here, except
// the reserved `__partition` column which is recognized automatically.
using Schema = std::map<std::string, ColumnRole>;

// Immutable after construction; safe to share read-only across workers.
struct Dataset {
  Mat features;                          // n x p, all finite
  Vec truth;                             // length n, NaN where absent
  std::vector<std::uint8_t> has_truth;   // length n
  std::vector<Partition> partition;      // length n
  std::vector<std::string> feature_names;
  std::string truth_name;

  Index n_rows() const { return features.rows(); }
  Index n_features() const { return features.cols(); }

  std::vector<Index> rows_with(Partition p) const;
  // D_label = D_train ∪ D_test
  std::vector<Index> label_rows() const;
  // D_test ∪ D_unlabel, the instrument-selection pool
  std::vector<Index> pool_rows() const;
  std::vector<Index> all_rows() const;

  Dataset subset(const std::vector<Index>& rows) const;

  // checks the structural invariants; throws on violation
  void validate() const;
};

Dataset load_csv(const std::string& path, const Schema& schema);
void save_csv(const Dataset& d, const std::string& path);

// Uniformly random disjoint train/test assignment without replacement;
// remaining rows tagged unlabel. Deterministic given seed.
Dataset split(const Dataset& d, Index n_train, Index n_test, std::uint64_t seed);

// Dependent variable and controls for the econometric model, one row per
// dataset row. controls carries a leading all-ones intercept column.
struct EconData {
  Vec y;
  Mat controls;
  std::string x_name = "x";
  std::vector<std::string> control_names;  // size controls.cols(), [0] is the intercept

  void validate(Index n) const;
};

// Coefficient order used everywhere: intercept, x, remaining controls.
std::vector<std::string> coefficient_names(const EconData& econ);

// Regression-sample view over a subset of rows.
struct EconSample {
  Vec y;
  Vec x;
  Mat controls;  // leading all-ones column
  std::vector<Index> row_ids;
};

EconSample make_sample(const EconData& econ, const std::vector<Index>& rows,
                       const Vec& x_at_rows);

// Reads named columns of a CSV as numeric vectors (for econ data stored
// alongside features).
std::map<std::string, Vec> read_csv_columns(const std::string& path,
                                            const std::vector<std::string>& names);

}  // namespace forestiv
