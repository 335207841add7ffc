#include "forestiv/dataset.hpp"

#include "forestiv/rng.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

using namespace forestiv;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& text) {
    path = std::string("/tmp/forestiv_test_") + std::to_string(Rng(::getpid()).next_u64()) + ".csv";
    std::ofstream out(path);
    out << text;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

Dataset tiny_dataset(Index n, Index p, std::uint64_t seed, bool with_truth = true) {
  Rng rng(seed);
  Dataset d;
  d.features.resize(n, p);
  d.truth.resize(n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < p; ++c) d.features(r, c) = rng.normal();
    d.truth[r] = rng.normal();
  }
  d.has_truth.assign(static_cast<std::size_t>(n), with_truth ? 1 : 0);
  d.partition.assign(static_cast<std::size_t>(n), Partition::unlabel);
  for (Index c = 0; c < p; ++c) d.feature_names.push_back("f" + std::to_string(c));
  d.truth_name = "y";
  return d;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("small csv parses with the expected shape") {
  TempFile file("a,b,y\n1,2,0.5\n3,4,1.5\n5,6,2.5\n");
  const auto d = load_csv(file.path, {{"a", ColumnRole::feature},
                                      {"b", ColumnRole::feature},
                                      {"y", ColumnRole::truth}});
  CHECK(d.n_rows() == 3);
  CHECK(d.n_features() == 2);
  CHECK(d.truth[2] == 2.5);
  CHECK(d.features(1, 0) == 3.0);
  CHECK(d.truth_name == "y");
}

TEST_CASE("header-only file reports zero data rows") {
  TempFile file("a,y\n");
  CHECK_THROWS_WITH_AS(load_csv(file.path, {{"a", ColumnRole::feature}, {"y", ColumnRole::truth}}),
                       doctest::Contains("zero data rows"), ConfigError);
}

TEST_CASE("bike-format file: 12 features plus truth column") {
  std::string header, row;
  Schema schema;
  for (int c = 1; c <= 12; ++c) {
    header += "f" + std::to_string(c) + ",";
    row += std::to_string(c) + ".0,";
    schema["f" + std::to_string(c)] = ColumnRole::feature;
  }
  header += "lnCnt\n";
  row += "4.2\n";
  schema["lnCnt"] = ColumnRole::truth;
  TempFile file(header + row + row);
  const auto d = load_csv(file.path, schema);
  CHECK(d.n_features() == 12);
  CHECK(d.truth_name == "lnCnt");
}

TEST_CASE("schema errors") {
  TempFile file("a,y\n1,2\n");
  CHECK_THROWS_AS(load_csv(file.path, {{"a", ColumnRole::feature},
                                       {"y", ColumnRole::truth},
                                       {"missing", ColumnRole::feature}}),
                  ConfigError);
  // column without a role
  CHECK_THROWS_AS(load_csv(file.path, {{"a", ColumnRole::feature}}), ConfigError);
  // non-numeric truth cell
  TempFile bad("a,y\n1,huh\n");
  CHECK_THROWS_WITH_AS(load_csv(bad.path, {{"a", ColumnRole::feature}, {"y", ColumnRole::truth}}),
                       doctest::Contains("non-numeric"), ConfigError);
}

TEST_CASE("categorical features are integer-encoded in first-appearance order") {
  TempFile file("color,y\nred,1\nblue,2\nred,3\ngreen,4\n");
  const auto d = load_csv(file.path, {{"color", ColumnRole::feature}, {"y", ColumnRole::truth}});
  CHECK(d.features(0, 0) == 0.0);
  CHECK(d.features(1, 0) == 1.0);
  CHECK(d.features(2, 0) == 0.0);
  CHECK(d.features(3, 0) == 2.0);
}

TEST_CASE("split counts match the request exactly and partition the rows") {
  const auto base = tiny_dataset(17379, 2, 11);
  const auto d = split(base, 1000, 200, 99);
  CHECK(d.rows_with(Partition::train).size() == 1000);
  CHECK(d.rows_with(Partition::test).size() == 200);
  CHECK(d.rows_with(Partition::unlabel).size() == 16179);

  std::set<Index> seen;
  for (Partition p : {Partition::train, Partition::test, Partition::unlabel})
    for (Index r : d.rows_with(p)) CHECK(seen.insert(r).second);
  CHECK(seen.size() == 17379);
}

TEST_CASE("split boundary: everything labeled") {
  const auto base = tiny_dataset(40, 2, 3);
  const auto d = split(base, 40, 0, 5);
  CHECK(d.rows_with(Partition::unlabel).empty());
  CHECK_THROWS_AS(split(base, 41, 0, 5), std::invalid_argument);
}

TEST_CASE("split is deterministic given the seed") {
  const auto base = tiny_dataset(500, 3, 17);
  const auto a = split(base, 100, 50, 123);
  const auto b = split(base, 100, 50, 123);
  const auto c = split(base, 100, 50, 124);
  CHECK(a.partition == b.partition);
  CHECK(a.partition != c.partition);
}

TEST_CASE("split refuses rows without truth") {
  auto base = tiny_dataset(20, 2, 3);
  base.has_truth[4] = 0;
  base.truth[4] = std::numeric_limits<double>::quiet_NaN();
  bool hit = false;
  for (std::uint64_t seed = 0; seed < 50 && !hit; ++seed) {
    try {
      split(base, 15, 5, seed);
    } catch (const std::invalid_argument& e) {
      hit = std::string(e.what()).find("truth missing") != std::string::npos;
    }
  }
  CHECK(hit);
}

TEST_CASE("export and reload round-trips bits, tags and names") {
  auto d = tiny_dataset(64, 3, 7);
  // extreme magnitudes stress the formatter
  d.features(0, 0) = 1e300;
  d.features(1, 1) = -1e-300;
  d.features(2, 2) = 0.1;
  d.truth[5] = 3.141592653589793;
  d.has_truth[9] = 0;
  d.truth[9] = std::numeric_limits<double>::quiet_NaN();
  d.partition[3] = Partition::train;
  d.partition[8] = Partition::test;

  TempFile file("");
  save_csv(d, file.path);
  Schema schema{{"y", ColumnRole::truth}};
  for (const auto& name : d.feature_names) schema[name] = ColumnRole::feature;
  const auto back = load_csv(file.path, schema);

  REQUIRE(back.n_rows() == d.n_rows());
  REQUIRE(back.n_features() == d.n_features());
  for (Index r = 0; r < d.n_rows(); ++r) {
    for (Index c = 0; c < d.n_features(); ++c) CHECK(back.features(r, c) == d.features(r, c));
    CHECK(back.has_truth[static_cast<std::size_t>(r)] == d.has_truth[static_cast<std::size_t>(r)]);
    if (d.has_truth[static_cast<std::size_t>(r)]) CHECK(back.truth[r] == d.truth[r]);
    CHECK(back.partition[static_cast<std::size_t>(r)] == d.partition[static_cast<std::size_t>(r)]);
  }
  CHECK(back.feature_names == d.feature_names);
  CHECK(back.truth_name == d.truth_name);
}

TEST_CASE("validation rejects non-finite features and unlabeled truth gaps") {
  auto d = tiny_dataset(10, 2, 1);
  d.features(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
  auto e = tiny_dataset(10, 2, 1);
  e.partition[0] = Partition::train;
  e.has_truth[0] = 0;
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
}

TEST_CASE("econ sample view carries the intercept and row ids") {
  EconData econ;
  econ.y = Vec::LinSpaced(6, 0.0, 5.0);
  econ.controls.resize(6, 2);
  econ.controls.col(0).setOnes();
  econ.controls.col(1) = Vec::LinSpaced(6, -1.0, 1.0);
  econ.control_names = {"(Intercept)", "z1"};
  econ.validate(6);

  const std::vector<Index> rows{1, 3, 5};
  const auto s = make_sample(econ, rows, Vec::Ones(3));
  CHECK(s.y[1] == 3.0);
  CHECK(s.controls.rows() == 3);
  CHECK(s.row_ids == rows);
  CHECK(coefficient_names(econ) == std::vector<std::string>{"(Intercept)", "x", "z1"});
}

}  // TEST_SUITE
