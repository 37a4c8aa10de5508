#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ndcn/datasets.hpp"
#include "ndcn/errors.hpp"

using namespace ndcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ndcn_test_" + name);
  fs::remove_all(p);
  return p;
}

LabeledGraphBundle toy() {
  LabeledGraphBundle b;
  b.graph = Graph(4, {{0, 1}, {1, 2}, {2, 3}});
  b.features.resize(4, 2);
  b.features << 0.1, -2.5, 1.0 / 3.0, 4e-17, 7, 8, -0.0625, 1e10;
  b.labels = {0, 1, 1, -1};
  b.num_classes = 2;
  b.train = {0};
  b.val = {1};
  b.test = {2};
  return b;
}

}  // namespace

TEST_CASE("toy bundle round-trips bitwise") {
  const fs::path dir = scratch("toy");
  const LabeledGraphBundle b = toy();
  save_bundle(dir.string(), b);
  CHECK(load_bundle(dir.string()) == b);
  fs::remove_all(dir);
}

TEST_CASE("load_bundle errors") {
  CHECK_THROWS_AS(load_bundle("/nonexistent/bundle"), NotFound);

  const fs::path dir = scratch("broken");
  save_bundle(dir.string(), toy());
  fs::remove(dir / "labels.csv");
  CHECK_THROWS_AS(load_bundle(dir.string()), NotFound);

  { std::ofstream(dir / "labels.csv") << "0\n1\n"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);

  { std::ofstream(dir / "labels.csv") << "0\n1\n1\n-1\n"; }
  { std::ofstream(dir / "split.json") << R"({"train":[0,1],"val":[1],"test":[2]})"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);

  { std::ofstream(dir / "split.json") << R"({"train":[0],"val":[1],"test":[3]})"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);

  { std::ofstream(dir / "split.json") << R"({"train":[0],"val":[1],"test":[2],"counts":{"train":2}})"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);

  { std::ofstream(dir / "split.json") << R"({"train":[0],"val":[1]})"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);

  { std::ofstream(dir / "split.json") << R"({"train":[0],"val":[1],"test":[2]})"; }
  { std::ofstream(dir / "features.csv") << "1,2\n3\n5,6\n7,8\n"; }
  CHECK_THROWS_AS(load_bundle(dir.string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("validate rejects broken bundles") {
  LabeledGraphBundle b = toy();
  b.features(0, 0) = NAN;
  CHECK_THROWS_AS(validate(b), FormatError);
  b = toy();
  b.test = {3};  // unlabeled node in a split
  CHECK_THROWS_AS(validate(b), FormatError);
  b = toy();
  b.labels[0] = 2;
  CHECK_THROWS_AS(validate(b), FormatError);
}

TEST_CASE("gen_sbm_bundle") {
  const LabeledGraphBundle b = gen_sbm_bundle(200, 2, 0.1, 0.01, 1.0, 0.1, 5);
  CHECK_NOTHROW(validate(b));
  CHECK(b.num_nodes() == 200);
  CHECK(b.num_classes == 2);
  CHECK(b.train.size() == 20);
  CHECK(b.val.size() + b.test.size() == 180);
  CHECK(b.val.size() == 90);
  int per_block[2] = {0, 0};
  for (int i : b.train) ++per_block[b.labels[i]];
  CHECK(per_block[0] == 10);
  CHECK(per_block[1] == 10);

  // Without noise the features are the block indicator.
  const LabeledGraphBundle clean = gen_sbm_bundle(60, 3, 0.3, 0.02, 0.0, 0.2, 6);
  for (int i = 0; i < 60; ++i) {
    Eigen::Index arg;
    clean.features.row(i).maxCoeff(&arg);
    CHECK(arg == clean.labels[i]);
    CHECK(clean.features.row(i).sum() == 1.0);
  }

  CHECK(gen_sbm_bundle(100, 2, 0.1, 0.01, 1.0, 0.1, 3) == gen_sbm_bundle(100, 2, 0.1, 0.01, 1.0, 0.1, 3));
  CHECK_THROWS_AS(gen_sbm_bundle(10, 5, 0.5, 0.1, 1.0, 0.1, 1), InvalidArgument);
  CHECK_THROWS_AS(gen_sbm_bundle(100, 2, 0.5, 0.1, 1.0, 1.0, 1), InvalidArgument);
}

TEST_CASE("equal p_in and p_out carry no block signal") {
  long within = 0, across = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LabeledGraphBundle b = gen_sbm_bundle(200, 2, 0.05, 0.05, 1.0, 0.1, seed);
    for (const auto& [i, j] : b.graph.edges()) (b.labels[i] == b.labels[j] ? within : across)++;
  }
  // 2 * C(100, 2) = 9900 within pairs vs 10000 across pairs per graph.
  const double ratio = static_cast<double>(within) / static_cast<double>(across);
  CHECK(ratio == doctest::Approx(0.99).epsilon(0.08));
}

TEST_CASE("row_normalized") {
  Matrix f(2, 3);
  f << 1, -3, 0, 0, 0, 0;
  const Matrix n = row_normalized(f);
  CHECK(n(0, 0) == 0.25);
  CHECK(n(0, 1) == -0.75);
  CHECK(n.row(1).isZero());
}
