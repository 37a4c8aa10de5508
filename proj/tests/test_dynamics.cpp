#include <Eigen/Eigenvalues>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ndcn/dynamics.hpp"
#include "ndcn/errors.hpp"
#include "test_util.hpp"

using namespace ndcn;

namespace {

const Graph kK2(2, {{0, 1}});

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

Matrix dense_laplacian(const Graph& g) {
  Matrix l = Matrix::Zero(g.num_nodes(), g.num_nodes());
  for (const auto& [i, j] : g.edges()) {
    l(i, j) = l(j, i) = -1.0;
    l(i, i) += 1.0;
    l(j, j) += 1.0;
  }
  return l;
}

// Scalar evaluators written directly from the formulas.
double mutualistic_scalar(const Graph& g, const Matrix& x, int i) {
  const MutualisticConstants k;
  const double xi = x(i, 0);
  double v = k.b + xi * (1 - xi / k.k) * (xi / k.c - 1);
  for (int j = 0; j < g.num_nodes(); ++j) {
    if (g.has_edge(i, j)) v += xi * x(j, 0) / (k.d + k.e * xi + k.h * x(j, 0));
  }
  return v;
}

double gene_scalar(const Graph& g, const Matrix& x, int i) {
  double v = -x(i, 0);
  for (int j = 0; j < g.num_nodes(); ++j) {
    if (g.has_edge(i, j)) v += x(j, 0) * x(j, 0) / (x(j, 0) * x(j, 0) + 1.0);
  }
  return v;
}

}  // namespace

TEST_CASE("heat_rhs") {
  const Matrix r = heat_rhs(kK2, column({1, 0}), 1.0);
  CHECK(r == column({-1, 1}));
  const Graph g = gen_erdos_renyi(10, 0.4, 3);
  CHECK(heat_rhs(g, Matrix::Constant(10, 1, 3.7), 2.0).cwiseAbs().maxCoeff() == 0.0);
  const Matrix x = testutil::random_matrix(10, 2, 5);
  CHECK((heat_rhs(g, x, 0.7) + 0.7 * dense_laplacian(g) * x).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(heat_rhs(g, Matrix::Zero(9, 1), 1.0), InvalidArgument);
}

TEST_CASE("heat_rhs sums to zero") {
  const Graph g = gen_barabasi_albert(60, 3, 2);
  const Matrix x = testutil::random_matrix(60, 1, 6, 0.0, 30.0);
  CHECK(std::abs(heat_rhs(g, x, 1.0).sum()) <= 1e-10);
}

TEST_CASE("mutualistic_rhs") {
  const MutualisticConstants k;
  const Graph single(1, {});
  CHECK(mutualistic_rhs(single, column({0}), k)(0, 0) == doctest::Approx(0.1));
  CHECK(mutualistic_rhs(single, column({5}), k)(0, 0) == doctest::Approx(0.1));
  const Matrix r = mutualistic_rhs(kK2, column({1, 1}), k);
  CHECK(r(0, 0) == doctest::Approx(0.1 + 1.0 / 6.0).epsilon(1e-14));
  CHECK(r(1, 0) == doctest::Approx(0.1 + 1.0 / 6.0).epsilon(1e-14));

  const Graph g = gen_erdos_renyi(10, 0.4, 9);
  const Matrix x = testutil::random_matrix(10, 1, 10, 0.0, 5.0);
  const Matrix m = mutualistic_rhs(g, x, k);
  for (int i = 0; i < 10; ++i) CHECK(std::abs(m(i, 0) - mutualistic_scalar(g, x, i)) <= 1e-12);

  MutualisticConstants zero = k;
  zero.d = 0.0;
  CHECK_THROWS_AS(mutualistic_rhs(kK2, column({0, 0}), zero), DegenerateInput);
}

TEST_CASE("gene_rhs") {
  const GeneConstants k;
  const Graph single(1, {});
  CHECK(gene_rhs(single, column({2}), k)(0, 0) == -2.0);
  const Matrix r = gene_rhs(kK2, column({0, 1}), k);
  CHECK(r(0, 0) == doctest::Approx(0.5));
  CHECK(r(1, 0) == doctest::Approx(-1.0));

  const Graph g = gen_erdos_renyi(10, 0.4, 12);
  const Matrix x = testutil::random_matrix(10, 1, 13, 0.0, 3.0);
  const Matrix m = gene_rhs(g, x, k);
  for (int i = 0; i < 10; ++i) CHECK(std::abs(m(i, 0) - gene_scalar(g, x, i)) <= 1e-12);

  GeneConstants frac = k;
  frac.h = 2.5;
  CHECK_THROWS_AS(gene_rhs(kK2, column({-0.5, 1}), frac), DegenerateInput);
}

TEST_CASE("dynamics spec validation") {
  DynamicsSpec s;
  s.gene.f = 3.0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = DynamicsSpec{};
  s.mutualistic.k = NAN;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  CHECK(parse_law("gene") == Law::gene);
  CHECK_THROWS_AS(parse_law("wave"), InvalidArgument);
}

TEST_CASE("default_initial_state") {
  const Matrix x = default_initial_state(20);
  CHECK(x.rows() == 400);
  auto at = [&](int r, int c) { return x(r * 20 + c, 0); };
  for (int r = 0; r < 20; ++r) {
    for (int c = 0; c < 20; ++c) {
      double expect = 0.0;
      if (r >= 1 && r < 5 && c >= 1 && c < 5) expect = 25.0;
      if (r >= 9 && r < 15 && c >= 9 && c < 15) expect = 20.0;
      if (r >= 1 && r < 5 && c >= 7 && c < 13) expect = 17.0;
      CHECK(at(r, c) == expect);
    }
  }
  CHECK((x.array() != 0.0).count() == 76);
  CHECK(x.sum() == 1528.0);
}

TEST_CASE("simulate_truth examples") {
  DynamicsSpec heat;
  const auto k2 = simulate_truth(kK2, heat, column({1, 0}), {10.0});
  CHECK(std::abs(k2.states[0](0, 0) - 0.5) <= 1e-6);
  CHECK(std::abs(k2.states[0](1, 0) - 0.5) <= 1e-6);

  for (Law law : {Law::heat, Law::mutualistic, Law::gene}) {
    DynamicsSpec s;
    s.law = law;
    const Matrix x0 = testutil::random_matrix(2, 1, 3, 0.0, 2.0);
    CHECK(simulate_truth(kK2, s, x0, {0.0}).states[0] == x0);
  }

  const Graph g = gen_erdos_renyi(20, 0.2, 5);
  const Matrix x0 = testutil::random_matrix(20, 1, 6, 0.0, 10.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(dense_laplacian(g));
  const auto traj = simulate_truth(g, heat, x0, {0.1});
  const Matrix exact = eig.eigenvectors() *
                       (-0.1 * eig.eigenvalues().array()).exp().matrix().asDiagonal() *
                       eig.eigenvectors().transpose() * x0;
  CHECK((traj.states[0] - exact).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("heat trajectories conserve mass and contract") {
  const Graph g = gen_barabasi_albert(100, 3, 4);
  const Matrix x0 = testutil::random_matrix(100, 1, 8, 0.0, 25.0);
  DynamicsSpec heat;
  std::vector<double> times;
  for (int k = 1; k <= 20; ++k) times.push_back(0.05 * k);
  const auto traj = simulate_truth(g, heat, x0, times);
  double hi = x0.maxCoeff(), lo = x0.minCoeff();
  for (const Matrix& x : traj.states) {
    CHECK(std::abs(x.sum() - x0.sum()) <= 1e-6 * std::abs(x0.sum()));
    CHECK(x.maxCoeff() <= hi + 1e-8);
    CHECK(x.minCoeff() >= lo - 1e-8);
    hi = x.maxCoeff();
    lo = x.minCoeff();
  }
}

TEST_CASE("ground truth converges under a tighter tolerance") {
  const Graph g = gen_grid8(10);
  const Matrix x0 = default_initial_state(10);
  const std::vector<double> times{0.5, 1.0, 2.5, 5.0};
  for (Law law : {Law::heat, Law::mutualistic, Law::gene}) {
    DynamicsSpec s;
    s.law = law;
    const auto base = simulate_truth(g, s, x0, times);
    const auto fine = simulate_truth(g, s, x0, times, 1e-9, 1e-11);
    for (std::size_t k = 0; k < times.size(); ++k) {
      CHECK((base.states[k] - fine.states[k]).cwiseAbs().maxCoeff() <= 1e-5);
    }
  }
}

TEST_CASE("rhs evaluations are pure") {
  const Graph g = gen_newman_watts(30, 4, 0.4, 1);
  const Matrix x = testutil::random_matrix(30, 1, 2, 0.0, 4.0);
  for (Law law : {Law::heat, Law::mutualistic, Law::gene}) {
    DynamicsSpec s;
    s.law = law;
    CHECK(dynamics_rhs(g, x, s) == dynamics_rhs(g, x, s));
  }
}

TEST_CASE("sample_times") {
  CHECK(sample_times(Sampling::regular, 4, 1.0, 0) == std::vector<double>{0.25, 0.5, 0.75, 1.0});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = sample_times(Sampling::irregular, 120, 5.0, seed);
    REQUIRE(t.size() == 120);
    CHECK(t.front() > 0.0);
    CHECK(t.back() <= 5.0);
    std::set<double> gaps;
    for (std::size_t k = 1; k < t.size(); ++k) {
      CHECK(t[k] > t[k - 1]);
      gaps.insert(t[k] - t[k - 1]);
    }
    CHECK(gaps.size() >= 2);
  }
  CHECK(sample_times(Sampling::irregular, 30, 2.0, 7) ==
        sample_times(Sampling::irregular, 30, 2.0, 7));
  CHECK_THROWS_AS(sample_times(Sampling::regular, 1, 1.0, 0), InvalidArgument);
  CHECK_THROWS_AS(sample_times(Sampling::regular, 5, 0.0, 0), InvalidArgument);
}

TEST_CASE("trajectory csv") {
  Trajectory t;
  t.times = {0.5};
  t.states = {column({1.25, -2})};
  std::ostringstream os;
  write_trajectory_csv(os, t);
  CHECK(os.str() == "t,node,dim,value\n0.5,0,0,1.25\n0.5,1,0,-2\n");
}
