#include "ndcn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>

#include "ndcn/errors.hpp"
#include "ndcn/rng.hpp"

namespace ndcn {
namespace {

bool is_integer(double v) { return std::floor(v) == v; }

double hill_power(double x, double exponent) {
  if (x < 0.0 && !is_integer(exponent)) {
    throw DegenerateInput("negative state under fractional exponent");
  }
  return std::pow(x, exponent);
}

void check_shape(const Graph& g, const Matrix& x) {
  if (x.rows() != g.num_nodes()) {
    throw InvalidArgument("state has " + std::to_string(x.rows()) + " rows for " +
                          std::to_string(g.num_nodes()) + " nodes");
  }
}

}  // namespace

Law parse_law(const std::string& name) {
  if (name == "heat") return Law::heat;
  if (name == "mutualistic") return Law::mutualistic;
  if (name == "gene") return Law::gene;
  throw InvalidArgument("unknown dynamics law: " + name);
}

std::string to_string(Law law) {
  switch (law) {
    case Law::heat:
      return "heat";
    case Law::mutualistic:
      return "mutualistic";
    case Law::gene:
      return "gene";
  }
  return "?";
}

void DynamicsSpec::validate() const {
  const double all[] = {heat.k,        mutualistic.b, mutualistic.k, mutualistic.c,
                        mutualistic.d, mutualistic.e, mutualistic.h, gene.b,
                        gene.f,        gene.h};
  for (double v : all) {
    if (!std::isfinite(v)) throw InvalidArgument("dynamics constants must be finite");
  }
  if (gene.f != 1.0 && gene.f != 2.0) throw InvalidArgument("gene exponent f must be 1 or 2");
}

Matrix heat_rhs(const Graph& g, const Matrix& x, double k) {
  check_shape(g, x);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int i = 0; i < g.num_nodes(); ++i) {
      auto [b, e] = g.neighbors(i);
      double acc = 0.0;
      for (const int* p = b; p != e; ++p) acc += x(i, c) - x(*p, c);
      out(i, c) = -k * acc;
    }
  }
  return out;
}

Matrix mutualistic_rhs(const Graph& g, const Matrix& x, const MutualisticConstants& k) {
  check_shape(g, x);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int i = 0; i < g.num_nodes(); ++i) {
      const double xi = x(i, c);
      double acc = k.b + xi * (1.0 - xi / k.k) * (xi / k.c - 1.0);
      auto [b, e] = g.neighbors(i);
      for (const int* p = b; p != e; ++p) {
        const double xj = x(*p, c);
        const double denom = k.d + k.e * xi + k.h * xj;
        if (denom == 0.0) throw DegenerateInput("zero mutualistic denominator");
        acc += xi * xj / denom;
      }
      out(i, c) = acc;
    }
  }
  return out;
}

Matrix gene_rhs(const Graph& g, const Matrix& x, const GeneConstants& k) {
  check_shape(g, x);
  Matrix activation(x.rows(), x.cols());
  for (Eigen::Index idx = 0; idx < x.size(); ++idx) {
    const double p = hill_power(x(idx), k.h);
    activation(idx) = p / (p + 1.0);
  }
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int i = 0; i < g.num_nodes(); ++i) {
      double acc = -k.b * hill_power(x(i, c), k.f);
      auto [b, e] = g.neighbors(i);
      for (const int* p = b; p != e; ++p) acc += activation(*p, c);
      out(i, c) = acc;
    }
  }
  return out;
}

Matrix dynamics_rhs(const Graph& g, const Matrix& x, const DynamicsSpec& spec) {
  switch (spec.law) {
    case Law::heat:
      return heat_rhs(g, x, spec.heat.k);
    case Law::mutualistic:
      return mutualistic_rhs(g, x, spec.mutualistic);
    case Law::gene:
      return gene_rhs(g, x, spec.gene);
  }
  throw InvalidArgument("unknown law");
}

Matrix default_initial_state(int side) {
  if (side < 1) throw InvalidArgument("grid side must be positive");
  Matrix grid = Matrix::Zero(side, side);
  auto at = [side](double f) { return static_cast<int>(f * side); };
  auto fill = [&](int r0, int r1, int c0, int c1, double v) {
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) grid(r, c) = v;
    }
  };
  fill(at(0.05), at(0.25), at(0.05), at(0.25), 25.0);
  fill(at(0.45), at(0.75), at(0.45), at(0.75), 20.0);
  fill(at(0.05), at(0.25), at(0.35), at(0.65), 17.0);
  Matrix x(side * side, 1);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) x(r * side + c, 0) = grid(r, c);
  }
  return x;
}

Trajectory simulate_truth(const Graph& g, const DynamicsSpec& spec, const Matrix& x0,
                          const std::vector<double>& times, double rtol, double atol) {
  spec.validate();
  check_shape(g, x0);
  if (!times.empty() && times.front() < 0.0) throw InvalidArgument("times must be >= 0");
  SolverSpec solver;
  solver.method = Method::dopri5;
  solver.rtol = rtol;
  solver.atol = atol;
  auto rhs = [&](double, const Matrix& x) { return dynamics_rhs(g, x, spec); };
  return solve(rhs, x0, std::span<const double>(times), solver);
}

std::vector<double> sample_times(Sampling mode, int count, double terminal_time,
                                 std::uint64_t seed) {
  if (count < 2) throw InvalidArgument("need at least 2 sample times");
  if (!(terminal_time > 0.0)) throw InvalidArgument("terminal time must be positive");
  std::vector<double> out;
  if (mode == Sampling::regular) {
    out.reserve(count);
    for (int i = 1; i <= count; ++i) out.push_back(terminal_time * i / count);
    return out;
  }
  Rng rng(seed);
  std::set<double> draws;
  while (static_cast<int>(draws.size()) < count) {
    // 1 - U maps [0, 1) onto (0, 1].
    draws.insert(terminal_time * (1.0 - rng.uniform()));
  }
  return {draws.begin(), draws.end()};
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,node,dim,value\n";
  char buf[128];
  for (std::size_t s = 0; s < traj.times.size(); ++s) {
    const Matrix& x = traj.states[s];
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index d = 0; d < x.cols(); ++d) {
        std::snprintf(buf, sizeof buf, "%.17g,%ld,%ld,%.17g\n", traj.times[s],
                      static_cast<long>(i), static_cast<long>(d), x(i, d));
        os << buf;
      }
    }
  }
}

}  // namespace ndcn
