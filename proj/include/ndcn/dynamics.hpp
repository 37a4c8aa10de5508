#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ndcn/graph.hpp"
#include "ndcn/odeint.hpp"

namespace ndcn {

enum class Law { heat, mutualistic, gene };

Law parse_law(const std::string& name);
std::string to_string(Law law);

struct HeatConstants {
  double k = 1.0;
};

/// Migration b, capacity k, Allee threshold c, interaction saturation d, e, h.
struct MutualisticConstants {
  double b = 0.1;
  double k = 5.0;
  double c = 1.0;
  double d = 5.0;
  double e = 0.9;
  double h = 0.1;
};

/// Degradation rate b with exponent f, Hill coefficient h.
struct GeneConstants {
  double b = 1.0;
  double f = 1.0;
  double h = 2.0;
};

struct DynamicsSpec {
  Law law = Law::heat;
  HeatConstants heat;
  MutualisticConstants mutualistic;
  GeneConstants gene;

  void validate() const;
};

/// -k (D - A) x.
Matrix heat_rhs(const Graph& g, const Matrix& x, double k);
Matrix mutualistic_rhs(const Graph& g, const Matrix& x, const MutualisticConstants& c);
Matrix gene_rhs(const Graph& g, const Matrix& x, const GeneConstants& c);
Matrix dynamics_rhs(const Graph& g, const Matrix& x, const DynamicsSpec& spec);

/// N^2 x 1 state laid out on an N x N grid (row-major) with three constant
/// blocks (25, 20, 17) placed at fixed fractions of N.
Matrix default_initial_state(int side);

/// Ground truth from x0 at t = 0 with adaptive DOPRI5.
Trajectory simulate_truth(const Graph& g, const DynamicsSpec& spec, const Matrix& x0,
                          const std::vector<double>& times, double rtol = 1e-7,
                          double atol = 1e-9);

enum class Sampling { irregular, regular };

/// irregular: `count` distinct sorted uniform draws in (0, T].
/// regular: {T/count, 2T/count, ..., T}.
std::vector<double> sample_times(Sampling mode, int count, double terminal_time,
                                 std::uint64_t seed);

/// Writes "t,node,dim,value" rows.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace ndcn
