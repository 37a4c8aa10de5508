#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ndcn/errors.hpp"

namespace ndcn {

using Matrix = Eigen::MatrixXd;

enum class Method { euler, rk4, dopri5 };

Method parse_method(const std::string& name);
std::string to_string(Method m);

struct SolverSpec {
  Method method = Method::dopri5;
  double step = 0.1;  // fixed-step methods
  double rtol = 1e-7;  // dopri5
  double atol = 1e-9;  // dopri5
  long max_steps = 1'000'000;

  void validate() const;
};

/// Sorted time stamps paired with states.
template <class State>
struct TrajectoryOf {
  std::vector<double> times;
  std::vector<State> states;
};

using Trajectory = TrajectoryOf<Matrix>;

/// Arithmetic the solvers need from a state type. Specializations provide
///   static State combine(const State& base, std::span<const double> coeffs,
///                        std::span<const State* const> terms);
///     -> base + sum_i coeffs[i] * *terms[i]
///   static const Matrix& value(const State&);
template <class State>
struct StateAlgebra;

template <>
struct StateAlgebra<Matrix> {
  static Matrix combine(const Matrix& base, std::span<const double> coeffs,
                        std::span<const Matrix* const> terms) {
    Matrix out = base;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      if (coeffs[i] != 0.0) out.noalias() += coeffs[i] * *terms[i];
    }
    return out;
  }
  static const Matrix& value(const Matrix& x) { return x; }
};

namespace detail {

void check_query_times(std::span<const double> times);

// Dormand-Prince 5(4) tableau.
struct Dopri5 {
  static constexpr double c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double a[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  // Fifth-order weights (equal to the last row of a; FSAL).
  static constexpr double b[7] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192,
                                  -2187.0 / 6784, 11.0 / 84, 0.0};
  // Difference between fifth- and fourth-order weights.
  static constexpr double e[7] = {71.0 / 57600,  0.0,         -71.0 / 16695, 71.0 / 1920,
                                  -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
  // Dense-output coefficients (Hairer & Wanner, contd5).
  static constexpr double d[7] = {-12715105075.0 / 11282082432.0, 0.0,
                                  87487479700.0 / 32700410799.0,  -10690763975.0 / 1880347072.0,
                                  701980252875.0 / 199316789632.0, -1453857185.0 / 822651844.0,
                                  69997945.0 / 29380423.0};

  /// Weights w_i(theta) with y(t + theta h) = y0 + h * sum_i w_i k_i.
  static std::array<double, 7> dense_weights(double theta) {
    std::array<double, 7> w{};
    const double t1 = theta * (1.0 - theta);
    const double t2 = theta * t1;
    const double t3 = t1 * t1;
    for (int i = 0; i < 7; ++i) {
      const double delta1 = i == 0 ? 1.0 : 0.0;
      const double delta7 = i == 6 ? 1.0 : 0.0;
      w[i] = theta * b[i] + t1 * (delta1 - b[i]) + t2 * (2.0 * b[i] - delta1 - delta7) +
             t3 * d[i];
    }
    return w;
  }
};

/// RMS over entries of err / (atol + rtol * max(|x|, |x_new|)).
double error_norm(const Matrix& err, const Matrix& x, const Matrix& x_new, double rtol,
                  double atol);

}  // namespace detail

/// Integrates x' = rhs(t, x) from x0 at t = 0 and reports states at exactly the
/// requested times (which must be strictly increasing and non-negative).
template <class State, class Rhs>
TrajectoryOf<State> solve(Rhs&& rhs, const State& x0, std::span<const double> query_times,
                          const SolverSpec& spec) {
  using Alg = StateAlgebra<State>;
  spec.validate();
  detail::check_query_times(query_times);

  TrajectoryOf<State> out;
  out.times.assign(query_times.begin(), query_times.end());
  out.states.reserve(query_times.size());
  if (query_times.empty()) return out;

  double t = 0.0;
  State x = x0;
  long steps = 0;
  const double t_end = query_times.back();

  if (spec.method == Method::euler || spec.method == Method::rk4) {
    for (double tq : query_times) {
      while (t < tq) {
        double h = spec.step;
        bool land = (tq - t) <= h * (1.0 + 1e-10);
        if (land) h = tq - t;
        if (++steps > spec.max_steps) throw StiffnessError("max_steps exceeded", t);
        if (spec.method == Method::euler) {
          const State k1 = rhs(t, x);
          const double c[] = {h};
          const State* k[] = {&k1};
          x = Alg::combine(x, c, k);
        } else {
          const State k1 = rhs(t, x);
          const double c1[] = {h / 2};
          const State* p1[] = {&k1};
          const State k2 = rhs(t + h / 2, Alg::combine(x, c1, p1));
          const State* p2[] = {&k2};
          const State k3 = rhs(t + h / 2, Alg::combine(x, c1, p2));
          const double c3[] = {h};
          const State* p3[] = {&k3};
          const State k4 = rhs(t + h, Alg::combine(x, c3, p3));
          const double c4[] = {h / 6, h / 3, h / 3, h / 6};
          const State* p4[] = {&k1, &k2, &k3, &k4};
          x = Alg::combine(x, c4, p4);
        }
        t = land ? tq : t + h;
      }
      out.states.push_back(x);
    }
    return out;
  }

  // Adaptive Dormand-Prince 5(4).
  using T = detail::Dopri5;
  std::size_t next = 0;
  while (next < query_times.size() && query_times[next] == 0.0) {
    out.states.push_back(x0);
    ++next;
  }
  if (next == query_times.size()) return out;

  State k[7] = {rhs(0.0, x), x, x, x, x, x, x};
  const double underflow = 1e-14 * t_end;

  // Initial step (Hairer, Norsett & Wanner, II.4).
  double h;
  {
    const Matrix& xv = Alg::value(x);
    const Matrix& fv = Alg::value(k[0]);
    const double d0 = detail::error_norm(xv, xv, xv, spec.rtol, spec.atol);
    const double d1 = detail::error_norm(fv, xv, xv, spec.rtol, spec.atol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end);
    const double c[] = {h0};
    const State* p[] = {&k[0]};
    const Matrix f1 = Alg::value(rhs(h0, Alg::combine(x, c, p)));
    const double d2 = detail::error_norm(f1 - fv, xv, xv, spec.rtol, spec.atol) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }

  while (next < query_times.size()) {
    if (++steps > spec.max_steps) throw StiffnessError("max_steps exceeded", t);
    if (h < underflow) throw StiffnessError("step size underflow", t);
    bool last = false;
    if (t + h >= t_end) {
      h = t_end - t;
      last = true;
    }
    double coeffs[6];
    const State* terms[6];
    for (int j = 0; j < 6; ++j) terms[j] = &k[j];
    for (int s = 1; s < 6; ++s) {
      for (int j = 0; j < s; ++j) coeffs[j] = h * T::a[s][j];
      k[s] = rhs(t + T::c[s] * h, Alg::combine(x, std::span<const double>(coeffs, s),
                                               std::span<const State* const>(terms, s)));
    }
    for (int j = 0; j < 6; ++j) coeffs[j] = h * T::a[6][j];
    State x_new = Alg::combine(x, coeffs, terms);
    k[6] = rhs(t + h, x_new);

    // Error control runs on plain values and never enters the tape.
    Matrix err = Matrix::Zero(Alg::value(x).rows(), Alg::value(x).cols());
    for (int j = 0; j < 7; ++j) {
      if (T::e[j] != 0.0) err.noalias() += (h * T::e[j]) * Alg::value(k[j]);
    }
    const double en =
        detail::error_norm(err, Alg::value(x), Alg::value(x_new), spec.rtol, spec.atol);
    double factor;
    if (!std::isfinite(en)) {
      factor = 0.2;
    } else if (en == 0.0) {
      factor = 5.0;
    } else {
      factor = std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
    }
    if (!(en <= 1.0)) {
      h *= std::min(1.0, factor);
      continue;
    }

    const double t_new = last ? t_end : t + h;
    while (next < query_times.size() && query_times[next] <= t_new) {
      const double tq = query_times[next];
      if (tq == t_new) {
        out.states.push_back(x_new);
      } else {
        const auto w = T::dense_weights((tq - t) / h);
        double wc[7];
        const State* kp[7];
        for (int j = 0; j < 7; ++j) {
          wc[j] = h * w[j];
          kp[j] = &k[j];
        }
        out.states.push_back(Alg::combine(x, wc, kp));
      }
      ++next;
    }
    x = std::move(x_new);
    k[0] = k[6];
    t = t_new;
    h *= factor;
  }
  return out;
}

/// Closed-form scalar test problem x' = f(t, x), x(0) = x0.
struct ScalarProblem {
  std::function<double(double, double)> rhs;
  double x0;
  std::function<double(double)> exact;
};

/// x' = -x, x(0) = 1.
ScalarProblem exponential_decay();

/// Absolute error at t = 1. For fixed-step methods `resolution` is the step,
/// for dopri5 it is rtol (atol = rtol * 1e-3).
double global_error(Method method, const ScalarProblem& problem, double resolution);

/// error(resolution) / error(resolution / 2) at t = 1.
double order_check(Method method, const ScalarProblem& problem, double resolution);

}  // namespace ndcn
