#include "ndcn/odeint.hpp"

#include <cmath>

namespace ndcn {

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw InvalidArgument("unknown solver method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::euler:
      return "euler";
    case Method::rk4:
      return "rk4";
    case Method::dopri5:
      return "dopri5";
  }
  return "?";
}

void SolverSpec::validate() const {
  if (max_steps < 1) throw InvalidArgument("max_steps must be >= 1");
  if (method == Method::dopri5) {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidArgument("rtol and atol must be positive");
  } else if (!(step > 0.0)) {
    throw InvalidArgument("fixed step must be positive");
  }
}

namespace detail {

void check_query_times(std::span<const double> times) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0) {
      throw InvalidArgument("query times must be finite and non-negative");
    }
    if (i > 0 && !(times[i] > times[i - 1])) {
      throw InvalidArgument("query times must be strictly increasing");
    }
  }
}

double error_norm(const Matrix& err, const Matrix& x, const Matrix& x_new, double rtol,
                  double atol) {
  if (err.size() == 0) return 0.0;
  const auto scale = (atol + rtol * x.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array());
  return std::sqrt((err.array() / scale).square().mean());
}

}  // namespace detail

ScalarProblem exponential_decay() {
  return {[](double, double x) { return -x; }, 1.0, [](double t) { return std::exp(-t); }};
}

double global_error(Method method, const ScalarProblem& problem, double resolution) {
  SolverSpec spec;
  spec.method = method;
  if (method == Method::dopri5) {
    spec.rtol = resolution;
    spec.atol = resolution * 1e-3;
  } else {
    spec.step = resolution;
  }
  Matrix x0(1, 1);
  x0(0, 0) = problem.x0;
  const double t_end[] = {1.0};
  auto rhs = [&](double t, const Matrix& x) {
    Matrix dx(1, 1);
    dx(0, 0) = problem.rhs(t, x(0, 0));
    return dx;
  };
  const auto traj = solve(rhs, x0, std::span<const double>(t_end), spec);
  return std::abs(traj.states.back()(0, 0) - problem.exact(1.0));
}

double order_check(Method method, const ScalarProblem& problem, double resolution) {
  return global_error(method, problem, resolution) /
         global_error(method, problem, resolution / 2.0);
}

}  // namespace ndcn
