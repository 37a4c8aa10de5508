#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ndcn/errors.hpp"
#include "ndcn/graph.hpp"
#include "ndcn/models.hpp"
#include "test_util.hpp"

using namespace ndcn;
using testutil::random_matrix;

namespace {

ModelSpec spec_of(Variant v, int d = 1, int hidden = 4) {
  ModelSpec s;
  s.variant = v;
  s.d_in = s.d_out = d;
  s.d_hidden = hidden;
  s.d_gcn = 3;
  s.terminal_time = 1.0;
  s.solver.method = Method::rk4;
  s.solver.step = 0.1;
  return s;
}

// Perturbs every bias so zero-initialized biases also get exercised.
ModelParams random_params(const ModelSpec& s, std::uint64_t seed) {
  ModelParams p = init_params(s, seed);
  Rng rng(seed + 100);
  for (auto& [name, m] : p.entries()) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) += rng.uniform(-0.3, 0.3);
  }
  return p;
}

// Max relative (norm-wise, per parameter matrix) disagreement between tape
// gradients and central differences of `loss(params)`.
double model_grad_check(const ModelParams& params,
                        const std::function<DiffMatrix(Tape&, const BoundParams&)>& loss,
                        double h = 1e-5) {
  Tape tape;
  BoundParams bound(tape, params, true);
  const Gradients g = tape.backward(loss(tape, bound));
  auto value_at = [&](const ModelParams& p) {
    Tape t;
    BoundParams b(t, p, false);
    return loss(t, b).value()(0, 0);
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.entries().size(); ++k) {
    const Matrix ad_grad = g.of(bound.leaves()[k]);
    Matrix fd(ad_grad.rows(), ad_grad.cols());
    for (Eigen::Index e = 0; e < fd.size(); ++e) {
      ModelParams plus = params, minus = params;
      plus.entries()[k].second(e) += h;
      minus.entries()[k].second(e) -= h;
      fd(e) = (value_at(plus) - value_at(minus)) / (2 * h);
    }
    const double scale = std::max({ad_grad.norm(), fd.norm(), 1e-9});
    worst = std::max(worst, (ad_grad - fd).norm() / scale);
  }
  return worst;
}

DiffMatrix weighted(Tape& t, const DiffMatrix& y, std::uint64_t seed) {
  return ad::sum(ad::mul(y, t.constant(random_matrix(static_cast<int>(y.rows()),
                                                     static_cast<int>(y.cols()), seed))));
}

}  // namespace

TEST_CASE("parameter counts") {
  ModelSpec s;
  s.d_in = s.d_out = 1;
  s.d_hidden = 20;
  CHECK(param_count(s) == 901);
  s.variant = Variant::no_control;
  CHECK(param_count(s) == 481);
  ModelSpec c;
  c.variant = Variant::ndcn_classify;
  c.d_in = 1433;
  c.d_hidden = 256;
  c.d_out = 7;
  CHECK(param_count(c) == static_cast<std::size_t>(1433 * 256 + 256 + 256 * 7 + 7));
  CHECK(init_params(s, 3).scalar_count() == 481);
}

TEST_CASE("init_params") {
  ModelSpec s;
  s.d_hidden = 20;
  const ModelParams a = init_params(s, 5);
  CHECK(a == init_params(s, 5));
  CHECK_FALSE(a == init_params(s, 6));
  const double limit = std::sqrt(6.0 / 40.0);
  CHECK(a.at("W").cwiseAbs().maxCoeff() <= limit);
  CHECK(a.at("b").isZero());
  CHECK(a.at("b_e").rows() == 1);

  s.variant = Variant::no_control;
  const ModelParams nc = init_params(s, 5);
  CHECK_FALSE(nc.contains("W"));
  CHECK_FALSE(nc.contains("b"));
}

TEST_CASE("ndcn_forward zero-length and zero-parameter cases") {
  const Graph g = gen_erdos_renyi(10, 0.4, 1);
  const ModelSpec s = spec_of(Variant::ndcn);
  const DiffOp phi = model_operator(s, g);
  const Matrix x0 = random_matrix(10, 1, 2);
  const ModelParams p = random_params(s, 3);
  Tape t;
  BoundParams b(t, p, false);
  const std::vector<double> zero{0.0};
  const auto out = ndcn_forward(s, b, phi, x0, zero);
  Matrix h0 = (x0 * p.at("W_e")).rowwise() + p.at("b_e").row(0);
  h0 = h0.array().tanh().matrix();
  Matrix enc = (h0 * p.at("W_0")).rowwise() + p.at("b_0").row(0);
  Matrix dec = (enc * p.at("W_d")).rowwise() + p.at("b_d").row(0);
  CHECK((out.states[0].value() - dec).cwiseAbs().maxCoeff() <= 1e-14);

  ModelParams zeros = p;
  for (auto& [n, m] : zeros.entries()) m.setZero();
  BoundParams bz(t, zeros, false);
  const std::vector<double> times{0.0, 0.3, 1.0};
  const auto flat = ndcn_forward(s, bz, phi, x0, times);
  CHECK(flat.states[1].value() == flat.states[0].value());
  CHECK(flat.states[2].value() == flat.states[0].value());

  const std::vector<double> late{1.5};
  CHECK_THROWS_AS(ndcn_forward(s, b, phi, x0, late), InvalidArgument);
}

TEST_CASE("Euler refinement on a fixed vector field converges at first order") {
  const Graph g = gen_erdos_renyi(10, 0.4, 4);
  ModelSpec s = spec_of(Variant::ndcn);
  s.solver.method = Method::euler;
  const DiffOp phi = model_operator(s, g);
  const Matrix x0 = random_matrix(10, 1, 5, 0.0, 2.0);
  const ModelParams p = random_params(s, 6);
  auto run = [&](double step) {
    s.solver.step = step;
    Tape t;
    BoundParams b(t, p, false);
    const std::vector<double> end{1.0};
    return Matrix(ndcn_forward(s, b, phi, x0, end).states[0].value());
  };
  const Matrix ref = run(1.0 / 4096);
  const double e1 = (run(1.0 / 16) - ref).norm();
  const double e2 = (run(1.0 / 32) - ref).norm();
  CHECK(e1 / e2 >= 1.6);
  CHECK(e1 / e2 <= 2.4);
}

TEST_CASE("ndcn_forward is permutation equivariant") {
  const Graph g = gen_barabasi_albert(12, 2, 7);
  const ModelSpec s = spec_of(Variant::ndcn);
  const ModelParams p = random_params(s, 8);
  const Matrix x0 = random_matrix(12, 1, 9);
  const std::vector<int> perm{3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6};  // node i -> perm[i]
  const Graph gp = g.relabeled(perm);
  Matrix xp(12, 1);
  for (int i = 0; i < 12; ++i) xp.row(perm[i]) = x0.row(i);
  const std::vector<double> times{0.4, 1.0};
  const DiffOp phi = model_operator(s, g), phip = model_operator(s, gp);
  Tape t;
  BoundParams b(t, p, false);
  const auto a = ndcn_forward(s, b, phi, x0, times);
  const auto c = ndcn_forward(s, b, phip, xp, times);
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (int i = 0; i < 12; ++i) {
      CHECK(std::abs(a.states[k].value()(i, 0) - c.states[k].value()(perm[i], 0)) <= 1e-10);
    }
  }
}

TEST_CASE("no_graph ignores the edges") {
  const ModelSpec s = spec_of(Variant::no_graph);
  const ModelParams p = random_params(s, 1);
  const Matrix x0 = random_matrix(10, 1, 2);
  const std::vector<double> times{0.5, 1.0};
  const DiffOp a = model_operator(s, gen_erdos_renyi(10, 0.2, 1));
  const DiffOp b = model_operator(s, gen_erdos_renyi(10, 0.7, 2));
  Tape t;
  BoundParams bp(t, p, false);
  CHECK(ndcn_forward(s, bp, a, x0, times).states[1].value() ==
        ndcn_forward(s, bp, b, x0, times).states[1].value());
}

TEST_CASE("gradients of every variant match finite differences") {
  const Graph g = gen_erdos_renyi(10, 0.4, 11);
  const Matrix x0 = random_matrix(10, 2, 12, 0.0, 2.0);
  const std::vector<double> times{0.3, 0.7};
  for (Variant v : {Variant::ndcn, Variant::no_encode, Variant::no_graph, Variant::no_control}) {
    CAPTURE(to_string(v));
    const ModelSpec s = spec_of(v, 2);
    const DiffOp phi = model_operator(s, g);
    const ModelParams p = random_params(s, 13);
    CHECK(model_grad_check(p, [&](Tape& t, const BoundParams& b) {
            const auto traj = ndcn_forward(s, b, phi, x0, times);
            return ad::add(weighted(t, traj.states[0], 1), weighted(t, traj.states[1], 2));
          }) <= 1e-4);
  }
  const std::vector<Matrix> seq{x0, random_matrix(10, 2, 14), random_matrix(10, 2, 15)};
  for (Variant v : {Variant::rnn_gnn, Variant::gru_gnn, Variant::lstm_gnn}) {
    CAPTURE(to_string(v));
    const ModelSpec s = spec_of(v, 2);
    const DiffOp phi = model_operator(s, g);
    const ModelParams p = random_params(s, 16);
    CHECK(model_grad_check(p, [&](Tape& t, const BoundParams& b) {
            const auto out = temporal_forward(s, b, phi, seq);
            return ad::add(weighted(t, out[1], 3), weighted(t, out[2], 4));
          }) <= 1e-4);
  }
  ModelSpec c;
  c.variant = Variant::ndcn_classify;
  c.d_in = 2;
  c.d_hidden = 4;
  c.d_out = 3;
  c.alpha = 0.3;
  c.terminal_time = 0.8;
  c.solver.rtol = 1e-10;
  c.solver.atol = 1e-12;
  const DiffOp phi = model_operator(c, g);
  const ModelParams p = random_params(c, 17);
  Matrix y = Matrix::Zero(10, 3);
  for (int i = 0; i < 10; ++i) y(i, i % 3) = 1.0;
  const std::vector<bool> mask{true, true, false, true, false, true, true, false, false, true};
  CHECK(model_grad_check(p, [&](Tape&, const BoundParams& b) {
          return ad::cross_entropy_masked(classify_forward(c, b, phi, x0), y, mask);
        }) <= 1e-4);
}

TEST_CASE("temporal_forward examples") {
  const Graph g = gen_erdos_renyi(10, 0.4, 1);
  const std::vector<Matrix> seq{random_matrix(10, 1, 2), random_matrix(10, 1, 3)};
  for (Variant v : {Variant::rnn_gnn, Variant::gru_gnn, Variant::lstm_gnn}) {
    const ModelSpec s = spec_of(v);
    ModelParams zeros = init_params(s, 1);
    for (auto& [n, m] : zeros.entries()) m.setZero();
    Tape t;
    BoundParams b(t, zeros, false);
    for (const DiffMatrix& y : temporal_forward(s, b, model_operator(s, g), seq)) {
      CHECK(y.value().isZero());
    }
    CHECK_THROWS_AS(temporal_forward(s, b, model_operator(s, g), std::vector<Matrix>{}),
                    InvalidArgument);
  }
}

TEST_CASE("GRU with a saturated update gate carries its state") {
  const Graph g = gen_erdos_renyi(10, 0.4, 2);
  const ModelSpec s = spec_of(Variant::gru_gnn);
  ModelParams p = random_params(s, 3);
  p.at("b_iz").setConstant(50.0);
  const DiffOp phi = model_operator(s, g);
  Tape t;
  BoundParams b(t, p, false);
  RecurrentState st = initial_recurrent_state(t, s, 10);
  st.h = t.constant(random_matrix(10, s.d_hidden, 4));
  const Matrix before = st.h.value();
  temporal_step(s, b, phi, t.constant(random_matrix(10, 1, 5)), st);
  CHECK((st.h.value() - before).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("scalar RNN-GNN matches a hand recurrence") {
  const Graph single(1, {});
  ModelSpec s = spec_of(Variant::rnn_gnn);
  s.d_gcn = 1;
  s.d_hidden = 1;
  const ModelParams p = random_params(s, 6);
  auto v = [&](const char* n) { return p.at(n)(0, 0); };
  const std::vector<Matrix> seq{Matrix::Constant(1, 1, 0.7), Matrix::Constant(1, 1, -0.4),
                                Matrix::Constant(1, 1, 1.3)};
  // Phi(0.5) on one isolated node is the 1x1 identity.
  double h = 0.0;
  std::vector<double> expect;
  for (const Matrix& x : seq) {
    const double xt = std::max(0.0, x(0, 0) * v("W_e") + v("b_e"));
    h = std::tanh(xt * v("W_ih") + v("b_ih") + h * v("W_hh") + v("b_hh"));
    expect.push_back(h * v("W_d") + v("b_d"));
  }
  Tape t;
  BoundParams b(t, p, false);
  const auto out = temporal_forward(s, b, model_operator(s, single), seq);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(out[k].value()(0, 0) - expect[k]) <= 1e-12);
}

TEST_CASE("classify_forward examples") {
  ModelSpec c;
  c.variant = Variant::ndcn_classify;
  c.d_in = 3;
  c.d_hidden = 5;
  c.d_out = 2;
  c.solver.rtol = 1e-10;
  c.solver.atol = 1e-12;
  const Graph g = gen_erdos_renyi(10, 0.4, 3);
  const Matrix x = random_matrix(10, 3, 4);
  const ModelParams p = random_params(c, 5);
  auto decode_encode = [&](const Matrix& xin, double growth) {
    Matrix h = ((xin * p.at("W_e")).rowwise() + p.at("b_e").row(0)).array().tanh().matrix();
    return Matrix((growth * h * p.at("W_d")).rowwise() + p.at("b_d").row(0));
  };
  Tape t;
  BoundParams b(t, p, false);

  c.terminal_time = 1e-9;
  const Matrix near = classify_forward(c, b, model_operator(c, g), x).value();
  CHECK((near - decode_encode(x, 1.0)).cwiseAbs().maxCoeff() <= 1e-6);

  // alpha = 1 on a single node: dh/dt = relu(h) grows nonnegative h by e^T.
  const Graph single(1, {});
  ModelSpec one = c;
  one.alpha = 1.0;
  one.terminal_time = 0.9;
  ModelParams pos = p;
  pos.at("W_e") = pos.at("W_e").cwiseAbs();
  pos.at("b_e") = pos.at("b_e").cwiseAbs();
  BoundParams bp(t, pos, false);
  const Matrix x1 = random_matrix(1, 3, 6, 0.1, 1.0);
  const Matrix grown = classify_forward(one, bp, model_operator(one, single), x1).value();
  Matrix h = ((x1 * pos.at("W_e")).rowwise() + pos.at("b_e").row(0)).array().tanh().matrix();
  const Matrix expect = (std::exp(0.9) * h * pos.at("W_d")).rowwise() + pos.at("b_d").row(0);
  CHECK((grown - expect).cwiseAbs().maxCoeff() <= 1e-7);

  c.terminal_time = 1.1;
  c.alpha = 0.4;
  const DiffOp phi = model_operator(c, g);
  CHECK(classify_forward(c, b, phi, x).value() == classify_forward(c, b, phi, x).value());
  CHECK_THROWS_AS(classify_forward(c, b, phi, random_matrix(9, 3, 1)), InvalidArgument);
}

TEST_CASE("spec validation") {
  ModelSpec s;
  s.d_hidden = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = ModelSpec{};
  s.d_out = 2;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = ModelSpec{};
  s.variant = Variant::ndcn_classify;
  s.alpha = 1.5;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  CHECK(parse_variant("lstm_gnn") == Variant::lstm_gnn);
  CHECK_THROWS_AS(parse_variant("gat"), InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
  ModelSpec s = spec_of(Variant::lstm_gnn);
  const ModelParams p = random_params(s, 21);
  std::stringstream ss;
  write_params(ss, p);
  CHECK(ss.str().rfind("NDCN-PARAMS 1\n", 0) == 0);
  CHECK(read_params(ss) == p);

  std::stringstream junk("NOT-A-CHECKPOINT");
  CHECK_THROWS_AS(read_params(junk), FormatError);
  std::stringstream cut;
  write_params(cut, p);
  std::string truncated = cut.str();
  truncated.resize(truncated.size() - 3);
  std::stringstream tr(truncated);
  CHECK_THROWS_AS(read_params(tr), FormatError);
  CHECK_THROWS_AS(load_params("/nonexistent/model.ckpt"), NotFound);

  const std::string path =
      (std::filesystem::temp_directory_path() / "ndcn_test_model.ckpt").string();
  save_params(path, p);
  CHECK(load_params(path) == p);
  {
    std::ofstream os(path, std::ios::binary | std::ios::app);
    os << 'x';
  }
  CHECK_THROWS_AS(load_params(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("flow_init_gain scales only the flow weight") {
  ModelSpec a;
  ModelSpec b = a;
  b.flow_init_gain = 0.25;
  const ModelParams pa = init_params(a, 5), pb = init_params(b, 5);
  for (const auto& [name, value] : pa.entries()) {
    const Matrix expect = name == "W" ? Matrix(0.25 * value) : value;
    CHECK((pb.at(name) - expect).cwiseAbs().maxCoeff() <= 1e-15);
  }
  b.flow_init_gain = 0.0;
  CHECK_THROWS_AS(b.validate(), InvalidArgument);
}
