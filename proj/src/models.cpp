#include "ndcn/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ndcn/errors.hpp"
#include "ndcn/rng.hpp"

namespace ndcn {
namespace {

constexpr const char* kVariantNames[] = {"ndcn",    "no_encode", "no_graph", "no_control",
                                         "rnn_gnn", "gru_gnn",   "lstm_gnn", "ndcn_classify"};

// Dense layer x W + b.
DiffMatrix affine(const DiffMatrix& x, const DiffMatrix& w, const DiffMatrix& b) {
  return ad::add_row_bias(ad::matmul(x, w), b);
}

// x W_i* + b_i* + h W_h* + b_h* for one gate.
DiffMatrix gate_input(const BoundParams& p, const std::string& gate, const DiffMatrix& x,
                      const DiffMatrix& h) {
  return ad::add(affine(x, p["W_i" + gate], p["b_i" + gate]),
                 affine(h, p["W_h" + gate], p["b_h" + gate]));
}

const char* gates_of(Variant v) {
  switch (v) {
    case Variant::rnn_gnn:
      return "h";
    case Variant::gru_gnn:
      return "rzn";
    case Variant::lstm_gnn:
      return "ifgo";
    default:
      return "";
  }
}

}  // namespace

Variant parse_variant(const std::string& name) {
  for (int i = 0; i < 8; ++i) {
    if (name == kVariantNames[i]) return static_cast<Variant>(i);
  }
  throw InvalidArgument("unknown model variant: " + name);
}

std::string to_string(Variant v) { return kVariantNames[static_cast<int>(v)]; }

bool is_temporal(Variant v) {
  return v == Variant::rnn_gnn || v == Variant::gru_gnn || v == Variant::lstm_gnn;
}

bool is_continuous(Variant v) {
  return v == Variant::ndcn || v == Variant::no_encode || v == Variant::no_graph ||
         v == Variant::no_control;
}

void ModelSpec::validate() const {
  if (d_in < 1 || d_hidden < 1 || d_out < 1 || d_gcn < 1) {
    throw InvalidArgument("model dimensions must be positive");
  }
  if (variant == Variant::ndcn_classify) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  } else if (d_out != d_in) {
    throw InvalidArgument("regression models need d_out == d_in");
  }
  if (!(terminal_time > 0.0)) throw InvalidArgument("terminal time must be positive");
  if (!(flow_init_gain > 0.0)) throw InvalidArgument("flow_init_gain must be positive");
  solver.validate();
}

void ModelParams::add(std::string name, Matrix value) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ModelParams::contains(const std::string& name) const {
  for (const auto& [n, m] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const Matrix& ModelParams::at(const std::string& name) const {
  for (const auto& [n, m] : entries_) {
    if (n == name) return m;
  }
  throw InvalidArgument("no parameter named " + name);
}

Matrix& ModelParams::at(const std::string& name) {
  return const_cast<Matrix&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, m] : entries_) total += m.size();
  return total;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& [na, ma] = a.entries_[i];
    const auto& [nb, mb] = b.entries_[i];
    if (na != nb || ma.rows() != mb.rows() || ma.cols() != mb.cols() || ma != mb) return false;
  }
  return true;
}

std::vector<ParamShape> param_shapes(const ModelSpec& spec) {
  const int d = spec.d_in, h = spec.d_hidden;
  switch (spec.variant) {
    case Variant::ndcn:
    case Variant::no_graph:
      return {{"W_e", d, h, false}, {"b_e", 1, h, true}, {"W_0", h, h, false},
              {"b_0", 1, h, true},  {"W", h, h, false},  {"b", 1, h, true},
              {"W_d", h, d, false}, {"b_d", 1, d, true}};
    case Variant::no_control:
      return {{"W_e", d, h, false}, {"b_e", 1, h, true}, {"W_0", h, h, false},
              {"b_0", 1, h, true},  {"W_d", h, d, false}, {"b_d", 1, d, true}};
    case Variant::no_encode:
      return {{"W", d, d, false}, {"b", 1, d, true}};
    case Variant::rnn_gnn:
    case Variant::gru_gnn:
    case Variant::lstm_gnn: {
      const int g = spec.d_gcn;
      std::vector<ParamShape> s = {{"W_e", d, g, false}, {"b_e", 1, g, true}};
      for (const char* c = gates_of(spec.variant); *c; ++c) {
        const std::string gate(1, *c);
        s.push_back({"W_i" + gate, g, h, false});
        s.push_back({"b_i" + gate, 1, h, true});
        s.push_back({"W_h" + gate, h, h, false});
        s.push_back({"b_h" + gate, 1, h, true});
      }
      s.push_back({"W_d", h, d, false});
      s.push_back({"b_d", 1, d, true});
      return s;
    }
    case Variant::ndcn_classify:
      return {{"W_e", d, h, false},
              {"b_e", 1, h, true},
              {"W_d", h, spec.d_out, false},
              {"b_d", 1, spec.d_out, true}};
  }
  return {};
}

std::size_t param_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& s : param_shapes(spec)) total += static_cast<std::size_t>(s.rows) * s.cols;
  return total;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelParams p;
  for (const auto& s : param_shapes(spec)) {
    Matrix m = Matrix::Zero(s.rows, s.cols);
    if (!s.is_bias) {
      double limit = std::sqrt(6.0 / (s.rows + s.cols));
      if (s.name == "W" && is_continuous(spec.variant)) limit *= spec.flow_init_gain;
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-limit, limit);
      }
    }
    p.add(s.name, std::move(m));
  }
  return p;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool trainable) {
  for (const auto& [name, value] : params.entries()) {
    index_[name] = static_cast<int>(leaves_.size());
    leaves_.push_back(trainable ? tape.parameter(value) : tape.constant(value));
  }
}

const DiffMatrix& BoundParams::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("model has no parameter " + name);
  return leaves_[it->second];
}

DiffOp model_operator(const ModelSpec& spec, const Graph& g) {
  if (is_temporal(spec.variant)) return tunable_diffusion(g, 0.5);
  if (spec.variant == Variant::ndcn_classify) return tunable_diffusion(g, spec.alpha);
  return normalized_laplacian(g);
}

TrajectoryOf<DiffMatrix> ndcn_forward(const ModelSpec& spec, const BoundParams& p,
                                      const DiffOp& phi, const Matrix& x0,
                                      std::span<const double> query_times) {
  if (!is_continuous(spec.variant)) {
    throw InvalidArgument("ndcn_forward does not run variant " + to_string(spec.variant));
  }
  if (x0.cols() != spec.d_in) throw InvalidArgument("x0 width differs from d_in");
  if (x0.rows() != phi.size()) throw InvalidArgument("x0 rows differ from operator size");
  for (double t : query_times) {
    if (t > spec.terminal_time) throw InvalidArgument("query time beyond terminal time");
  }
  Tape& tape = *p.leaves().front().tape();
  const DiffMatrix x = tape.constant(x0);
  const Variant v = spec.variant;
  const bool encoded = v != Variant::no_encode;

  DiffMatrix h0 = encoded ? affine(ad::tanh(affine(x, p["W_e"], p["b_e"])), p["W_0"], p["b_0"])
                          : x;

  auto field = [&](double, const DiffMatrix& h) {
    switch (v) {
      case Variant::no_graph:
        return ad::relu(affine(h, p["W"], p["b"]));
      case Variant::no_control:
        return ad::relu(ad::sparse_apply(phi, h));
      default:
        return ad::relu(affine(ad::sparse_apply(phi, h), p["W"], p["b"]));
    }
  };
  auto hidden = solve(field, h0, query_times, spec.solver);
  if (encoded) {
    for (auto& s : hidden.states) s = affine(s, p["W_d"], p["b_d"]);
  }
  return hidden;
}

RecurrentState initial_recurrent_state(Tape& tape, const ModelSpec& spec, int n) {
  RecurrentState s;
  s.h = tape.constant(Matrix::Zero(n, spec.d_hidden));
  if (spec.variant == Variant::lstm_gnn) s.c = tape.constant(Matrix::Zero(n, spec.d_hidden));
  return s;
}

DiffMatrix temporal_step(const ModelSpec& spec, const BoundParams& p, const DiffOp& phi,
                         const DiffMatrix& x, RecurrentState& state) {
  const DiffMatrix xt = ad::relu(affine(ad::sparse_apply(phi, x), p["W_e"], p["b_e"]));
  const DiffMatrix& h = state.h;
  switch (spec.variant) {
    case Variant::rnn_gnn:
      state.h = ad::tanh(gate_input(p, "h", xt, h));
      break;
    case Variant::gru_gnn: {
      const DiffMatrix r = ad::sigmoid(gate_input(p, "r", xt, h));
      const DiffMatrix z = ad::sigmoid(gate_input(p, "z", xt, h));
      const DiffMatrix n = ad::tanh(
          ad::add(affine(xt, p["W_in"], p["b_in"]), ad::mul(r, affine(h, p["W_hn"], p["b_hn"]))));
      // (1 - z) n + z h
      state.h = ad::add(n, ad::mul(z, ad::sub(h, n)));
      break;
    }
    case Variant::lstm_gnn: {
      const DiffMatrix i = ad::sigmoid(gate_input(p, "i", xt, h));
      const DiffMatrix f = ad::sigmoid(gate_input(p, "f", xt, h));
      const DiffMatrix g = ad::tanh(gate_input(p, "g", xt, h));
      const DiffMatrix o = ad::sigmoid(gate_input(p, "o", xt, h));
      state.c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
      state.h = ad::mul(o, ad::tanh(state.c));
      break;
    }
    default:
      throw InvalidArgument("temporal_step does not run variant " + to_string(spec.variant));
  }
  return affine(state.h, p["W_d"], p["b_d"]);
}

std::vector<DiffMatrix> temporal_forward(const ModelSpec& spec, const BoundParams& p,
                                         const DiffOp& phi, std::span<const Matrix> x_seq) {
  if (x_seq.empty()) throw InvalidArgument("empty input sequence");
  Tape& tape = *p.leaves().front().tape();
  const auto rows = x_seq.front().rows();
  const auto cols = x_seq.front().cols();
  RecurrentState state = initial_recurrent_state(tape, spec, static_cast<int>(rows));
  std::vector<DiffMatrix> out;
  out.reserve(x_seq.size());
  for (const Matrix& x : x_seq) {
    if (x.rows() != rows || x.cols() != cols) throw InvalidArgument("sequence shapes differ");
    out.push_back(temporal_step(spec, p, phi, tape.constant(x), state));
  }
  return out;
}

DiffMatrix classify_forward(const ModelSpec& spec, const BoundParams& p, const DiffOp& phi,
                            const Matrix& features) {
  if (spec.variant != Variant::ndcn_classify) {
    throw InvalidArgument("classify_forward needs the ndcn_classify variant");
  }
  if (features.rows() != phi.size() || features.cols() != spec.d_in) {
    throw InvalidArgument("feature matrix shape does not match the model");
  }
  Tape& tape = *p.leaves().front().tape();
  const DiffMatrix h0 = ad::tanh(affine(tape.constant(features), p["W_e"], p["b_e"]));
  constexpr int kTicks = 16;
  std::vector<double> ticks(kTicks);
  for (int i = 0; i < kTicks; ++i) ticks[i] = spec.terminal_time * i / (kTicks - 1);
  ticks.back() = spec.terminal_time;
  auto field = [&](double, const DiffMatrix& h) { return ad::relu(ad::sparse_apply(phi, h)); };
  const auto flow = solve(field, h0, std::span<const double>(ticks), spec.solver);
  return affine(flow.states.back(), p["W_d"], p["b_d"]);
}

void write_params(std::ostream& os, const ModelParams& params) {
  static_assert(std::endian::native == std::endian::little, "payload is little-endian");
  os << "NDCN-PARAMS 1\n" << params.entries().size() << '\n';
  for (const auto& [name, m] : params.entries()) {
    os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  }
  for (const auto& [name, m] : params.entries()) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double v = m(i, j);
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
}

ModelParams read_params(std::istream& is) {
  std::string magic, version;
  if (!(is >> magic >> version) || magic != "NDCN-PARAMS" || version != "1") {
    throw FormatError("not a parameter checkpoint");
  }
  std::size_t count = 0;
  if (!(is >> count)) throw FormatError("checkpoint: missing entry count");
  std::vector<std::tuple<std::string, long, long>> header;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    long r, c;
    if (!(is >> name >> r >> c) || r < 0 || c < 0) throw FormatError("checkpoint: bad header");
    header.emplace_back(name, r, c);
  }
  is.get();  // newline ending the header
  ModelParams p;
  for (const auto& [name, r, c] : header) {
    Matrix m(r, c);
    for (long i = 0; i < r; ++i) {
      for (long j = 0; j < c; ++j) {
        double v;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
          throw FormatError("checkpoint: truncated payload");
        }
        m(i, j) = v;
      }
    }
    p.add(name, std::move(m));
  }
  return p;
}

void save_params(const std::string& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NotFound("cannot open for writing: " + path);
  write_params(os, params);
}

ModelParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFound("no such file: " + path);
  ModelParams p = read_params(is);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return p;
}

}  // namespace ndcn
