#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ndcn/autodiff.hpp"
#include "ndcn/graph.hpp"
#include "ndcn/odeint.hpp"
#include "ndcn/operators.hpp"

namespace ndcn {

enum class Variant {
  ndcn,        // encoder -> relu(Phi X_h W + b) flow -> linear decoder
  no_encode,   // flow in signal space, no encoder/decoder
  no_graph,    // relu(X_h W + b): plain neural ODE
  no_control,  // relu(Phi X_h): no weights inside the flow
  rnn_gnn,
  gru_gnn,
  lstm_gnn,
  ndcn_classify,
};

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
bool is_temporal(Variant v);
bool is_continuous(Variant v);  // ndcn and its three ablations

struct ModelSpec {
  Variant variant = Variant::ndcn;
  int d_in = 1;
  int d_hidden = 20;  // flow width; recurrent width for temporal models
  int d_out = 1;      // equals d_in except for classification (class count)
  int d_gcn = 5;      // graph feature width of temporal models
  double alpha = 0.0;  // ndcn_classify operator
  double terminal_time = 1.0;
  double flow_init_gain = 1.0;  // multiplies the initial flow weight W
  SolverSpec solver;

  void validate() const;
};

/// Named parameter matrices in a fixed, variant-defined order. Biases are
/// 1 x d row vectors broadcast over nodes.
class ModelParams {
 public:
  void add(std::string name, Matrix value);
  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Matrix>>& entries() { return entries_; }
  std::size_t scalar_count() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
};

struct ParamShape {
  std::string name;
  int rows;
  int cols;
  bool is_bias;
};

std::vector<ParamShape> param_shapes(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);

/// Glorot-uniform weights (the flow weight W scaled by flow_init_gain), zero
/// biases.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// ModelParams recorded on a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool trainable);
  const DiffMatrix& operator[](const std::string& name) const;
  /// Parameter leaves in ModelParams order.
  const std::vector<DiffMatrix>& leaves() const { return leaves_; }

 private:
  std::map<std::string, int> index_;
  std::vector<DiffMatrix> leaves_;
};

/// The graph operator a variant uses: normalized Laplacian for the ndcn
/// family, tunable_diffusion(g, 0.5) for temporal models, tunable_diffusion(g,
/// alpha) for classification.
DiffOp model_operator(const ModelSpec& spec, const Graph& g);

/// Encodes x0, integrates the hidden flow recording every solver step on the
/// tape, decodes every queried state. `phi` must outlive the backward pass.
TrajectoryOf<DiffMatrix> ndcn_forward(const ModelSpec& spec, const BoundParams& params,
                                      const DiffOp& phi, const Matrix& x0,
                                      std::span<const double> query_times);

/// Hidden (and cell) state of a temporal model.
struct RecurrentState {
  DiffMatrix h;
  DiffMatrix c;
};

RecurrentState initial_recurrent_state(Tape& tape, const ModelSpec& spec, int n);

/// One recurrent step: consumes X[t], updates `state`, returns the prediction
/// of X[t+1].
DiffMatrix temporal_step(const ModelSpec& spec, const BoundParams& params, const DiffOp& phi,
                         const DiffMatrix& x, RecurrentState& state);

/// Teacher-forced next-step predictions for every element of x_seq.
std::vector<DiffMatrix> temporal_forward(const ModelSpec& spec, const BoundParams& params,
                                         const DiffOp& phi, std::span<const Matrix> x_seq);

/// Class logits at the terminal time (softmax is left to the loss).
DiffMatrix classify_forward(const ModelSpec& spec, const BoundParams& params, const DiffOp& phi,
                            const Matrix& features);

// Checkpoint container: text header then row-major little-endian float64
// payload. See docs/formats.md.
void write_params(std::ostream& os, const ModelParams& params);
ModelParams read_params(std::istream& is);
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

}  // namespace ndcn
