#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndcn/graph.hpp"
#include "ndcn/odeint.hpp"

namespace ndcn {

/// Node-classification dataset: graph, raw features, integer labels and a
/// fixed transductive split given as node id lists.
struct LabeledGraphBundle {
  Graph graph;
  Matrix features;          // n x D
  std::vector<int> labels;  // n entries in [0, C), or -1 for unlabeled nodes
  int num_classes = 0;
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  int num_nodes() const { return graph.num_nodes(); }
  /// n-length membership vector for one of the id lists.
  std::vector<bool> mask(const std::vector<int>& ids) const;
  /// n x C one-hot label matrix (all-zero rows for unlabeled nodes).
  Matrix one_hot() const;

  friend bool operator==(const LabeledGraphBundle& a, const LabeledGraphBundle& b);
};

/// Throws FormatError when shapes disagree, a split id is out of range or
/// repeated, splits overlap, a split node lacks a label, or a feature is not
/// finite.
void validate(const LabeledGraphBundle& b);

/// Reads graph.edgelist, features.csv, labels.csv and split.json from `dir`.
/// When split.json carries "counts", the split sizes must match them.
LabeledGraphBundle load_bundle(const std::string& dir);
void save_bundle(const std::string& dir, const LabeledGraphBundle& b);

/// Planted-partition graph with one-hot block features plus Gaussian noise;
/// `label_fraction` of every block is labeled for training, the remaining
/// nodes are shuffled and split evenly into validation and test.
LabeledGraphBundle gen_sbm_bundle(int n, int blocks, double p_in, double p_out,
                                  double feature_noise, double label_fraction,
                                  std::uint64_t seed);

/// Scales every nonzero feature row to unit l1 norm.
Matrix row_normalized(const Matrix& features);

}  // namespace ndcn
