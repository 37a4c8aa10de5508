#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace ndcn {

using Edge = std::pair<int, int>;

/// Undirected simple graph on nodes [0, n). Edges are stored once with i < j,
/// sorted ascending; degrees and a CSR neighbor list are derived on
/// construction.
class Graph {
 public:
  Graph() = default;

  /// Throws InvalidArgument on self-loops, duplicates or out-of-range
  /// endpoints. Edge orientation and order are normalized.
  Graph(int n, std::vector<Edge> edges);

  int num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& degree() const { return degree_; }
  int degree(int i) const { return degree_[i]; }

  /// Neighbors of node i, ascending.
  std::pair<const int*, const int*> neighbors(int i) const {
    return {adj_.data() + offsets_[i], adj_.data() + offsets_[i + 1]};
  }

  bool has_edge(int i, int j) const;

  /// Graph with node i renamed to new_label[i].
  Graph relabeled(const std::vector<int>& new_label) const;

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> degree_;
  std::vector<int> offsets_{0};
  std::vector<int> adj_;
};

/// A graph generated from planted blocks, with each node's block index.
struct PartitionedGraph {
  Graph graph;
  std::vector<int> block;
  std::vector<int> sizes;
};

/// A bijection on [0, n): perm[k] is the original id of the node placed at
/// position k.
struct NodePermutation {
  std::vector<int> perm;

  /// inverse()[original id] = position.
  std::vector<int> inverse() const;
  bool is_bijection() const;
};

/// Throws InvalidArgument if any Graph invariant is violated. Graph's
/// constructor already enforces these; this re-derives them from scratch.
void validate(const Graph& g);

// Generators. All are deterministic functions of their arguments.
Graph gen_grid8(int side);
Graph gen_erdos_renyi(int n, double p, std::uint64_t seed);
Graph gen_barabasi_albert(int n, int m, std::uint64_t seed);
Graph gen_newman_watts(int n, int k, double p, std::uint64_t seed);
PartitionedGraph gen_random_partition(const std::vector<int>& sizes, double p_in,
                                      double p_out, std::uint64_t seed);

/// Block sizes used for the 4-block community network: n/3, n/3, n/4 and the
/// remainder.
std::vector<int> default_community_sizes(int n);

/// Greedy agglomerative modularity maximization (Clauset-Newman-Moore).
/// Returns community index per node; communities numbered by descending size,
/// ties by smallest member id.
std::vector<int> greedy_modularity_communities(const Graph& g);

/// Modularity of a node-to-community assignment.
double modularity(const Graph& g, const std::vector<int>& community);

/// Communities laid out contiguously (largest first), members ascending.
NodePermutation greedy_modularity_reorder(const Graph& g);

// Edge-list text format: "n=<int>" on the first line, optional "#" comment
// lines, then one "i j" pair per line with i < j in ascending order.
void write_edge_list(std::ostream& os, const Graph& g,
                     const std::vector<std::string>& comments = {});
Graph read_edge_list(std::istream& is);
void save_edge_list(const std::string& path, const Graph& g,
                    const std::vector<std::string>& comments = {});
Graph load_edge_list(const std::string& path);

}  // namespace ndcn
