#include "ndcn/graph.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "ndcn/errors.hpp"
#include "ndcn/rng.hpp"

namespace ndcn {
namespace {

std::uint64_t pair_key(int i, int j) {
  if (i > j) std::swap(i, j);
  return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint32_t>(j);
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidArgument(std::string(name) + " must lie in [0, 1]");
  }
}

}  // namespace

Graph::Graph(int n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
  if (n < 0) throw InvalidArgument("node count must be non-negative");
  for (auto& [i, j] : edges_) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw InvalidArgument("edge endpoint out of range: " + std::to_string(i) +
                            " " + std::to_string(j));
    }
    if (i == j) throw InvalidArgument("self-loop at node " + std::to_string(i));
    if (i > j) std::swap(i, j);
  }
  std::sort(edges_.begin(), edges_.end());
  if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
    throw InvalidArgument("duplicate edge");
  }
  degree_.assign(n, 0);
  for (const auto& [i, j] : edges_) {
    ++degree_[i];
    ++degree_[j];
  }
  offsets_.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) offsets_[i + 1] = offsets_[i] + degree_[i];
  adj_.assign(offsets_[n], 0);
  std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
  for (const auto& [i, j] : edges_) {
    adj_[fill[i]++] = j;
    adj_[fill[j]++] = i;
  }
  for (int i = 0; i < n; ++i) {
    std::sort(adj_.begin() + offsets_[i], adj_.begin() + offsets_[i + 1]);
  }
}

bool Graph::has_edge(int i, int j) const {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) return false;
  auto [b, e] = neighbors(i);
  return std::binary_search(b, e, j);
}

Graph Graph::relabeled(const std::vector<int>& new_label) const {
  if (static_cast<int>(new_label.size()) != n_) {
    throw InvalidArgument("relabel map size differs from node count");
  }
  std::vector<Edge> e;
  e.reserve(edges_.size());
  for (const auto& [i, j] : edges_) e.emplace_back(new_label[i], new_label[j]);
  return Graph(n_, std::move(e));
}

std::vector<int> NodePermutation::inverse() const {
  std::vector<int> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = static_cast<int>(k);
  return inv;
}

bool NodePermutation::is_bijection() const {
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (sorted[k] != static_cast<int>(k)) return false;
  }
  return true;
}

void validate(const Graph& g) {
  const int n = g.num_nodes();
  std::unordered_set<std::uint64_t> seen;
  std::vector<int> deg(n, 0);
  for (const auto& [i, j] : g.edges()) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw InvalidArgument("endpoint out of range");
    if (i == j) throw InvalidArgument("self-loop");
    if (!seen.insert(pair_key(i, j)).second) throw InvalidArgument("duplicate edge");
    ++deg[i];
    ++deg[j];
  }
  if (deg != g.degree()) throw InvalidArgument("degree vector inconsistent with edges");
  for (int i = 0; i < n; ++i) {
    auto [b, e] = g.neighbors(i);
    if (e - b != deg[i]) throw InvalidArgument("adjacency row length mismatch");
    for (const int* p = b; p != e; ++p) {
      if (!g.has_edge(*p, i)) throw InvalidArgument("adjacency not symmetric");
    }
  }
}

Graph gen_grid8(int side) {
  if (side < 2) throw InvalidArgument("grid side must be at least 2");
  static constexpr int dx[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  static constexpr int dy[] = {-1, -1, -1, 0, 0, 1, 1, 1};
  std::vector<Edge> edges;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int index = r * side + c;
      for (int k = 0; k < 8; ++k) {
        const int rr = r + dx[k];
        const int cc = c + dy[k];
        if (rr < 0 || cc < 0 || rr >= side || cc >= side) continue;
        const int other = rr * side + cc;
        if (other > index) edges.emplace_back(index, other);
      }
    }
  }
  return Graph(side * side, std::move(edges));
}

Graph gen_erdos_renyi(int n, double p, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("n must be positive");
  check_probability(p, "p");
  Rng rng(seed);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p)) edges.emplace_back(i, j);
    }
  }
  return Graph(n, std::move(edges));
}

Graph gen_barabasi_albert(int n, int m, std::uint64_t seed) {
  if (m < 1 || m >= n) throw InvalidArgument("Barabasi-Albert requires 1 <= m < n");
  Rng rng(seed);
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(n - m) * m);
  // Each node appears here once per incident edge end, so uniform draws from
  // this list are degree-proportional.
  std::vector<int> repeated;
  std::vector<int> targets(m);
  std::iota(targets.begin(), targets.end(), 0);
  for (int source = m; source < n; ++source) {
    for (int t : targets) edges.emplace_back(t, source);
    repeated.insert(repeated.end(), targets.begin(), targets.end());
    repeated.insert(repeated.end(), m, source);
    std::vector<int> chosen;
    std::unordered_set<int> chosen_set;
    while (static_cast<int>(chosen.size()) < m) {
      const int x = repeated[rng.below(repeated.size())];
      if (chosen_set.insert(x).second) chosen.push_back(x);
    }
    targets = std::move(chosen);
  }
  return Graph(n, std::move(edges));
}

Graph gen_newman_watts(int n, int k, double p, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("Newman-Watts requires k >= 2");
  if (k >= n) throw InvalidArgument("Newman-Watts requires k < n");
  check_probability(p, "p");
  Rng rng(seed);
  std::vector<std::unordered_set<int>> adj(n);
  std::vector<Edge> lattice;
  for (int u = 0; u < n; ++u) {
    for (int j = 1; j <= k / 2; ++j) {
      const int v = (u + j) % n;
      if (adj[u].insert(v).second) {
        adj[v].insert(u);
        lattice.emplace_back(u, v);
      }
    }
  }
  std::vector<Edge> edges = lattice;
  for (const auto& [u, v] : lattice) {
    (void)v;
    if (!rng.bernoulli(p)) continue;
    if (static_cast<int>(adj[u].size()) >= n - 1) continue;
    int w;
    do {
      w = static_cast<int>(rng.below(n));
    } while (w == u || adj[u].count(w));
    adj[u].insert(w);
    adj[w].insert(u);
    edges.emplace_back(u, w);
  }
  return Graph(n, std::move(edges));
}

PartitionedGraph gen_random_partition(const std::vector<int>& sizes, double p_in,
                                      double p_out, std::uint64_t seed) {
  if (sizes.empty()) throw InvalidArgument("block size list is empty");
  check_probability(p_in, "p_in");
  check_probability(p_out, "p_out");
  std::vector<int> block;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    if (sizes[b] < 1) throw InvalidArgument("block sizes must be positive");
    block.insert(block.end(), sizes[b], static_cast<int>(b));
  }
  const int n = static_cast<int>(block.size());
  Rng rng(seed);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(block[i] == block[j] ? p_in : p_out)) edges.emplace_back(i, j);
    }
  }
  return {Graph(n, std::move(edges)), std::move(block), sizes};
}

std::vector<int> default_community_sizes(int n) {
  const int n1 = n / 3;
  const int n2 = n / 3;
  const int n3 = n / 4;
  return {n1, n2, n3, n - n1 - n2 - n3};
}

std::vector<int> greedy_modularity_communities(const Graph& g) {
  const int n = g.num_nodes();
  std::vector<int> owner(n);
  std::iota(owner.begin(), owner.end(), 0);

  const double two_m = 2.0 * static_cast<double>(g.num_edges());
  if (two_m > 0) {
    // e[i][j]: fraction of edge ends joining communities i and j (both
    // directions stored); a[i]: fraction of edge ends in community i.
    std::vector<std::map<int, double>> e(n);
    std::vector<double> a(n);
    for (int i = 0; i < n; ++i) a[i] = g.degree(i) / two_m;
    for (const auto& [i, j] : g.edges()) {
      e[i][j] += 1.0 / two_m;
      e[j][i] += 1.0 / two_m;
    }
    std::vector<std::vector<int>> members(n);
    for (int i = 0; i < n; ++i) members[i] = {i};

    for (;;) {
      double best = 0.0;
      int bi = -1, bj = -1;
      for (int i = 0; i < n; ++i) {
        for (auto it = e[i].upper_bound(i); it != e[i].end(); ++it) {
          const double dq = 2.0 * (it->second - a[i] * a[it->first]);
          if (dq > best) {
            best = dq;
            bi = i;
            bj = it->first;
          }
        }
      }
      if (bi < 0) break;
      // Merge bj into bi.
      for (const auto& [k, w] : e[bj]) {
        if (k == bi) continue;
        e[bi][k] += w;
        e[k][bi] += w;
        e[k].erase(bj);
      }
      e[bi].erase(bj);
      e[bj].clear();
      a[bi] += a[bj];
      a[bj] = 0.0;
      for (int v : members[bj]) owner[v] = bi;
      members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
      members[bj].clear();
    }
  }

  // Renumber: descending size, then smallest member id.
  std::map<int, std::vector<int>> groups;
  for (int v = 0; v < n; ++v) groups[owner[v]].push_back(v);
  std::vector<std::vector<int>> ordered;
  for (auto& [id, vs] : groups) ordered.push_back(std::move(vs));
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return x.size() > y.size();
    return x.front() < y.front();
  });
  std::vector<int> community(n);
  for (std::size_t c = 0; c < ordered.size(); ++c) {
    for (int v : ordered[c]) community[v] = static_cast<int>(c);
  }
  return community;
}

double modularity(const Graph& g, const std::vector<int>& community) {
  const double m = static_cast<double>(g.num_edges());
  if (m == 0) return 0.0;
  const int k = community.empty() ? 0 : *std::max_element(community.begin(), community.end()) + 1;
  std::vector<double> internal(k, 0.0), degree_sum(k, 0.0);
  for (const auto& [i, j] : g.edges()) {
    if (community[i] == community[j]) internal[community[i]] += 1.0;
  }
  for (int v = 0; v < g.num_nodes(); ++v) degree_sum[community[v]] += g.degree(v);
  double q = 0.0;
  for (int c = 0; c < k; ++c) {
    q += internal[c] / m - (degree_sum[c] / (2.0 * m)) * (degree_sum[c] / (2.0 * m));
  }
  return q;
}

NodePermutation greedy_modularity_reorder(const Graph& g) {
  if (g.num_nodes() == 0) throw InvalidArgument("graph is empty");
  const auto community = greedy_modularity_communities(g);
  NodePermutation p;
  p.perm.resize(g.num_nodes());
  std::iota(p.perm.begin(), p.perm.end(), 0);
  std::stable_sort(p.perm.begin(), p.perm.end(),
                   [&](int x, int y) { return community[x] < community[y]; });
  return p;
}

void write_edge_list(std::ostream& os, const Graph& g, const std::vector<std::string>& comments) {
  os << "n=" << g.num_nodes() << '\n';
  for (const auto& c : comments) os << "# " << c << '\n';
  for (const auto& [i, j] : g.edges()) os << i << ' ' << j << '\n';
}

Graph read_edge_list(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("n=", 0) != 0) {
    throw FormatError("edge list must start with 'n=<int>'");
  }
  int n = 0;
  try {
    std::size_t used = 0;
    n = std::stoi(line.substr(2), &used);
    if (line.find_first_not_of(" \t\r", 2 + used) != std::string::npos) throw FormatError("");
  } catch (const std::exception&) {
    throw FormatError("bad node count line: " + line);
  }
  std::vector<Edge> edges;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream ls(line);
    int i, j;
    std::string rest;
    if (!(ls >> i >> j) || (ls >> rest)) {
      throw FormatError("bad edge on line " + std::to_string(lineno));
    }
    edges.emplace_back(i, j);
  }
  try {
    return Graph(n, std::move(edges));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid edge list: ") + e.what());
  }
}

void save_edge_list(const std::string& path, const Graph& g,
                    const std::vector<std::string>& comments) {
  std::ofstream os(path);
  if (!os) throw NotFound("cannot open for writing: " + path);
  write_edge_list(os, g, comments);
}

Graph load_edge_list(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw NotFound("no such file: " + path);
  return read_edge_list(is);
}

}  // namespace ndcn
