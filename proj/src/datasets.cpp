#include "ndcn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include "json.hpp"
#include <numeric>
#include <sstream>

#include "ndcn/errors.hpp"
#include "ndcn/rng.hpp"

namespace ndcn {
namespace fs = std::filesystem;
namespace {

std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw NotFound("missing bundle file: " + p.string());
  return is;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw FormatError("cannot write " + p.string());
  return os;
}

Matrix read_features(const fs::path& p) {
  std::ifstream is = open_in(p);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw FormatError("features.csv: bad number '" + cell + "'");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError("features.csv: ragged rows");
    }
    rows.push_back(std::move(row));
  }
  const Eigen::Index cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  Matrix m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][j];
  }
  return m;
}

std::vector<int> read_labels(const fs::path& p) {
  std::ifstream is = open_in(p);
  std::vector<int> labels;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      labels.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError("labels.csv: bad label '" + tok + "'");
    }
  }
  return labels;
}

std::vector<int> id_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw FormatError(std::string("split.json: missing array '") + key + "'");
  }
  std::vector<int> ids;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) throw FormatError("split.json: non-integer id");
    ids.push_back(v.get<int>());
  }
  return ids;
}

}  // namespace

std::vector<bool> LabeledGraphBundle::mask(const std::vector<int>& ids) const {
  std::vector<bool> m(num_nodes(), false);
  for (int i : ids) m.at(i) = true;
  return m;
}

Matrix LabeledGraphBundle::one_hot() const {
  Matrix y = Matrix::Zero(num_nodes(), num_classes);
  for (int i = 0; i < num_nodes(); ++i) {
    if (labels[i] >= 0) y(i, labels[i]) = 1.0;
  }
  return y;
}

bool operator==(const LabeledGraphBundle& a, const LabeledGraphBundle& b) {
  return a.graph == b.graph && a.features.rows() == b.features.rows() &&
         a.features.cols() == b.features.cols() && a.features == b.features &&
         a.labels == b.labels && a.num_classes == b.num_classes && a.train == b.train &&
         a.val == b.val && a.test == b.test;
}

void validate(const LabeledGraphBundle& b) {
  const int n = b.num_nodes();
  if (b.features.rows() != n) {
    throw FormatError("features have " + std::to_string(b.features.rows()) + " rows for " +
                      std::to_string(n) + " nodes");
  }
  if (static_cast<int>(b.labels.size()) != n) {
    throw FormatError("labels have " + std::to_string(b.labels.size()) + " entries for " +
                      std::to_string(n) + " nodes");
  }
  if (!b.features.allFinite()) throw FormatError("non-finite feature value");
  for (int y : b.labels) {
    if (y < -1 || y >= b.num_classes) throw FormatError("label out of range");
  }
  std::vector<int> owner(n, -1);
  const std::vector<int>* splits[] = {&b.train, &b.val, &b.test};
  for (int s = 0; s < 3; ++s) {
    for (int i : *splits[s]) {
      if (i < 0 || i >= n) throw FormatError("split id out of range");
      if (owner[i] != -1) throw FormatError("split id " + std::to_string(i) + " appears twice");
      owner[i] = s;
      if (b.labels[i] < 0) throw FormatError("split node " + std::to_string(i) + " has no label");
    }
  }
}

LabeledGraphBundle load_bundle(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw NotFound("no bundle directory: " + dir);
  LabeledGraphBundle b;
  b.graph = load_edge_list((root / "graph.edgelist").string());
  b.features = read_features(root / "features.csv");
  b.labels = read_labels(root / "labels.csv");
  nlohmann::json split;
  try {
    std::ifstream is = open_in(root / "split.json");
    split = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split.json: ") + e.what());
  }
  b.train = id_list(split, "train");
  b.val = id_list(split, "val");
  b.test = id_list(split, "test");
  b.num_classes = 0;
  for (int y : b.labels) b.num_classes = std::max(b.num_classes, y + 1);
  validate(b);
  if (split.contains("counts")) {
    const auto& c = split["counts"];
    const std::pair<const char*, std::size_t> sizes[] = {
        {"train", b.train.size()}, {"val", b.val.size()}, {"test", b.test.size()}};
    for (const auto& [key, size] : sizes) {
      if (c.contains(key) && c[key].get<std::size_t>() != size) {
        throw FormatError(std::string("split.json: '") + key + "' size differs from counts");
      }
    }
  }
  return b;
}

void save_bundle(const std::string& dir, const LabeledGraphBundle& b) {
  validate(b);
  const fs::path root(dir);
  fs::create_directories(root);
  save_edge_list((root / "graph.edgelist").string(), b.graph);
  {
    std::ofstream os = open_out(root / "features.csv");
    char buf[32];
    for (Eigen::Index i = 0; i < b.features.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.features.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", b.features(i, j));
        os << (j ? "," : "") << buf;
      }
      os << '\n';
    }
  }
  {
    std::ofstream os = open_out(root / "labels.csv");
    for (int y : b.labels) os << y << '\n';
  }
  nlohmann::json split = {{"train", b.train},
                          {"val", b.val},
                          {"test", b.test},
                          {"counts",
                           {{"train", b.train.size()},
                            {"val", b.val.size()},
                            {"test", b.test.size()}}}};
  std::ofstream os = open_out(root / "split.json");
  os << split.dump() << '\n';
}

LabeledGraphBundle gen_sbm_bundle(int n, int blocks, double p_in, double p_out,
                                  double feature_noise, double label_fraction,
                                  std::uint64_t seed) {
  if (blocks < 1 || n < blocks) throw InvalidArgument("need 1 <= blocks <= n");
  if (!(label_fraction > 0.0 && label_fraction < 1.0)) {
    throw InvalidArgument("label_fraction must lie in (0, 1)");
  }
  if (!(feature_noise >= 0.0)) throw InvalidArgument("feature noise must be nonnegative");
  std::vector<int> sizes(blocks, n / blocks);
  for (int k = 0; k < n % blocks; ++k) ++sizes[k];
  PartitionedGraph pg = gen_random_partition(sizes, p_in, p_out, derive_seed(seed, 0));

  LabeledGraphBundle b;
  b.graph = std::move(pg.graph);
  b.labels = pg.block;
  b.num_classes = blocks;
  Rng rng(derive_seed(seed, 1));
  b.features = Matrix::Zero(n, blocks);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < blocks; ++k) {
      b.features(i, k) = (b.labels[i] == k ? 1.0 : 0.0) + feature_noise * rng.normal();
    }
  }

  auto shuffle = [&rng](std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  std::vector<int> rest;
  for (int k = 0; k < blocks; ++k) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (b.labels[i] == k) members.push_back(i);
    }
    const int take = static_cast<int>(std::lround(label_fraction * members.size()));
    if (take < 1 || take >= static_cast<int>(members.size())) {
      throw InvalidArgument("block " + std::to_string(k) + " too small to stratify");
    }
    shuffle(members);
    b.train.insert(b.train.end(), members.begin(), members.begin() + take);
    rest.insert(rest.end(), members.begin() + take, members.end());
  }
  shuffle(rest);
  const std::size_t half = rest.size() / 2;
  b.val.assign(rest.begin(), rest.begin() + half);
  b.test.assign(rest.begin() + half, rest.end());
  std::sort(b.train.begin(), b.train.end());
  std::sort(b.val.begin(), b.val.end());
  std::sort(b.test.begin(), b.test.end());
  validate(b);
  return b;
}

Matrix row_normalized(const Matrix& features) {
  Matrix out = features;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).cwiseAbs().sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

}  // namespace ndcn
