#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "ndcn/dynamics.hpp"
#include "ndcn/graph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / ("ndcn_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }
  std::string operator()(const std::string& rel) const { return (dir / rel).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(NDCN_BIN) + " " + args + " --quiet >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_noquiet(const std::string& args) {
  const std::string cmd = std::string(NDCN_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::vector<double>> read_matrix_csv(const std::string& path) {
  std::vector<std::vector<double>> rows;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

// (time index, node) -> value from "t,node,dim,value" rows.
std::map<std::pair<int, int>, double> read_trajectory(const std::string& path) {
  std::map<std::pair<int, int>, double> out;
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  std::map<double, int> time_index;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string t, node, dim, value;
    std::getline(ss, t, ',');
    std::getline(ss, node, ',');
    std::getline(ss, dim, ',');
    std::getline(ss, value, ',');
    const double tv = std::stod(t);
    if (!time_index.count(tv)) {
      const int next = static_cast<int>(time_index.size());
      time_index[tv] = next;
    }
    out[{time_index[tv], std::stoi(node)}] = std::stod(value);
  }
  return out;
}

}  // namespace

TEST_CASE("generate") {
  Sandbox box;
  REQUIRE(run_noquiet("generate --family community --n 400 --out " + box("c")) == 0);
  const std::string text = slurp(box("c/graph.edgelist"));
  CHECK(text.find("# blocks 133 133 100 34") != std::string::npos);
  CHECK(ndcn::load_edge_list(box("c/graph.edgelist")).num_nodes() == 400);

  REQUIRE(run_noquiet("generate --family grid --n 400 --out " + box("g")) == 0);
  CHECK(ndcn::load_edge_list(box("g/graph.edgelist")).num_nodes() == 400);

  REQUIRE(run_noquiet("generate --family er --n 10 --p 0 --out " + box("e")) == 0);
  const ndcn::Graph e = ndcn::load_edge_list(box("e/graph.edgelist"));
  CHECK(e.num_nodes() == 10);
  CHECK(e.num_edges() == 0);

  CHECK(run_noquiet("generate --family hexagonal --out " + box("bad")) == 2);
  CHECK_FALSE(fs::exists(box("bad")));
  CHECK_FALSE(fs::exists(box("bad.partial")));
  CHECK(run_noquiet("generate --n 10 --out " + box("bad")) == 2);
  // Refuses to overwrite a previous result.
  CHECK(run_noquiet("generate --family grid --n 16 --out " + box("g")) == 2);
  CHECK(ndcn::load_edge_list(box("g/graph.edgelist")).num_nodes() == 400);
}

TEST_CASE("simulate frames") {
  Sandbox box;
  REQUIRE(run_noquiet("simulate --law heat --family grid --n 400 --count 6 --frames --out " +
                      box("s")) == 0);
  const auto frame0 = read_matrix_csv(box("s/frames/frame_0000.csv"));
  const ndcn::Matrix x0 = ndcn::default_initial_state(20);
  REQUIRE(frame0.size() == 20);
  for (int r = 0; r < 20; ++r) {
    REQUIRE(frame0[r].size() == 20);
    for (int c = 0; c < 20; ++c) CHECK(frame0[r][c] == x0(r * 20 + c, 0));
  }
  std::set<double> levels;
  for (const auto& row : frame0) levels.insert(row.begin(), row.end());
  CHECK(levels == std::set<double>{0.0, 17.0, 20.0, 25.0});

  // Frames are the row-major reshape of the trajectory vector.
  const auto traj = read_trajectory(box("s/trajectory.csv"));
  for (int k : {0, 3, 6}) {
    char name[64];
    std::snprintf(name, sizeof name, "s/frames/frame_%04d.csv", k);
    const auto frame = read_matrix_csv(box(name));
    for (int i = 0; i < 400; ++i) CHECK(frame[i / 20][i % 20] == traj.at({k, i}));
  }
  CHECK(run_noquiet("simulate --law plague --out " + box("bad")) == 2);
  CHECK_FALSE(fs::exists(box("bad")));
}

TEST_CASE("simulate heat on K2 settles at the mean") {
  Sandbox box;
  {
    std::ofstream g(box("k2.edgelist"));
    g << "n=2\n0 1\n";
    std::ofstream x(box("x0.txt"));
    x << "3\n1\n";
  }
  REQUIRE(run_noquiet("simulate --law heat --graph " + box("k2.edgelist") + " --x0 " +
                      box("x0.txt") + " --T 20 --count 4 --sampling regular --out " + box("k")) == 0);
  const auto traj = read_trajectory(box("k/trajectory.csv"));
  CHECK(std::abs(traj.at({4, 0}) - 2.0) <= 1e-6);
  CHECK(std::abs(traj.at({4, 1}) - 2.0) <= 1e-6);
  CHECK(run_noquiet("simulate --law heat --graph " + box("k2.edgelist") + " --frames --x0 " +
                    box("x0.txt") + " --out " + box("bad")) == 2);
  CHECK(run_noquiet("simulate --law heat --graph " + box("missing.edgelist") + " --out " +
                    box("bad")) == 3);
  CHECK_FALSE(fs::exists(box("bad")));
}

TEST_CASE("train is deterministic and eval reproduces its metrics") {
  Sandbox box;
  const std::string args =
      "train --task continuous --law heat --family grid --nodes 100 --epochs 15 --runs 2 --seed 7 ";
  REQUIRE(run(args + "--out " + box("a")) == 0);
  REQUIRE(run(args + "--jobs 2 --out " + box("b")) == 0);
  CHECK(slurp(box("a/results.json")) == slurp(box("b/results.json")));
  CHECK(slurp(box("a/results.csv")) == slurp(box("b/results.csv")));
  CHECK(fs::exists(box("a/runs/run-001/model.ckpt")));

  REQUIRE(run_noquiet("eval --run " + box("a") + " --out " + box("ev")) == 0);
  const json trained = json::parse(slurp(box("a/results.json")));
  const json evaluated = json::parse(slurp(box("ev/eval.json")));
  REQUIRE(evaluated["runs"].size() == 2);
  for (int i = 0; i < 2; ++i) {
    for (const char* m : {"extrapolation", "interpolation"}) {
      const double a = trained["runs"][i]["metrics"][m].get<double>();
      const double b = evaluated["runs"][i]["metrics"][m].get<double>();
      CHECK(std::abs(a - b) <= 1e-12);
    }
  }
}

TEST_CASE("regular and classify runs round-trip through eval") {
  Sandbox box;
  REQUIRE(run("train --task regular --variant lstm_gnn --nodes 100 --epochs 5 --runs 1 --out " +
              box("r")) == 0);
  REQUIRE(run("train --task classify --sbm-nodes 60 --sbm-label-fraction 0.2 --hidden 8 --epochs 10 "
              "--runs 1 --T-grid 1.0 --alpha-grid 0.5 --out " + box("c")) == 0);
  for (const char* dir : {"r", "c"}) {
    REQUIRE(run_noquiet(std::string("eval --run ") + box(dir) + " --out " + box(std::string(dir) + "e")) == 0);
    const json trained = json::parse(slurp(box(std::string(dir) + "/results.json")));
    const json evaluated = json::parse(slurp(box(std::string(dir) + "e/eval.json")));
    for (const auto& [k, v] : evaluated["runs"][0]["metrics"].items()) {
      CHECK(std::abs(trained["runs"][0]["metrics"][k].get<double>() - v.get<double>()) <= 1e-12);
    }
  }
}

TEST_CASE("config files override flags and reject unknown keys") {
  Sandbox box;
  {
    std::ofstream c(box("good.json"));
    c << R"({"epochs": 4, "runs_unused": 1})";
    std::ofstream d(box("ok.json"));
    d << R"({"epochs": 4, "run_count": 1, "nodes": 100, "out": ")" << box("o") << R"("})";
    std::ofstream e(box("broken.json"));
    e << "{ not json";
  }
  CHECK(run("train --epochs 50 --config " + box("good.json") + " --out " + box("bad")) == 2);
  CHECK_FALSE(fs::exists(box("bad")));
  CHECK(run("train --epochs 50 --config " + box("broken.json") + " --out " + box("bad")) == 3);
  REQUIRE(run("train --epochs 50 --config " + box("ok.json")) == 0);
  const json cfg = json::parse(slurp(box("o/config.json")));
  CHECK(cfg["epochs"] == 4);
  CHECK(cfg["run_count"] == 1);
}

TEST_CASE("numeric failure exits 4 without output") {
  Sandbox box;
  CHECK(run("train --variant no_encode --nodes 100 --lr 1e8 --epochs 5 --runs 1 --out " +
            box("f")) == 4);
  CHECK_FALSE(fs::exists(box("f")));
  CHECK_FALSE(fs::exists(box("f.partial")));
}

TEST_CASE("reproduce") {
  Sandbox box;
  REQUIRE(run("reproduce table1 --runs 2 --cell heat:grid --model ndcn --model no_control "
              "--nodes 100 --epochs 5 --out " + box("t1")) == 0);
  const std::string table = slurp(box("t1/table.csv"));
  CHECK(table.rfind("dynamics,model,grid,random,power_law,small_world,community\n", 0) == 0);
  CHECK(table.find("heat,no_control,") != std::string::npos);
  CHECK(table.find("heat,ndcn,") != std::string::npos);
  CHECK(table.find("±") != std::string::npos);
  CHECK(fs::exists(box("t1/cells/heat_grid_ndcn.json")));

  CHECK(run("reproduce table5-cora --dataset " + box("nowhere") + " --out " + box("c")) == 3);
  CHECK_FALSE(fs::exists(box("c")));
  CHECK(run("reproduce table9 --out " + box("c")) == 2);
  CHECK(run("reproduce table1 --cell heat --out " + box("c")) == 2);
}
