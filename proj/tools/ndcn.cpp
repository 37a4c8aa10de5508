// ndcn: generate graphs, simulate dynamics, train and evaluate models,
// reproduce the experiment tables.

#include <malloc.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ndcn/datasets.hpp"
#include "ndcn/dynamics.hpp"
#include "ndcn/errors.hpp"
#include "ndcn/graph.hpp"
#include "ndcn/models.hpp"
#include "ndcn/rng.hpp"
#include "ndcn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ndcn;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

// Everything is written under "<out>.partial" and renamed into place on
// success; the staging directory is removed otherwise.
class OutputDir {
 public:
  explicit OutputDir(const fs::path& final_path)
      : final_(final_path), staging_(final_path.string() + ".partial") {
    if (fs::exists(final_) && !(fs::is_directory(final_) && fs::is_empty(final_))) {
      throw InvalidArgument("output path exists and is not an empty directory: " +
                            final_.string());
    }
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  fs::path path(const std::string& rel) const {
    fs::path p = staging_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  void write(const std::string& rel, const std::string& text) const {
    std::ofstream os(path(rel), std::ios::binary);
    os << text;
    if (!os) throw FormatError("cannot write " + (staging_ / rel).string());
  }

  void log(const std::string& line) {
    std::lock_guard lock(mu_);
    log_ << line << '\n';
  }

  void commit() {
    write("log.txt", log_.str());
    if (fs::exists(final_)) fs::remove(final_);
    if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
    fs::rename(staging_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path staging_;
  std::ostringstream log_;
  std::mutex mu_;
  bool committed_ = false;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFound("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

int default_jobs() {
  if (const char* env = std::getenv("NDCN_JOBS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument("NDCN_JOBS must be a positive integer");
  }
  return 1;
}

int integer_side(int n) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return side * side == n ? side : -1;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- plan flags ---------------------------------------------------------------

struct PlanFlags {
  ExperimentPlan plan;
  std::string task, law, family, variant;
  std::string config;
  std::string out;
  int jobs = 0;
  bool no_reorder = false;
  bool quiet = false;
};

void add_plan_options(CLI::App& cmd, PlanFlags& f, bool with_model_choice) {
  ExperimentPlan& p = f.plan;
  if (with_model_choice) {
    cmd.add_option("--task", f.task, "continuous, regular or classify");
    cmd.add_option("--law", f.law, "heat, mutualistic or gene");
    cmd.add_option("--family", f.family, "grid, random, power_law, small_world, community");
    cmd.add_option("--variant", f.variant,
                   "ndcn, no_encode, no_graph, no_control, rnn_gnn, gru_gnn, lstm_gnn, "
                   "ndcn_classify");
  }
  cmd.add_option("--nodes", p.nodes, "network size (perfect square)");
  cmd.add_option("--T", p.terminal_time, "terminal time (default per law and family)");
  cmd.add_option("--snapshots", p.snapshots, "sampled snapshots");
  cmd.add_option("--train-count", p.train_count, "training snapshots");
  cmd.add_option("--interp-count", p.interp_count, "interpolation snapshots");
  cmd.add_option("--seed", p.seed, "base seed; run i uses seed + i");
  cmd.add_option("--runs", p.run_count, "independent runs");
  cmd.add_option("--lr", p.lr, "Adam learning rate");
  cmd.add_option("--epochs", p.epochs, "training epochs");
  cmd.add_option("--weight-decay", p.weight_decay, "l2 penalty (default per table)");
  cmd.add_option("--hidden", p.hidden, "hidden width");
  cmd.add_option("--euler-substeps", p.euler_substeps, "Euler steps per sample spacing");
  cmd.add_flag("--no-reorder", f.no_reorder, "keep generator node labels");
  cmd.add_option("--dataset", p.dataset, "\"sbm\" or a bundle directory");
  cmd.add_option("--sbm-nodes", p.sbm_nodes);
  cmd.add_option("--sbm-blocks", p.sbm_blocks);
  cmd.add_option("--sbm-p-in", p.sbm_p_in);
  cmd.add_option("--sbm-p-out", p.sbm_p_out);
  cmd.add_option("--sbm-noise", p.sbm_noise);
  cmd.add_option("--sbm-label-fraction", p.sbm_label_fraction);
  cmd.add_option("--T-grid", p.T_grid, "terminal times searched for classification")
      ->delimiter(',');
  cmd.add_option("--alpha-grid", p.alpha_grid, "alpha values searched for classification")
      ->delimiter(',');
  cmd.add_flag("--row-normalize", p.row_normalize, "scale feature rows to unit l1 norm");
  cmd.add_option("--config", f.config, "JSON file; its keys override flags");
  cmd.add_option("--jobs", f.jobs, "worker threads (default $NDCN_JOBS or 1)");
  cmd.add_flag("--quiet", f.quiet, "no progress on stderr");
}

// Applies string flags, then the config file. Config keys beyond the plan's
// are "out", "jobs" and "quiet".
void finish_plan_flags(PlanFlags& f) {
  ExperimentPlan& p = f.plan;
  if (!f.task.empty()) p.task = parse_task(f.task);
  if (!f.law.empty()) p.law = parse_law(f.law);
  if (!f.family.empty()) p.family = parse_family(f.family);
  if (!f.variant.empty()) {
    p.variant = parse_variant(f.variant);
  } else if (p.task == Task::classify) {
    p.variant = Variant::ndcn_classify;
  }
  if (f.no_reorder) p.reorder_nodes = false;
  if (!f.config.empty()) {
    json cfg = read_json(f.config);
    if (!cfg.is_object()) throw FormatError(f.config + ": expected a JSON object");
    try {
      if (cfg.contains("out")) f.out = cfg["out"].get<std::string>();
      if (cfg.contains("jobs")) f.jobs = cfg["jobs"].get<int>();
      if (cfg.contains("quiet")) f.quiet = cfg["quiet"].get<bool>();
    } catch (const json::exception& e) {
      throw InvalidArgument(f.config + ": " + e.what());
    }
    cfg.erase("out");
    cfg.erase("jobs");
    cfg.erase("quiet");
    p = plan_from_json(cfg, p);
  }
  if (f.jobs <= 0) f.jobs = default_jobs();
  if (f.out.empty()) throw InvalidArgument("--out is required");
}

void progress(const PlanFlags& f, OutputDir& out, const std::string& line) {
  out.log(line);
  if (!f.quiet) std::cerr << line << '\n';
}

std::string describe(const RunRecord& r) {
  std::ostringstream os;
  os << "run " << r.index << " seed " << r.seed;
  if (r.failed) {
    os << " failed: " << r.failure;
  } else {
    for (const auto& [k, v] : r.metrics) os << ' ' << k << '=' << v;
  }
  return os.str();
}

void write_run_artifacts(OutputDir& out, const std::string& prefix, const RunRecord& r) {
  json meta{{"index", r.index}, {"seed", r.seed}, {"failed", r.failed}, {"failure", r.failure}};
  json m = json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;
  meta["metrics"] = m;
  out.write(prefix + "run.json", dump(meta));
  if (r.failed) return;
  out.write(prefix + "model.json", dump(to_json(r.spec)));
  save_params(out.path(prefix + "model.ckpt").string(), r.params);
}

std::string run_dir(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "runs/run-%03d/", index);
  return buf;
}

// ---- generate -------------------------------------------------------------------

struct GenerateArgs {
  std::string family;
  int n = 400;
  std::uint64_t seed = 0;
  std::optional<double> p, p_in, p_out;
  std::optional<int> m, k;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const Family family = parse_family(a.family);
  std::vector<std::string> comments{"family " + to_string(family), "seed " + std::to_string(a.seed)};
  Graph g;
  switch (family) {
    case Family::grid: {
      const int side = integer_side(a.n);
      if (side < 2) throw InvalidArgument("grid needs a perfect-square --n >= 4");
      g = gen_grid8(side);
      break;
    }
    case Family::random:
      g = gen_erdos_renyi(a.n, a.p.value_or(0.1), a.seed);
      comments.push_back("p " + fmt(a.p.value_or(0.1)));
      break;
    case Family::power_law:
      g = gen_barabasi_albert(a.n, a.m.value_or(5), a.seed);
      comments.push_back("m " + std::to_string(a.m.value_or(5)));
      break;
    case Family::small_world:
      g = gen_newman_watts(a.n, a.k.value_or(5), a.p.value_or(0.5), a.seed);
      comments.push_back("k " + std::to_string(a.k.value_or(5)) + " p " + fmt(a.p.value_or(0.5)));
      break;
    case Family::community: {
      const std::vector<int> sizes = default_community_sizes(a.n);
      const PartitionedGraph pg =
          gen_random_partition(sizes, a.p_in.value_or(0.25), a.p_out.value_or(0.01), a.seed);
      g = pg.graph;
      std::string blocks = "blocks";
      for (int s : pg.sizes) blocks += " " + std::to_string(s);
      comments.push_back(blocks);
      comments.push_back("p_in " + fmt(a.p_in.value_or(0.25)) + " p_out " +
                         fmt(a.p_out.value_or(0.01)));
      break;
    }
  }
  OutputDir out(a.out);
  std::ostringstream os;
  write_edge_list(os, g, comments);
  out.write("graph.edgelist", os.str());
  json cfg{{"command", "generate"}, {"family", to_string(family)}, {"n", a.n}, {"seed", a.seed}};
  if (a.p) cfg["p"] = *a.p;
  if (a.m) cfg["m"] = *a.m;
  if (a.k) cfg["k"] = *a.k;
  if (a.p_in) cfg["p_in"] = *a.p_in;
  if (a.p_out) cfg["p_out"] = *a.p_out;
  out.write("config.json", dump(cfg));
  out.log(std::to_string(g.num_nodes()) + " nodes, " + std::to_string(g.num_edges()) + " edges");
  out.commit();
  return kOk;
}

// ---- simulate -------------------------------------------------------------------

struct SimulateArgs {
  std::string law = "heat";
  std::string family = "grid";
  std::string graph;
  std::string x0;
  int n = 400;
  double T = 0.0;
  int count = 120;
  std::string sampling = "irregular";
  std::uint64_t seed = 0;
  bool frames = false;
  bool no_reorder = false;
  std::string out;
};

Matrix read_column(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw NotFound("cannot open " + path);
  std::vector<double> v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw FormatError(path + ": expected one number per line, got \"" + line + "\"");
    }
  }
  Matrix x(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = v[i];
  return x;
}

int cmd_simulate(const SimulateArgs& a) {
  DynamicsSpec dyn;
  dyn.law = parse_law(a.law);
  const Sampling mode = a.sampling == "irregular" ? Sampling::irregular
                        : a.sampling == "regular" ? Sampling::regular
                                                  : throw InvalidArgument(
                                                        "--sampling must be irregular or regular");
  if (a.count < 1) throw InvalidArgument("--count must be positive");

  Graph g;
  double T = a.T;
  if (a.graph.empty()) {
    const Family family = parse_family(a.family);
    g = make_network(family, a.n, derive_seed(a.seed, 0));
    if (!a.no_reorder && family != Family::grid) {
      g = g.relabeled(greedy_modularity_reorder(g).inverse());
    }
    if (T == 0.0) T = default_terminal_time(dyn.law, family);
  } else {
    g = load_edge_list(a.graph);
    if (!a.no_reorder) g = g.relabeled(greedy_modularity_reorder(g).inverse());
    if (T == 0.0) T = 5.0;
  }
  if (!(T > 0.0)) throw InvalidArgument("--T must be positive");
  const int side = integer_side(g.num_nodes());
  Matrix x0;
  if (!a.x0.empty()) {
    x0 = read_column(a.x0);
    if (x0.rows() != g.num_nodes()) throw FormatError("--x0 length differs from the node count");
  } else {
    if (side < 1) throw InvalidArgument("the default initial state needs a perfect-square node count");
    x0 = default_initial_state(side);
  }
  if (a.frames && side < 1) throw InvalidArgument("--frames needs a perfect-square node count");

  const std::vector<double> times = sample_times(mode, a.count, T, derive_seed(a.seed, 1));
  const Trajectory truth = simulate_truth(g, dyn, x0, times);
  Trajectory full;
  full.times.push_back(0.0);
  full.states.push_back(x0);
  full.times.insert(full.times.end(), truth.times.begin(), truth.times.end());
  full.states.insert(full.states.end(), truth.states.begin(), truth.states.end());

  OutputDir out(a.out);
  std::ostringstream graph_text, traj_text;
  write_edge_list(graph_text, g);
  out.write("graph.edgelist", graph_text.str());
  write_trajectory_csv(traj_text, full);
  out.write("trajectory.csv", traj_text.str());
  if (a.frames) {
    std::ostringstream index;
    index << "frame,t\n";
    for (std::size_t k = 0; k < full.states.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frames/frame_%04zu.csv", k);
      std::ostringstream os;
      const Matrix& x = full.states[k];
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) os << (c ? "," : "") << fmt(x(r * side + c, 0));
        os << '\n';
      }
      out.write(name, os.str());
      index << k << ',' << fmt(full.times[k]) << '\n';
    }
    out.write("frames/index.csv", index.str());
  }
  json cfg{{"command", "simulate"}, {"law", to_string(dyn.law)}, {"T", T},
           {"count", a.count},      {"sampling", a.sampling},   {"seed", a.seed},
           {"frames", a.frames},    {"reorder", !a.no_reorder}};
  if (a.graph.empty()) {
    cfg["family"] = a.family;
    cfg["n"] = a.n;
  } else {
    cfg["graph"] = a.graph;
  }
  if (!a.x0.empty()) cfg["x0"] = a.x0;
  out.write("config.json", dump(cfg));
  out.log(std::to_string(full.states.size()) + " snapshots on " + std::to_string(g.num_nodes()) +
          " nodes");
  out.commit();
  return kOk;
}

// ---- train / eval ---------------------------------------------------------------

int cmd_train(PlanFlags& f) {
  finish_plan_flags(f);
  const ExperimentPlan plan = f.plan.resolved();
  plan.validate();
  if (plan.task == Task::classify && plan.dataset != "sbm") load_bundle(plan.dataset);

  OutputDir out(f.out);
  out.write("config.json", dump(to_json(plan)));
  std::mutex mu;
  const RunResult r = run_plan(plan, f.jobs, [&](const RunRecord& rec) {
    std::lock_guard lock(mu);
    progress(f, out, describe(rec));
  });
  if (r.failures == plan.run_count) {
    throw NumericError("all " + std::to_string(r.failures) + " runs failed; first: " +
                       r.runs.front().failure);
  }
  for (const RunRecord& rec : r.runs) write_run_artifacts(out, run_dir(rec.index), rec);
  out.write("results.json", dump(to_json(r)));
  out.write("results.csv", to_csv(r));
  std::ostringstream wall;
  wall << "wall_seconds " << r.wall_seconds;
  progress(f, out, wall.str());
  out.commit();
  return kOk;
}

struct EvalArgs {
  std::string run;
  std::vector<int> index;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path root(a.run);
  const ExperimentPlan plan = plan_from_json(read_json(root / "config.json")).resolved();
  plan.validate();
  std::vector<int> which = a.index;
  if (which.empty()) {
    for (int i = 0; i < plan.run_count; ++i) which.push_back(i);
  }
  std::optional<LabeledGraphBundle> bundle;
  if (plan.task == Task::classify && plan.dataset != "sbm") bundle = load_bundle(plan.dataset);

  json runs = json::array();
  for (int i : which) {
    if (i < 0 || i >= plan.run_count) throw InvalidArgument("run index out of range");
    const fs::path dir = root / run_dir(i);
    const json meta = read_json(dir / "run.json");
    if (meta.value("failed", false)) continue;
    const std::uint64_t seed = meta.at("seed").get<std::uint64_t>();
    const ModelSpec spec = model_spec_from_json(read_json(dir / "model.json"));
    const ModelParams params = load_params((dir / "model.ckpt").string());
    std::map<std::string, double> metrics;
    if (plan.task == Task::classify) {
      const LabeledGraphBundle data = bundle ? *bundle : make_classify_data(plan, seed);
      const Matrix logits = classifier_logits(spec, params, data, plan.row_normalize);
      metrics["test_accuracy"] = accuracy(logits, data.labels, data.test);
      metrics["val_accuracy"] = accuracy(logits, data.labels, data.val);
    } else {
      const DynamicsData data = make_dynamics_data(plan, seed);
      metrics = evaluate_dynamics(plan, data, spec, params);
    }
    json m = json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    runs.push_back({{"index", i}, {"seed", seed}, {"metrics", m}});
  }
  const json result{{"run", a.run}, {"runs", runs}};
  if (!a.out.empty()) {
    OutputDir out(a.out);
    out.write("eval.json", dump(result));
    out.commit();
  }
  std::cout << dump(result);
  return kOk;
}

// ---- reproduce ------------------------------------------------------------------

struct Cell {
  Law law;
  Family family;
};

const std::vector<Family> kFamilies{Family::grid, Family::random, Family::power_law,
                                    Family::small_world, Family::community};
const std::vector<Law> kLaws{Law::heat, Law::mutualistic, Law::gene};

std::vector<Cell> parse_cells(const std::vector<std::string>& specs) {
  std::vector<Cell> cells;
  if (specs.empty()) {
    for (Law l : kLaws) {
      for (Family fam : kFamilies) cells.push_back({l, fam});
    }
    return cells;
  }
  for (const std::string& s : specs) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw InvalidArgument("--cell expects law:family, got " + s);
    cells.push_back({parse_law(s.substr(0, colon)), parse_family(s.substr(colon + 1))});
  }
  return cells;
}

std::string cell_text(const RunResult& r, const std::string& metric, double scale) {
  const auto it = r.aggregates.find(metric);
  std::string text;
  if (it != r.aggregates.end()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", scale * it->second.mean, scale * it->second.std);
    text = buf;
  } else {
    text = "n/a";
  }
  if (r.failures > 0) text += " (" + std::to_string(r.failures) + " failed)";
  return text;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

struct ReproduceArgs {
  std::string suite;
  std::vector<std::string> cells;
  std::vector<std::string> variants;
};

int cmd_reproduce(const ReproduceArgs& a, PlanFlags& f) {
  finish_plan_flags(f);
  const ExperimentPlan base = f.plan;

  struct Job {
    std::string row_label;
    std::string column;
    std::string file;
    ExperimentPlan plan;
  };
  std::vector<Job> jobs;
  std::vector<std::string> columns;
  std::string metric;
  double scale = 100.0;
  std::string header_first = "dynamics";

  auto variant_filter = [&](std::vector<Variant> defaults) {
    if (a.variants.empty()) return defaults;
    std::vector<Variant> chosen;
    for (const std::string& v : a.variants) chosen.push_back(parse_variant(v));
    return chosen;
  };

  if (a.suite == "table1" || a.suite == "table2" || a.suite == "table4") {
    const bool regular = a.suite == "table4";
    metric = a.suite == "table2" ? "interpolation" : "extrapolation";
    const std::vector<Variant> variants = variant_filter(
        regular ? std::vector<Variant>{Variant::lstm_gnn, Variant::gru_gnn, Variant::rnn_gnn,
                                       Variant::ndcn}
                : std::vector<Variant>{Variant::no_encode, Variant::no_graph, Variant::no_control,
                                       Variant::ndcn});
    for (Family fam : kFamilies) columns.push_back(to_string(fam));
    for (const Cell& c : parse_cells(a.cells)) {
      for (Variant v : variants) {
        Job j;
        j.plan = base;
        j.plan.task = regular ? Task::regular : Task::continuous;
        j.plan.law = c.law;
        j.plan.family = c.family;
        j.plan.variant = v;
        j.row_label = to_string(c.law) + "," + to_string(v);
        j.column = to_string(c.family);
        j.file = "cells/" + to_string(c.law) + "_" + to_string(c.family) + "_" + to_string(v) + ".json";
        jobs.push_back(std::move(j));
      }
    }
  } else if (a.suite == "table5-synthetic" || a.suite == "table5-cora") {
    if (!a.cells.empty()) throw InvalidArgument("--cell applies to the dynamics tables only");
    metric = "test_accuracy";
    header_first = "dataset";
    Job j;
    j.plan = base;
    j.plan.task = Task::classify;
    j.plan.variant = Variant::ndcn_classify;
    if (a.suite == "table5-cora") {
      if (j.plan.dataset == "sbm") j.plan.dataset = "data/cora";
      if (!fs::exists(fs::path(j.plan.dataset) / "graph.edgelist")) {
        throw NotFound("no Cora bundle at " + j.plan.dataset +
                       "; convert the Planetoid files with tools/planetoid_to_bundle.py and pass "
                       "--dataset DIR");
      }
      if (j.plan.T_grid.empty()) j.plan.T_grid = {1.2};
      if (j.plan.alpha_grid.empty()) j.plan.alpha_grid = {0.0};
      j.row_label = "cora";
    } else {
      j.plan.dataset = "sbm";
      j.row_label = "sbm";
    }
    j.column = "ndcn";
    columns.push_back("ndcn");
    j.file = "cells/" + j.row_label + ".json";
    jobs.push_back(std::move(j));
  } else {
    throw InvalidArgument("unknown suite " + a.suite +
                          " (table1, table2, table4, table5-synthetic, table5-cora)");
  }
  for (Job& j : jobs) {
    j.plan = j.plan.resolved();
    j.plan.validate();
  }

  OutputDir out(f.out);
  json cfg{{"command", "reproduce"}, {"suite", a.suite}, {"base", to_json(base)}};
  out.write("config.json", dump(cfg));

  std::map<std::string, std::map<std::string, std::string>> table;
  std::vector<std::string> row_order;
  json all = json::array();
  for (const Job& j : jobs) {
    progress(f, out, "cell " + j.row_label + " " + j.column);
    std::mutex mu;
    const RunResult r = run_plan(j.plan, f.jobs, [&](const RunRecord& rec) {
      std::lock_guard lock(mu);
      progress(f, out, "  " + describe(rec));
    });
    const json rj = to_json(r);
    out.write(j.file, dump(rj));
    all.push_back(rj);
    if (!table.count(j.row_label)) row_order.push_back(j.row_label);
    table[j.row_label][j.column] = cell_text(r, metric, a.suite.rfind("table5", 0) == 0 ? 100.0 : scale);
  }

  std::ostringstream csv;
  csv << header_first;
  if (header_first == "dynamics") csv << ",model";
  for (const std::string& c : columns) csv << ',' << c;
  csv << '\n';
  for (const std::string& row : row_order) {
    csv << row;
    for (const std::string& c : columns) {
      const auto it = table[row].find(c);
      csv << ',' << (it == table[row].end() ? "" : csv_field(it->second));
    }
    csv << '\n';
  }
  out.write("table.csv", csv.str());
  out.write("results.json", dump(json{{"suite", a.suite}, {"metric", metric}, {"cells", all}}));
  out.commit();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees many short-lived matrices; keep freed memory
  // in the heap instead of returning it to the OS after every epoch.
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_MMAP_THRESHOLD, 32 << 20);

  CLI::App app{"Neural dynamics on complex networks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write a synthetic network as an edge list");
  generate->add_option("--family", gen.family, "grid, random|er, power_law|ba, small_world|ws, community")
      ->required();
  generate->add_option("--n", gen.n, "node count");
  generate->add_option("--seed", gen.seed);
  generate->add_option("--p", gen.p, "edge probability (random) or shortcut probability (small_world)");
  generate->add_option("--m", gen.m, "edges per arrival (power_law)");
  generate->add_option("--k", gen.k, "ring neighbors per side (small_world)");
  generate->add_option("--p-in", gen.p_in, "within-block probability (community)");
  generate->add_option("--p-out", gen.p_out, "between-block probability (community)");
  generate->add_option("--out", gen.out, "output directory")->required();

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "simulate a dynamics law on a network");
  simulate->add_option("--law", sim.law, "heat, mutualistic or gene");
  simulate->add_option("--family", sim.family, "generated network family");
  simulate->add_option("--n", sim.n, "node count of the generated network");
  simulate->add_option("--graph", sim.graph, "edge-list file used instead of a generated network");
  simulate->add_option("--x0", sim.x0, "initial state, one value per line");
  simulate->add_option("--T", sim.T, "terminal time (default per law and family)");
  simulate->add_option("--count", sim.count, "sampled snapshots");
  simulate->add_option("--sampling", sim.sampling, "irregular or regular");
  simulate->add_option("--seed", sim.seed);
  simulate->add_flag("--frames", sim.frames, "also write each snapshot as a square CSV matrix");
  simulate->add_flag("--no-reorder", sim.no_reorder, "keep generator node labels");
  simulate->add_option("--out", sim.out, "output directory")->required();

  PlanFlags train_flags;
  auto* train = app.add_subcommand("train", "train models under an experiment plan");
  add_plan_options(*train, train_flags, true);
  train->add_option("--out", train_flags.out, "output directory");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "re-evaluate the checkpoints of a train output");
  eval->add_option("--run", ev.run, "train output directory")->required();
  eval->add_option("--index", ev.index, "run indices (default all)");
  eval->add_option("--out", ev.out, "optional output directory for eval.json");

  ReproduceArgs rep;
  PlanFlags rep_flags;
  rep_flags.plan.run_count = 3;
  auto* reproduce = app.add_subcommand("reproduce", "run an experiment table");
  reproduce->add_option("suite", rep.suite, "table1, table2, table4, table5-synthetic, table5-cora")
      ->required();
  reproduce->add_option("--cell", rep.cells, "law:family, repeatable (default all)");
  reproduce->add_option("--model", rep.variants, "variant rows to run, repeatable (default all)");
  add_plan_options(*reproduce, rep_flags, false);
  reproduce->add_option("--out", rep_flags.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*simulate) return cmd_simulate(sim);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(ev);
    if (*reproduce) return cmd_reproduce(rep, rep_flags);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const NotFound& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const DegenerateInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const StiffnessError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
