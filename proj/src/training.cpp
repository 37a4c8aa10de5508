#include "ndcn/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "ndcn/errors.hpp"
#include "ndcn/rng.hpp"

namespace ndcn {
namespace {

// Sub-seed streams of a run seed.
enum Stream : std::uint64_t { kGraph = 0, kTimes = 1, kSplit = 2, kInit = 3, kData = 4 };

constexpr Family kFamilies[] = {Family::grid, Family::random, Family::power_law,
                                Family::small_world, Family::community};

int family_index(Family f) { return static_cast<int>(f); }

int integer_sqrt(int n) {
  int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return s * s == n ? s : -1;
}

std::vector<double> default_T_grid() {
  std::vector<double> g;
  for (int i = 5; i <= 15; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 5; ++i) g.push_back(i / 5.0);
  return g;
}

// loss + weight_decay * sum of squared parameter norms.
DiffMatrix with_penalty(const DiffMatrix& loss, const BoundParams& p, double weight_decay) {
  if (weight_decay == 0.0) return loss;
  DiffMatrix total;
  for (const DiffMatrix& leaf : p.leaves()) {
    DiffMatrix sq = ad::squared_norm(leaf);
    total = total.tape() ? ad::add(total, sq) : sq;
  }
  return ad::add(loss, ad::scale(total, weight_decay));
}

// Full-batch Adam on `loss_fn(tape, params)`. Returns the parameters with the
// lowest data loss seen.
template <class LossFn>
ModelParams fit(ModelParams params, int epochs, double lr, double weight_decay, bool keep_best,
                TrainStats& stats, LossFn&& loss_fn) {
  AdamConfig cfg;
  cfg.lr = lr;
  AdamState state = adam_init(params);
  ModelParams best = params;
  stats = {};
  Tape tape;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    tape.clear();
    BoundParams bound(tape, params, true);
    const DiffMatrix loss = loss_fn(tape, bound);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
      throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    if (epoch == 0 || value < stats.best_loss) {
      stats.best_loss = value;
      if (keep_best) best = params;
    }
    if (epoch == 0) stats.first_loss = value;
    const Gradients grads = tape.backward(with_penalty(loss, bound, weight_decay));
    std::vector<Matrix> g;
    g.reserve(bound.leaves().size());
    for (const DiffMatrix& leaf : bound.leaves()) g.push_back(grads.of(leaf));
    adam_step(params, g, state, cfg);
    stats.epochs = epoch + 1;
  }
  return keep_best ? best : params;
}

std::vector<Matrix> values_of(std::span<const DiffMatrix> xs) {
  std::vector<Matrix> out;
  out.reserve(xs.size());
  for (const DiffMatrix& x : xs) out.push_back(x.value());
  return out;
}

template <class T>
std::vector<T> pick(const std::vector<T>& xs, const std::vector<int>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(xs[i]);
  return out;
}

void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct RunOutput {
  std::map<std::string, double> metrics;
  ModelSpec spec;
  ModelParams params;
};

using RunFn = std::function<RunOutput(int index, std::uint64_t seed)>;

RunResult run_all(const ExperimentPlan& plan, int jobs, const RunCallback& cb, const RunFn& fn) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.plan = plan;
  result.runs.resize(plan.run_count);
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (int i = next++; i < plan.run_count; i = next++) {
      RunRecord rec;
      rec.index = i;
      rec.seed = plan.seed + static_cast<std::uint64_t>(i);
      try {
        RunOutput out = fn(i, rec.seed);
        rec.metrics = std::move(out.metrics);
        rec.spec = std::move(out.spec);
        rec.params = std::move(out.params);
      } catch (const StiffnessError& e) {
        rec.failed = true;
        rec.failure = e.what();
      } catch (const NumericError& e) {
        rec.failed = true;
        rec.failure = e.what();
      } catch (const DegenerateInput& e) {
        rec.failed = true;
        rec.failure = e.what();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        continue;
      }
      std::lock_guard lock(mu);
      result.runs[i] = rec;
      if (cb) cb(rec);
    }
  };
  const int workers = std::clamp(jobs, 1, plan.run_count);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::map<std::string, std::vector<double>> per_metric;
  for (const RunRecord& r : result.runs) {
    if (r.failed) {
      ++result.failures;
      continue;
    }
    for (const auto& [k, v] : r.metrics) per_metric[k].push_back(v);
  }
  for (const auto& [k, vs] : per_metric) result.aggregates[k] = aggregate(vs);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

// ---- losses and metrics ----------------------------------------------------

DiffMatrix l1_loss(std::span<const DiffMatrix> pred, std::span<const Matrix> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw InvalidArgument("l1_loss: snapshot counts differ or are zero");
  }
  std::vector<DiffMatrix> terms;
  terms.reserve(pred.size());
  for (std::size_t s = 0; s < pred.size(); ++s) terms.push_back(ad::mean_abs_diff(pred[s], truth[s]));
  std::vector<double> coeffs(terms.size() - 1, 1.0);
  std::vector<const DiffMatrix*> rest;
  for (std::size_t s = 1; s < terms.size(); ++s) rest.push_back(&terms[s]);
  const DiffMatrix total = ad::lincomb(terms[0], coeffs, rest);
  return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

DiffMatrix l1_loss(const TrajectoryOf<DiffMatrix>& pred, const Trajectory& truth) {
  if (pred.times != truth.times) throw InvalidArgument("l1_loss: time stamps differ");
  return l1_loss(std::span<const DiffMatrix>(pred.states), std::span<const Matrix>(truth.states));
}

double normalized_l1(std::span<const Matrix> pred, std::span<const Matrix> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw InvalidArgument("normalized_l1: snapshot counts differ or are zero");
  }
  double total = 0.0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].rows() != truth[s].rows() || pred[s].cols() != truth[s].cols()) {
      throw InvalidArgument("normalized_l1: shape mismatch");
    }
    const double scale = truth[s].cwiseAbs().mean();
    if (!(scale > 0.0)) throw DegenerateInput("normalized_l1: zero-mean truth snapshot");
    total += (pred[s] - truth[s]).cwiseAbs().mean() / scale;
  }
  return total / static_cast<double>(pred.size());
}

double normalized_l1(const Trajectory& pred, const Trajectory& truth) {
  if (pred.times != truth.times) throw InvalidArgument("normalized_l1: time stamps differ");
  return normalized_l1(std::span<const Matrix>(pred.states), std::span<const Matrix>(truth.states));
}

double accuracy(const Matrix& logits, const std::vector<int>& labels,
                const std::vector<int>& ids) {
  if (ids.empty()) throw InvalidArgument("accuracy over an empty id set");
  int hits = 0;
  for (int i : ids) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels.at(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

// ---- optimizer ---------------------------------------------------------------

AdamState adam_init(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, m] : params.entries()) {
    s.m.push_back(Matrix::Zero(m.rows(), m.cols()));
    s.v.push_back(Matrix::Zero(m.rows(), m.cols()));
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& cfg) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size()) {
    throw InvalidArgument("adam_step: parameter/gradient count mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Matrix& p = entries[k].second;
    const Matrix& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw InvalidArgument("adam_step: gradient shape differs for " + entries[k].first);
    }
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.lr * (state.m[k].array() / c1) /
                 ((state.v[k].array() / c2).sqrt() + cfg.eps);
  }
}

Summary aggregate(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("aggregate of no values");
  Summary s;
  s.count = static_cast<int>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.count - 1));
  }
  return s;
}

// ---- plans -------------------------------------------------------------------

Task parse_task(const std::string& name) {
  if (name == "continuous") return Task::continuous;
  if (name == "regular") return Task::regular;
  if (name == "classify") return Task::classify;
  throw InvalidArgument("unknown task: " + name);
}

std::string to_string(Task t) {
  switch (t) {
    case Task::continuous:
      return "continuous";
    case Task::regular:
      return "regular";
    case Task::classify:
      return "classify";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "grid") return Family::grid;
  if (name == "random" || name == "er") return Family::random;
  if (name == "power_law" || name == "ba") return Family::power_law;
  if (name == "small_world" || name == "ws") return Family::small_world;
  if (name == "community") return Family::community;
  throw InvalidArgument("unknown network family: " + name);
}

std::string to_string(Family f) {
  static const char* names[] = {"grid", "random", "power_law", "small_world", "community"};
  return names[family_index(f)];
}

Graph make_network(Family family, int n, std::uint64_t seed) {
  switch (family) {
    case Family::grid: {
      const int side = integer_sqrt(n);
      if (side < 2) throw InvalidArgument("grid needs a perfect-square node count >= 4");
      return gen_grid8(side);
    }
    case Family::random:
      return gen_erdos_renyi(n, 0.1, seed);
    case Family::power_law:
      return gen_barabasi_albert(n, 5, seed);
    case Family::small_world:
      return gen_newman_watts(n, 5, 0.5, seed);
    case Family::community:
      return gen_random_partition(default_community_sizes(n), 0.25, 0.01, seed).graph;
  }
  throw InvalidArgument("unknown family");
}

double default_terminal_time(Law law, Family family) {
  if (law != Law::heat) return 5.0;
  static const double heat_T[] = {5.0, 0.1, 0.75, 2.0, 0.2};
  return heat_T[family_index(family)];
}

double default_weight_decay(Task task, Law law, Family family, Variant variant) {
  if (task == Task::classify) return 0.024;
  if (is_temporal(variant)) return 1e-3;
  // rows: heat, mutualistic, gene; columns: grid, random, power_law, small_world, community
  static const double continuous[3][5] = {{1e-3, 1e-6, 1e-3, 1e-3, 1e-5},
                                          {1e-2, 1e-4, 1e-4, 1e-4, 1e-4},
                                          {1e-4, 1e-4, 1e-4, 1e-4, 1e-4}};
  static const double regular[3][5] = {{1e-3, 1e-6, 1e-3, 1e-3, 1e-5},
                                       {1e-2, 1e-3, 1e-4, 1e-4, 1e-4},
                                       {1e-4, 1e-4, 1e-4, 1e-3, 1e-3}};
  const auto& table = task == Task::regular ? regular : continuous;
  return table[static_cast<int>(law)][family_index(family)];
}

ExperimentPlan ExperimentPlan::resolved() const {
  ExperimentPlan p = *this;
  if (p.task == Task::classify) {
    p.variant = Variant::ndcn_classify;
    if (p.epochs == 0) p.epochs = 100;
    if (p.hidden == 0) p.hidden = 256;
    if (p.T_grid.empty()) p.T_grid = default_T_grid();
    if (p.alpha_grid.empty()) p.alpha_grid = default_alpha_grid();
  } else {
    if (p.terminal_time == 0.0) p.terminal_time = default_terminal_time(p.law, p.family);
    if (p.snapshots == 0) p.snapshots = p.task == Task::continuous ? 120 : 100;
    if (p.interp_count < 0) p.interp_count = p.task == Task::continuous ? 20 : 0;
    if (p.epochs == 0) p.epochs = 2000;
    if (p.hidden == 0) p.hidden = is_temporal(p.variant) ? 10 : 20;
  }
  if (p.weight_decay < 0.0) p.weight_decay = default_weight_decay(p.task, p.law, p.family, p.variant);
  return p;
}

void ExperimentPlan::validate() const {
  if (run_count < 1) throw InvalidArgument("run_count must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (hidden < 1) throw InvalidArgument("hidden must be >= 1");
  if (task == Task::classify) {
    if (variant != Variant::ndcn_classify) throw InvalidArgument("classify needs ndcn_classify");
    if (T_grid.empty() || alpha_grid.empty()) throw InvalidArgument("empty search grid");
    for (double T : T_grid) {
      if (!(T > 0.0)) throw InvalidArgument("T grid values must be positive");
    }
    for (double a : alpha_grid) {
      if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("alpha grid values must lie in [0, 1]");
    }
    if (!(classify_rtol > 0.0 && classify_atol > 0.0)) throw InvalidArgument("bad tolerances");
    if (dataset.empty()) throw InvalidArgument("dataset must be 'sbm' or a bundle directory");
    return;
  }
  if (task == Task::continuous && !is_continuous(variant)) {
    throw InvalidArgument("continuous task runs ndcn or its ablations, not " + to_string(variant));
  }
  if (task == Task::regular && !is_continuous(variant) && !is_temporal(variant)) {
    throw InvalidArgument("regular task cannot run " + to_string(variant));
  }
  if (integer_sqrt(nodes) < 2) {
    throw InvalidArgument("nodes must be a perfect square >= 4 (initial state lives on a grid)");
  }
  if (!(terminal_time > 0.0)) throw InvalidArgument("terminal_time must be positive");
  if (train_count < 1 || interp_count < 0) throw InvalidArgument("bad split counts");
  if (train_count + interp_count >= snapshots) {
    throw InvalidArgument("split leaves no extrapolation snapshots");
  }
  if (task == Task::regular && interp_count != 0) {
    throw InvalidArgument("regular task has no interpolation split");
  }
  if (euler_substeps < 1) throw InvalidArgument("euler_substeps must be >= 1");
}

nlohmann::json to_json(const ExperimentPlan& p) {
  return {{"task", to_string(p.task)},
          {"law", to_string(p.law)},
          {"family", to_string(p.family)},
          {"variant", to_string(p.variant)},
          {"nodes", p.nodes},
          {"terminal_time", p.terminal_time},
          {"snapshots", p.snapshots},
          {"train_count", p.train_count},
          {"interp_count", p.interp_count},
          {"seed", p.seed},
          {"run_count", p.run_count},
          {"lr", p.lr},
          {"epochs", p.epochs},
          {"weight_decay", p.weight_decay},
          {"hidden", p.hidden},
          {"euler_substeps", p.euler_substeps},
          {"reorder_nodes", p.reorder_nodes},
          {"dataset", p.dataset},
          {"sbm_nodes", p.sbm_nodes},
          {"sbm_blocks", p.sbm_blocks},
          {"sbm_p_in", p.sbm_p_in},
          {"sbm_p_out", p.sbm_p_out},
          {"sbm_noise", p.sbm_noise},
          {"sbm_label_fraction", p.sbm_label_fraction},
          {"T_grid", p.T_grid},
          {"alpha_grid", p.alpha_grid},
          {"row_normalize", p.row_normalize},
          {"classify_rtol", p.classify_rtol},
          {"classify_atol", p.classify_atol}};
}

ExperimentPlan plan_from_json(const nlohmann::json& j, ExperimentPlan p) {
  if (!j.is_object()) throw InvalidArgument("plan must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "task") p.task = parse_task(v.get<std::string>());
      else if (key == "law") p.law = parse_law(v.get<std::string>());
      else if (key == "family") p.family = parse_family(v.get<std::string>());
      else if (key == "variant") p.variant = parse_variant(v.get<std::string>());
      else if (key == "nodes") p.nodes = v.get<int>();
      else if (key == "terminal_time") p.terminal_time = v.get<double>();
      else if (key == "snapshots") p.snapshots = v.get<int>();
      else if (key == "train_count") p.train_count = v.get<int>();
      else if (key == "interp_count") p.interp_count = v.get<int>();
      else if (key == "seed") p.seed = v.get<std::uint64_t>();
      else if (key == "run_count") p.run_count = v.get<int>();
      else if (key == "lr") p.lr = v.get<double>();
      else if (key == "epochs") p.epochs = v.get<int>();
      else if (key == "weight_decay") p.weight_decay = v.get<double>();
      else if (key == "hidden") p.hidden = v.get<int>();
      else if (key == "euler_substeps") p.euler_substeps = v.get<int>();
      else if (key == "reorder_nodes") p.reorder_nodes = v.get<bool>();
      else if (key == "dataset") p.dataset = v.get<std::string>();
      else if (key == "sbm_nodes") p.sbm_nodes = v.get<int>();
      else if (key == "sbm_blocks") p.sbm_blocks = v.get<int>();
      else if (key == "sbm_p_in") p.sbm_p_in = v.get<double>();
      else if (key == "sbm_p_out") p.sbm_p_out = v.get<double>();
      else if (key == "sbm_noise") p.sbm_noise = v.get<double>();
      else if (key == "sbm_label_fraction") p.sbm_label_fraction = v.get<double>();
      else if (key == "T_grid") p.T_grid = v.get<std::vector<double>>();
      else if (key == "alpha_grid") p.alpha_grid = v.get<std::vector<double>>();
      else if (key == "row_normalize") p.row_normalize = v.get<bool>();
      else if (key == "classify_rtol") p.classify_rtol = v.get<double>();
      else if (key == "classify_atol") p.classify_atol = v.get<double>();
      else throw InvalidArgument("unknown plan key: " + key);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("plan key '" + key + "': " + e.what());
    }
  }
  return p;
}

nlohmann::json to_json(const RunResult& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const RunRecord& rec : r.runs) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : rec.metrics) m[k] = v;
    runs.push_back({{"index", rec.index},
                    {"seed", rec.seed},
                    {"failed", rec.failed},
                    {"failure", rec.failure},
                    {"metrics", m}});
  }
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [k, s] : r.aggregates) {
    agg[k] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
  }
  return {{"plan", to_json(r.plan)}, {"runs", runs}, {"aggregates", agg}, {"failures", r.failures}};
}

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"variant", to_string(spec.variant)},
          {"d_in", spec.d_in},
          {"d_hidden", spec.d_hidden},
          {"d_out", spec.d_out},
          {"d_gcn", spec.d_gcn},
          {"alpha", spec.alpha},
          {"terminal_time", spec.terminal_time},
          {"flow_init_gain", spec.flow_init_gain},
          {"solver",
           {{"method", to_string(spec.solver.method)},
            {"step", spec.solver.step},
            {"rtol", spec.solver.rtol},
            {"atol", spec.solver.atol},
            {"max_steps", spec.solver.max_steps}}}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("model spec must be a JSON object");
  ModelSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "variant") s.variant = parse_variant(v.get<std::string>());
      else if (key == "d_in") s.d_in = v.get<int>();
      else if (key == "d_hidden") s.d_hidden = v.get<int>();
      else if (key == "d_out") s.d_out = v.get<int>();
      else if (key == "d_gcn") s.d_gcn = v.get<int>();
      else if (key == "alpha") s.alpha = v.get<double>();
      else if (key == "terminal_time") s.terminal_time = v.get<double>();
      else if (key == "flow_init_gain") s.flow_init_gain = v.get<double>();
      else if (key == "solver") {
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "method") s.solver.method = parse_method(sv.get<std::string>());
          else if (sk == "step") s.solver.step = sv.get<double>();
          else if (sk == "rtol") s.solver.rtol = sv.get<double>();
          else if (sk == "atol") s.solver.atol = sv.get<double>();
          else if (sk == "max_steps") s.solver.max_steps = sv.get<long>();
          else throw InvalidArgument("unknown solver key: " + sk);
        }
      } else {
        throw InvalidArgument("unknown model spec key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad model spec value: ") + e.what());
  }
  s.validate();
  return s;
}

std::string to_csv(const RunResult& r) {
  std::set<std::string> names;
  for (const RunRecord& rec : r.runs) {
    for (const auto& [k, v] : rec.metrics) names.insert(k);
  }
  std::ostringstream os;
  os << "run,seed,failed";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  char buf[32];
  for (const RunRecord& rec : r.runs) {
    os << rec.index << ',' << rec.seed << ',' << (rec.failed ? 1 : 0);
    for (const auto& n : names) {
      os << ',';
      auto it = rec.metrics.find(n);
      if (it != rec.metrics.end()) {
        std::snprintf(buf, sizeof buf, "%.17g", it->second);
        os << buf;
      }
    }
    os << '\n';
  }
  return os.str();
}

// ---- dynamics tasks ------------------------------------------------------------

DynamicsData make_dynamics_data(const ExperimentPlan& plan, std::uint64_t run_seed) {
  DynamicsData d;
  d.graph = make_network(plan.family, plan.nodes, derive_seed(run_seed, kGraph));
  if (plan.reorder_nodes && plan.family != Family::grid) {
    d.graph = d.graph.relabeled(greedy_modularity_reorder(d.graph).inverse());
  }
  d.x0 = default_initial_state(integer_sqrt(plan.nodes));
  const Sampling mode = plan.task == Task::continuous ? Sampling::irregular : Sampling::regular;
  const std::vector<double> times =
      sample_times(mode, plan.snapshots, plan.terminal_time, derive_seed(run_seed, kTimes));
  DynamicsSpec dyn;
  dyn.law = plan.law;
  d.truth = simulate_truth(d.graph, dyn, d.x0, times);

  const int S = plan.snapshots;
  if (plan.task == Task::continuous) {
    d.model_times = times;
    std::vector<int> pool(plan.train_count + plan.interp_count);
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(derive_seed(run_seed, kSplit));
    shuffle(pool, rng);
    d.train_idx.assign(pool.begin(), pool.begin() + plan.train_count);
    d.interp_idx.assign(pool.begin() + plan.train_count, pool.end());
    std::sort(d.train_idx.begin(), d.train_idx.end());
    std::sort(d.interp_idx.begin(), d.interp_idx.end());
  } else {
    // Unit spacing between snapshots: sample k sits at model time k.
    for (int k = 1; k <= S; ++k) d.model_times.push_back(k);
    for (int k = 0; k < plan.train_count; ++k) d.train_idx.push_back(k);
  }
  for (int k = plan.train_count + plan.interp_count; k < S; ++k) d.extrap_idx.push_back(k);
  return d;
}

ModelSpec model_spec_for(const ExperimentPlan& plan, const DynamicsData& data) {
  ModelSpec s;
  s.variant = plan.variant;
  s.d_in = s.d_out = static_cast<int>(data.x0.cols());
  s.d_hidden = plan.hidden;
  s.terminal_time = data.model_times.back();
  s.solver.method = Method::euler;
  s.solver.step = plan.task == Task::regular
                      ? 1.0
                      : plan.terminal_time / plan.snapshots / plan.euler_substeps;
  // Unit-step time on the regular task stretches the horizon by snapshots / T;
  // shrinking W by the same factor keeps the initial flow of the continuous task.
  if (plan.task == Task::regular) s.flow_init_gain = plan.terminal_time / plan.snapshots;
  return s;
}

TrainedModel train_dynamics(const ExperimentPlan& plan, const DynamicsData& data,
                            std::uint64_t run_seed) {
  TrainedModel out;
  out.spec = model_spec_for(plan, data);
  const DiffOp phi = model_operator(out.spec, data.graph);
  const std::vector<Matrix> train_truth = pick(data.truth.states, data.train_idx);
  ModelParams init = init_params(out.spec, derive_seed(run_seed, kInit));

  if (is_temporal(plan.variant)) {
    // Teacher forcing: x0, X1, ..., X(train-1) -> X1, ..., X(train).
    std::vector<Matrix> inputs{data.x0};
    for (int k = 0; k + 1 < plan.train_count; ++k) inputs.push_back(data.truth.states[k]);
    out.params = fit(std::move(init), plan.epochs, plan.lr, plan.weight_decay, true, out.stats,
                     [&](Tape&, const BoundParams& p) {
                       const auto pred = temporal_forward(out.spec, p, phi, inputs);
                       return l1_loss(pred, train_truth);
                     });
    return out;
  }
  // The forward covers every sample time up to the last training one so the
  // solver's step sequence matches evaluation over the full grid.
  const int last = data.train_idx.back();
  const std::vector<double> prefix(data.model_times.begin(), data.model_times.begin() + last + 1);
  out.params = fit(std::move(init), plan.epochs, plan.lr, plan.weight_decay, true, out.stats,
                   [&](Tape&, const BoundParams& p) {
                     const auto traj = ndcn_forward(out.spec, p, phi, data.x0, prefix);
                     return l1_loss(pick(traj.states, data.train_idx), train_truth);
                   });
  return out;
}

std::vector<Matrix> predict_dynamics(const ExperimentPlan& plan, const DynamicsData& data,
                                     const ModelSpec& spec, const ModelParams& params) {
  const DiffOp phi = model_operator(spec, data.graph);
  Tape tape;
  tape.set_check_finite(false);
  BoundParams p(tape, params, false);
  if (!is_temporal(spec.variant)) {
    const auto traj = ndcn_forward(spec, p, phi, data.x0, data.model_times);
    return values_of(traj.states);
  }
  const int S = static_cast<int>(data.truth.states.size());
  std::vector<Matrix> preds;
  preds.reserve(S);
  RecurrentState state = initial_recurrent_state(tape, spec, static_cast<int>(data.x0.rows()));
  for (int k = 0; k < S; ++k) {
    // Ground truth feeds the model up to the last training snapshot; later
    // inputs are the model's own predictions.
    const Matrix& input = k == 0 ? data.x0
                          : k - 1 < plan.train_count ? data.truth.states[k - 1]
                                                     : preds[k - 1];
    const DiffMatrix y = temporal_step(spec, p, phi, tape.constant(input), state);
    preds.push_back(y.value());
  }
  return preds;
}

std::map<std::string, double> evaluate_dynamics(const ExperimentPlan& plan,
                                                const DynamicsData& data, const ModelSpec& spec,
                                                const ModelParams& params) {
  const std::vector<Matrix> preds = predict_dynamics(plan, data, spec, params);
  std::map<std::string, double> m;
  m["extrapolation"] =
      normalized_l1(pick(preds, data.extrap_idx), pick(data.truth.states, data.extrap_idx));
  if (!data.interp_idx.empty()) {
    m["interpolation"] =
        normalized_l1(pick(preds, data.interp_idx), pick(data.truth.states, data.interp_idx));
  }
  return m;
}

namespace {

RunOutput dynamics_run(const ExperimentPlan& plan, std::uint64_t seed) {
  const DynamicsData data = make_dynamics_data(plan, seed);
  TrainedModel model = train_dynamics(plan, data, seed);
  auto m = evaluate_dynamics(plan, data, model.spec, model.params);
  m["first_loss"] = model.stats.first_loss;
  m["best_loss"] = model.stats.best_loss;
  m["param_count"] = static_cast<double>(param_count(model.spec));
  return {std::move(m), std::move(model.spec), std::move(model.params)};
}

}  // namespace

RunResult run_continuous(const ExperimentPlan& plan_in, int jobs, RunCallback cb) {
  const ExperimentPlan plan = plan_in.resolved();
  if (plan.task != Task::continuous) throw InvalidArgument("run_continuous needs a continuous plan");
  plan.validate();
  return run_all(plan, jobs, cb, [&](int, std::uint64_t seed) { return dynamics_run(plan, seed); });
}

RunResult run_regular(const ExperimentPlan& plan_in, int jobs, RunCallback cb) {
  const ExperimentPlan plan = plan_in.resolved();
  if (plan.task != Task::regular) throw InvalidArgument("run_regular needs a regular plan");
  plan.validate();
  return run_all(plan, jobs, cb, [&](int, std::uint64_t seed) { return dynamics_run(plan, seed); });
}

// ---- classification -------------------------------------------------------------

LabeledGraphBundle make_classify_data(const ExperimentPlan& plan, std::uint64_t run_seed) {
  if (plan.dataset == "sbm") {
    return gen_sbm_bundle(plan.sbm_nodes, plan.sbm_blocks, plan.sbm_p_in, plan.sbm_p_out,
                          plan.sbm_noise, plan.sbm_label_fraction, derive_seed(run_seed, kData));
  }
  return load_bundle(plan.dataset);
}

Matrix classifier_logits(const ModelSpec& spec, const ModelParams& params,
                         const LabeledGraphBundle& data, bool row_normalize) {
  const DiffOp phi = model_operator(spec, data.graph);
  Tape tape;
  BoundParams p(tape, params, false);
  const Matrix x = row_normalize ? row_normalized(data.features) : data.features;
  return classify_forward(spec, p, phi, x).value();
}

ClassifyOutcome train_classifier(const ExperimentPlan& plan, const LabeledGraphBundle& data,
                                 double T, double alpha, std::uint64_t run_seed) {
  if (data.train.empty() || data.val.empty() || data.test.empty()) {
    throw InvalidArgument("classification needs non-empty train, val and test masks");
  }
  ClassifyOutcome out;
  ModelSpec& s = out.spec;
  s.variant = Variant::ndcn_classify;
  s.d_in = static_cast<int>(data.features.cols());
  s.d_hidden = plan.hidden;
  s.d_out = data.num_classes;
  s.alpha = alpha;
  s.terminal_time = T;
  s.solver.method = Method::dopri5;
  s.solver.rtol = plan.classify_rtol;
  s.solver.atol = plan.classify_atol;
  s.validate();
  const DiffOp phi = model_operator(s, data.graph);
  const Matrix x = plan.row_normalize ? row_normalized(data.features) : data.features;
  const Matrix y = data.one_hot();
  const std::vector<bool> mask = data.mask(data.train);
  TrainStats stats;
  out.params = fit(init_params(s, derive_seed(run_seed, kInit)), plan.epochs, plan.lr,
                   plan.weight_decay, false, stats, [&](Tape&, const BoundParams& p) {
                     return ad::cross_entropy_masked(classify_forward(s, p, phi, x), y, mask);
                   });
  const Matrix logits = classifier_logits(s, out.params, data, plan.row_normalize);
  out.val_accuracy = accuracy(logits, data.labels, data.val);
  out.test_accuracy = accuracy(logits, data.labels, data.test);
  return out;
}

ClassifyOutcome select_classifier(const ExperimentPlan& plan, const LabeledGraphBundle& data,
                                  std::uint64_t run_seed) {
  // Ascending scan, strict improvement: ties keep the smaller T, then alpha.
  std::vector<double> Ts = plan.T_grid, alphas = plan.alpha_grid;
  std::sort(Ts.begin(), Ts.end());
  std::sort(alphas.begin(), alphas.end());
  std::optional<ClassifyOutcome> best;
  std::string skipped;
  for (double T : Ts) {
    for (double alpha : alphas) {
      ClassifyOutcome o;
      try {
        o = train_classifier(plan, data, T, alpha, run_seed);
      } catch (const DegenerateInput& e) {
        // alpha = 0 is undefined on graphs with isolated nodes.
        skipped = e.what();
        continue;
      }
      if (!best || o.val_accuracy > best->val_accuracy) best = std::move(o);
    }
  }
  if (!best) throw DegenerateInput("no feasible (T, alpha) setting: " + skipped);
  return std::move(*best);
}

RunResult run_classify(const ExperimentPlan& plan_in, int jobs, RunCallback cb) {
  const ExperimentPlan plan = plan_in.resolved();
  if (plan.task != Task::classify) throw InvalidArgument("run_classify needs a classify plan");
  plan.validate();
  std::optional<LabeledGraphBundle> shared;
  if (plan.dataset != "sbm") shared = load_bundle(plan.dataset);
  return run_all(plan, jobs, cb, [&](int, std::uint64_t seed) {
    const LabeledGraphBundle data = shared ? *shared : make_classify_data(plan, seed);
    ClassifyOutcome o = select_classifier(plan, data, seed);
    std::map<std::string, double> m{{"test_accuracy", o.test_accuracy},
                                    {"val_accuracy", o.val_accuracy},
                                    {"T", o.spec.terminal_time},
                                    {"alpha", o.spec.alpha},
                                    {"param_count", static_cast<double>(param_count(o.spec))}};
    return RunOutput{std::move(m), std::move(o.spec), std::move(o.params)};
  });
}

RunResult run_plan(const ExperimentPlan& plan, int jobs, RunCallback cb) {
  switch (plan.task) {
    case Task::continuous:
      return run_continuous(plan, jobs, std::move(cb));
    case Task::regular:
      return run_regular(plan, jobs, std::move(cb));
    case Task::classify:
      return run_classify(plan, jobs, std::move(cb));
  }
  throw InvalidArgument("unknown task");
}

}  // namespace ndcn
