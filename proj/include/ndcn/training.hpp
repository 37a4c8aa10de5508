#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ndcn/autodiff.hpp"
#include "ndcn/datasets.hpp"
#include "ndcn/dynamics.hpp"
#include "ndcn/graph.hpp"
#include "ndcn/models.hpp"

namespace ndcn {

// ---- losses and metrics ----------------------------------------------------

/// Mean over snapshots of the mean elementwise |pred - truth|.
DiffMatrix l1_loss(std::span<const DiffMatrix> pred, std::span<const Matrix> truth);
/// As above, additionally requiring identical time stamps.
DiffMatrix l1_loss(const TrajectoryOf<DiffMatrix>& pred, const Trajectory& truth);

/// Mean over snapshots of mean|pred - truth| / mean|truth|.
double normalized_l1(std::span<const Matrix> pred, std::span<const Matrix> truth);
double normalized_l1(const Trajectory& pred, const Trajectory& truth);

/// Fraction of `ids` whose arg-max logit equals the label.
double accuracy(const Matrix& logits, const std::vector<int>& labels, const std::vector<int>& ids);

// ---- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

AdamState adam_init(const ModelParams& params);
/// One bias-corrected Adam update; grads are in ModelParams order.
void adam_step(ModelParams& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& cfg = {});

// ---- aggregation -------------------------------------------------------------

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  int count = 0;
};

Summary aggregate(std::span<const double> values);

// ---- experiment plans --------------------------------------------------------

enum class Task { continuous, regular, classify };
enum class Family { grid, random, power_law, small_world, community };

Task parse_task(const std::string& name);
std::string to_string(Task t);
/// Accepts grid, random|er, power_law|ba, small_world|ws, community.
Family parse_family(const std::string& name);
std::string to_string(Family f);

/// The five synthetic network families at their default parameters. `n` must
/// be a perfect square for the grid.
Graph make_network(Family family, int n, std::uint64_t seed);

double default_terminal_time(Law law, Family family);
double default_weight_decay(Task task, Law law, Family family, Variant variant);

struct ExperimentPlan {
  Task task = Task::continuous;
  Law law = Law::heat;
  Family family = Family::grid;
  Variant variant = Variant::ndcn;
  int nodes = 400;
  double terminal_time = 0.0;  // 0: per (law, family) default
  int snapshots = 0;     // 0: continuous 120, regular 100
  int train_count = 80;
  int interp_count = -1;  // continuous only (default 20); drawn with the training set
  std::uint64_t seed = 0;
  int run_count = 3;
  double lr = 0.01;
  int epochs = 0;              // 0: 2000 for dynamics, 100 for classification
  double weight_decay = -1.0;  // < 0: per-table default
  int hidden = 0;              // 0: 20 (ndcn), 10 (recurrent), 256 (classification)
  int euler_substeps = 1;  // continuous: Euler step = mean sample spacing / substeps
  bool reorder_nodes = true;  // relabel non-grid networks by community ordering

  // classify
  std::string dataset = "sbm";  // "sbm" or a bundle directory
  int sbm_nodes = 200;
  int sbm_blocks = 2;
  double sbm_p_in = 0.1;
  double sbm_p_out = 0.01;
  double sbm_noise = 1.0;
  double sbm_label_fraction = 0.1;
  std::vector<double> T_grid;      // empty: 0.5, 0.6, ..., 1.5
  std::vector<double> alpha_grid;  // empty: 0, 0.2, ..., 1
  bool row_normalize = false;
  double classify_rtol = 1e-3;
  double classify_atol = 1e-4;

  /// Fills defaults that depend on other fields (T, weight decay, grids,
  /// snapshot counts, task-specific epochs/hidden sizes).
  ExperimentPlan resolved() const;
  void validate() const;
};

nlohmann::json to_json(const ExperimentPlan& plan);
/// Unknown keys are rejected with InvalidArgument.
ExperimentPlan plan_from_json(const nlohmann::json& j, ExperimentPlan base = {});

struct RunRecord {
  int index = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  std::map<std::string, double> metrics;
  ModelSpec spec;      // trained model; params are empty for failed runs
  ModelParams params;
};

struct RunResult {
  ExperimentPlan plan;
  std::vector<RunRecord> runs;
  std::map<std::string, Summary> aggregates;  // over non-failed runs
  int failures = 0;
  double wall_seconds = 0.0;  // kept out of to_json so results are reproducible
};

nlohmann::json to_json(const RunResult& r);

nlohmann::json to_json(const ModelSpec& spec);
/// Unknown keys are rejected with InvalidArgument.
ModelSpec model_spec_from_json(const nlohmann::json& j);
/// One row per run: index, seed, failed, then metrics in name order.
std::string to_csv(const RunResult& r);

// ---- protocol pieces (exposed for the CLI and tests) ------------------------

/// Generated data for the continuous and regular tasks.
struct DynamicsData {
  Graph graph;
  Matrix x0;
  Trajectory truth;                 // physical times, x0 excluded
  std::vector<double> model_times;  // times seen by the model
  std::vector<int> train_idx;
  std::vector<int> interp_idx;
  std::vector<int> extrap_idx;
};

DynamicsData make_dynamics_data(const ExperimentPlan& plan, std::uint64_t run_seed);
ModelSpec model_spec_for(const ExperimentPlan& plan, const DynamicsData& data);

struct TrainStats {
  double first_loss = 0.0;
  double best_loss = 0.0;
  int epochs = 0;
};

struct TrainedModel {
  ModelSpec spec;
  ModelParams params;
  TrainStats stats;
};

TrainedModel train_dynamics(const ExperimentPlan& plan, const DynamicsData& data,
                            std::uint64_t run_seed);
/// Test metrics ("extrapolation", and "interpolation" for the continuous task).
std::map<std::string, double> evaluate_dynamics(const ExperimentPlan& plan,
                                                const DynamicsData& data,
                                                const ModelSpec& spec,
                                                const ModelParams& params);
/// Predicted states at every truth time (closed-loop rollout past the
/// training window for temporal models).
std::vector<Matrix> predict_dynamics(const ExperimentPlan& plan, const DynamicsData& data,
                                     const ModelSpec& spec, const ModelParams& params);

LabeledGraphBundle make_classify_data(const ExperimentPlan& plan, std::uint64_t run_seed);

struct ClassifyOutcome {
  ModelSpec spec;
  ModelParams params;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Trains one (T, alpha) setting.
ClassifyOutcome train_classifier(const ExperimentPlan& plan, const LabeledGraphBundle& data,
                                 double T, double alpha, std::uint64_t run_seed);
/// Grid search over (T, alpha) by validation accuracy; ties go to smaller T,
/// then smaller alpha. Settings whose operator is undefined (alpha = 0 with an
/// isolated node) are skipped.
ClassifyOutcome select_classifier(const ExperimentPlan& plan, const LabeledGraphBundle& data,
                                  std::uint64_t run_seed);
Matrix classifier_logits(const ModelSpec& spec, const ModelParams& params,
                         const LabeledGraphBundle& data, bool row_normalize);

/// Called after each finished run (from worker threads, serialized). Runs that
/// throw StiffnessError, NumericError or DegenerateInput are recorded as failed
/// and left out of the aggregates; other exceptions propagate.
using RunCallback = std::function<void(const RunRecord&)>;

RunResult run_continuous(const ExperimentPlan& plan, int jobs = 1, RunCallback cb = {});
RunResult run_regular(const ExperimentPlan& plan, int jobs = 1, RunCallback cb = {});
RunResult run_classify(const ExperimentPlan& plan, int jobs = 1, RunCallback cb = {});
/// Dispatches on plan.task.
RunResult run_plan(const ExperimentPlan& plan, int jobs = 1, RunCallback cb = {});

}  // namespace ndcn
