#pragma once

#include "convexvolt/datagen.hpp"
#include "convexvolt/icnn.hpp"
#include "convexvolt/regulate.hpp"
#include "convexvolt/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace convexvolt {

enum class Variant { basic, dup_trick_equal_params, dup_trick_equal_neurons };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/**
 * One experiment, usually read from a JSON config file:
 *
 *     {
 *       "networks": ["data/feeder10.net"],
 *       "data": {"n_samples": 600, "scale_min": 0.5, "scale_max": 1.5,
 *                "pf_min": 0.85, "pf_max": 0.95, "seed": 1, "v_ref": 1.0,
 *                "train_fraction": 0.8},
 *       "model": {"hidden_dims": [16, 32, 16], "activation": "relu", "alpha": 0.0,
 *                 "normalize": true, "equal_params_dims": null},
 *       "variants": ["basic", "dup_trick_equal_params", "dup_trick_equal_neurons"],
 *       "strategies": ["post_check", "smooth_gate"],
 *       "n_seeds": 20, "first_seed": 0,
 *       "train": {"epochs": 60, "batch_size": 32, "learning_rate": 0.003,
 *                 "optimizer": "adam", "strategy": "post_check", "slope": -0.01,
 *                 "log_every": 1},
 *       "output_dir": "out/study"
 *     }
 *
 * Relative network paths resolve against the config file's directory.
 */
struct ExperimentSpec {
  std::vector<std::filesystem::path> networks;
  ScenarioConfig data;
  double train_fraction = 0.8;
  std::vector<Eigen::Index> hidden_dims{16, 32, 16};
  Activation activation = Activation::relu();
  bool normalize = true;
  /// Widths for dup_trick_equal_params; empty means search for a width
  /// profile within 5% of the basic parameter count.
  std::vector<Eigen::Index> equal_params_dims;
  std::vector<Variant> variants;
  std::vector<TrainStrategy> strategies;
  std::size_t n_seeds = 20;
  std::uint64_t first_seed = 0;
  TrainConfig train;
  std::filesystem::path output_dir = "out";
  /// Write wall-clock columns as 0 so that every output file is reproducible byte for byte.
  bool record_timing = true;

  void validate() const;
};

ExperimentSpec parse_experiment_spec(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

/// One trained model's outcome.
struct RunRecord {
  std::string network_id;
  std::string arm;  // variant or strategy name
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::vector<Eigen::Index> hidden_dims;
  std::size_t parameter_count = 0;
  bool diverged = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_sum_squares = 0.0;
  double mean_mape = 0.0;
  double max_mape = 0.0;
  double mean_mape_deviation = 0.0;
  Eigen::VectorXd per_bus_mape;
  Eigen::VectorXd per_bus_abs_error;  // mean |V_hat - V| per bus on the test set
  double wall_time = 0.0;
  double ms_per_iteration = 0.0;
  std::size_t iterations = 0;
  std::size_t total_clamped = 0;
  std::vector<double> loss_history;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single run
};

MeanStd mean_std(const std::vector<double>& values);

struct ComparisonRow {
  std::string network_id;
  std::string arm;
  std::vector<Eigen::Index> hidden_dims;
  std::size_t parameter_count = 0;
  std::size_t completed_runs = 0;
  std::size_t diverged_runs = 0;
  MeanStd wall_time;
  MeanStd ms_per_iteration;
  MeanStd final_loss;
  MeanStd final_sum_squares;
  MeanStd mean_mape;
  MeanStd mean_mape_deviation;
  /// Bus-level statistics of the seed-averaged per-bus MAPE.
  double bus_mean_mape = 0.0;
  double bus_max_mape = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::vector<RunRecord> runs;

  const ComparisonRow* find(const std::string& network_id, const std::string& arm) const;
};

/// Aggregates runs grouped by (network, arm) in first-appearance order; diverged runs are counted, not averaged.
ComparisonTable aggregate(std::vector<RunRecord> runs);

/// Closest width profile proportional to `reference` whose parameter count is nearest `target_params`.
std::vector<Eigen::Index> match_parameter_count(const std::vector<Eigen::Index>& reference, Eigen::Index in_dim,
                                                Eigen::Index out_dim, std::size_t target_params);

/// 64-bit FNV-1a of the dataset file text, as 16 hex digits.
std::string dataset_hash(const Dataset& ds);

/// Trains every variant for every seed on the first network and writes table.csv, runs.csv,
/// curves_loglog.csv, curves/<arm>_seed<k>.csv and summary.txt into the output directory.
ComparisonTable run_duplication_study(const ExperimentSpec& spec);

/// Trains every strategy for every seed on every network; additionally writes per_bus_mismatch.csv.
ComparisonTable run_strategy_study(const ExperimentSpec& spec);

/**
 * Mean and standard deviation across runs at each logged iteration, one
 * column pair per arm:  iteration, <arm>_mean, <arm>_std, ...
 * Histories are truncated to the shortest one. Values stay linear.
 */
std::string format_loglog_curves(const std::vector<std::string>& arms,
                                 const std::vector<std::vector<std::vector<double>>>& histories);
void emit_loglog_curves(const std::vector<std::string>& arms,
                        const std::vector<std::vector<std::vector<double>>>& histories,
                        const std::filesystem::path& path);

struct AcceptanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Table-1 orderings: equal-params not better than basic by more than one std; equal-neurons lower loss
/// and at least 10% more time per iteration.
std::vector<AcceptanceCheck> check_duplication_orderings(const ComparisonTable& table);
/// Table-2 orderings per network: smooth_gate mean MAPE below post_check's, and final-loss std no larger.
std::vector<AcceptanceCheck> check_strategy_orderings(const ComparisonTable& table);

struct EndToEndOptions {
  std::size_t n_scenarios = 20;
  double capacity_fraction = 0.5;  // q bounds: q_sample +- fraction * base_load_p
  SolveOptions solver;
};

struct ScenarioOutcome {
  std::size_t sample_index = 0;
  double predicted_q0 = 0.0;
  double predicted_star = 0.0;
  double true_q0 = 0.0;
  double true_star = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::VectorXd q_star;
};

struct EndToEndReport {
  std::vector<ScenarioOutcome> scenarios;
  std::size_t predicted_improved = 0;  // predicted objective at q* <= at q0
  std::size_t true_improved = 0;       // true DistFlow objective at q* <= at q0
};

/**
 * Regulates held-out scenarios with a trained model: q bounds are the
 * sample's q +- capacity_fraction * base load, p is fixed to the sample's
 * p, and a = 1. The audit objective is sum_i |V_i - v_ref| from the
 * power-flow solver at the same (p, q).
 */
EndToEndReport end_to_end(const RadialNetwork& net, const IcnnModel& model, const Dataset& held_out,
                          const EndToEndOptions& options = {});

/// Trains a smooth_gate model on the spec's first network and runs end_to_end; writes end_to_end.csv.
EndToEndReport run_end_to_end(const ExperimentSpec& spec, const EndToEndOptions& options = {});

}  // namespace convexvolt
