#pragma once

#include "convexvolt/datagen.hpp"
#include "convexvolt/icnn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace convexvolt {

/// How the non-negativity of W is enforced while training.
struct TrainStrategy {
  enum class Kind { post_check, clamp_gate, smooth_gate };

  Kind kind = Kind::smooth_gate;
  double slope = -0.01;  // smooth_gate only, <= 0

  static TrainStrategy post_check() { return {Kind::post_check, 0.0}; }
  static TrainStrategy clamp_gate() { return {Kind::clamp_gate, 0.0}; }
  static TrainStrategy smooth_gate(double s = -0.01);

  /// Gate used in the forward/backward pass: none, hard_clamp or smooth(s).
  GateMode gate_mode() const;
  std::string name() const;
  static TrainStrategy from_name(const std::string& name, double slope = -0.01);
};

struct OptimizerConfig {
  enum class Kind { sgd, adam };

  Kind kind = Kind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerConfig sgd() { return {Kind::sgd, 0.0, 0.0, 0.0}; }
  static OptimizerConfig adam(double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) { return {Kind::adam, b1, b2, eps}; }
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  TrainStrategy strategy;
  std::size_t log_every = 1;
  /// Model input is [x; -x]: zero the mirrored-half U gradients and call
  /// resplit_mirrored_passthrough after every step.
  bool mirrored_input = false;

  void validate() const;
};

struct TrainReport {
  std::vector<double> loss_history;         // mini-batch MSE per logged iteration
  std::vector<std::size_t> logged_iterations;
  std::vector<double> wall_ms;              // cumulative wall time at each logged iteration
  std::vector<std::size_t> negative_weight_events;  // post_check: entries clamped at each logged iteration
  double wall_time = 0.0;                   // seconds
  double initial_loss = 0.0;                // full-set MSE before training
  double final_loss = 0.0;                  // full-set MSE of the returned model
  double final_sum_squares = 0.0;           // full-set unreduced squared error
  std::size_t epochs_run = 0;
  std::size_t iterations = 0;
  std::size_t total_clamped = 0;
  bool diverged = false;

  double ms_per_iteration() const { return iterations ? 1e3 * wall_time / static_cast<double>(iterations) : 0.0; }
};

/// Column-stacked inputs and targets.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;

  static Batch from_dataset(const Dataset& ds);
  Batch columns(const std::vector<std::size_t>& idx) const;
  Eigen::Index size() const { return inputs.cols(); }
};

struct LossAndGradients {
  double loss = 0.0;         // mean over batch and outputs of (y - t)^2
  double sum_squares = 0.0;  // unreduced
  IcnnGradients gradients;
};

/// MSE and its gradient under the model's current gate mode. Throws DivergenceError on a non-finite loss.
LossAndGradients loss_and_gradients(const IcnnModel& model, const Batch& batch);
/// Same, with the gate mode taken from the strategy.
LossAndGradients loss_and_gradients(const IcnnModel& model, const Batch& batch, const TrainStrategy& strategy);

double mean_squared_error(const IcnnModel& model, const Batch& batch);

/// First/second moment buffers for Adam; unused by SGD.
struct OptimizerState {
  IcnnGradients first_moment;
  IcnnGradients second_moment;
  std::size_t step = 0;

  static OptimizerState for_model(const IcnnModel& model);
};

/// One SGD or bias-corrected Adam step on the raw parameters.
void apply_update(IcnnModel& model, const IcnnGradients& gradients, OptimizerState& state,
                  const OptimizerConfig& optimizer, double learning_rate);

/// Sets every negative raw W entry to 0; returns how many were changed.
std::size_t post_check_clamp(IcnnModel& model);

/**
 * Mini-batch training. Epoch e visits the samples in the order of a
 * Fisher-Yates shuffle drawn from RandomStream(seed, e).
 *
 * The model's gate is set from the strategy. post_check clamps raw W after
 * every step and once more at the end, so the returned model is always
 * convex-admissible. A non-finite loss stops training and sets
 * TrainReport::diverged; the partial model is returned.
 */
TrainReport train(IcnnModel& model, const Dataset& train_set, const TrainConfig& cfg);

/// Sets input/output normalization from dataset statistics (mean, std; std floored at 1e-12).
void fit_normalization(IcnnModel& model, const Dataset& ds);

struct MapeReport {
  Eigen::VectorXd per_bus;  // percent
  double mean = 0.0;
  double max = 0.0;
  // Same statistics with the deviation |V - v_ref| as denominator
  // (samples with deviation below 1e-9 are skipped).
  Eigen::VectorXd per_bus_deviation;
  double mean_deviation = 0.0;
  double max_deviation = 0.0;
  /// Fraction of sample-bus pairs with V <= v_ref (the sign assumption behind V_hat = v_ref - y).
  double below_reference_fraction = 0.0;
};

/// V_hat = v_ref - y; per-bus MAPE = mean_k |V_hat - V_true| / V_true * 100.
MapeReport evaluate_mape(const IcnnModel& model, const Dataset& test_set, double v_ref);

}  // namespace convexvolt
