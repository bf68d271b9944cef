#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace convexvolt {

/// A feeder bus. Bus 0 is the slack bus and is the only bus without a parent.
struct Bus {
  int id = 0;
  std::optional<int> parent;
  double base_load_p = 0.0;  // per-unit, consumption positive
  double base_load_q = 0.0;
};

/// Series branch from parent bus to child bus.
struct Line {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
};

/**
 * Radial distribution feeder, immutable after construction.
 *
 * The constructor validates the tree invariants and canonicalizes the
 * storage: buses are ordered by id, and lines are ordered by their child
 * bus so that line k always feeds bus k + 1. Per-line quantities in
 * PowerFlowSolution use this order.
 */
class RadialNetwork {
 public:
  RadialNetwork(std::vector<Bus> buses, std::vector<Line> lines, double slack_voltage_sq = 1.0);

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  double slack_voltage_sq() const { return slack_voltage_sq_; }

  std::size_t bus_count() const { return buses_.size(); }
  /// Number of non-slack buses; also the number of lines.
  std::size_t load_bus_count() const { return buses_.size() - 1; }

  /// Buses in breadth-first order from the slack (parents before children).
  const std::vector<int>& sweep_order() const { return order_; }
  int parent_of(int bus) const { return *buses_[static_cast<std::size_t>(bus)].parent; }
  const Line& line_into(int bus) const { return lines_[static_cast<std::size_t>(bus - 1)]; }

  /// Base loads of the non-slack buses (index j - 1 for bus j).
  Eigen::VectorXd base_load_p() const;
  Eigen::VectorXd base_load_q() const;

 private:
  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  double slack_voltage_sq_;
  std::vector<int> order_;
};

struct PowerFlowSolution {
  Eigen::VectorXd v;       // per bus, squared voltage magnitude
  Eigen::VectorXd flow_p;  // per line
  Eigen::VectorXd flow_q;  // per line
  Eigen::VectorXd l;       // per line, squared current
  bool converged = false;
  int iterations = 0;
  double max_residual = 0.0;
};

struct SweepOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

/**
 * Solve the branch-flow (DistFlow) equations by backward/forward sweep.
 *
 * p and q hold one entry per non-slack bus (bus j at index j - 1), positive
 * for consumption. Each sweep accumulates line flows leaf-to-root with the
 * current squared-current estimates, updates squared voltages root-to-leaf,
 * then refreshes the squared currents. Iteration stops when both the
 * voltage and current updates fall below tol.
 *
 * Non-convergence is reported through PowerFlowSolution::converged. Throws
 * DivergenceError if a squared voltage becomes non-positive and ShapeError
 * on dimension mismatch.
 */
PowerFlowSolution solve_distflow(const RadialNetwork& net, const Eigen::VectorXd& p,
                                 const Eigen::VectorXd& q, const SweepOptions& options = {});

/// Worst absolute violation of each branch-flow equation family.
struct ResidualReport {
  double active_balance = 0.0;    // P_ij = sum P_jk + r l + p_j
  double reactive_balance = 0.0;  // Q_ij = sum Q_jk + x l + q_j
  double voltage_drop = 0.0;      // v_j = v_i - 2(rP + xQ) + (r^2 + x^2) l
  double current_def = 0.0;       // l = (P^2 + Q^2) / v_i
  /// Per line l_ij - (P^2 + Q^2) / v_i. Non-negative under the cone
  /// relaxation, zero when the relaxation is exact.
  Eigen::VectorXd relaxation_slack;

  double max_violation() const;
  double min_relaxation_slack() const;
};

ResidualReport verify_solution(const RadialNetwork& net, const Eigen::VectorXd& p,
                               const Eigen::VectorXd& q, const PowerFlowSolution& sol);

/// Element-wise sqrt of squared voltages. Throws InvalidArgument on v < 0.
Eigen::VectorXd voltage_magnitudes(const PowerFlowSolution& sol);
Eigen::VectorXd voltage_magnitudes(const Eigen::VectorXd& v);

}  // namespace convexvolt
