#pragma once

#include "convexvolt/icnn.hpp"

#include <Eigen/Dense>

#include <vector>

namespace convexvolt {

/**
 * Reactive-power regulation over a trained surrogate:
 *
 *     min_q  sum_i a_i f_i(p, q)    s.t.  q_min <= q <= q_max
 *
 * with p fixed. The constructor rejects models that are not
 * convex-admissible and negative weights a, so the objective is convex in q.
 */
class RegulationProblem {
 public:
  RegulationProblem(IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min, Eigen::VectorXd q_max,
                    Eigen::VectorXd a, double v_ref = 1.0);

  const IcnnModel& model() const { return model_; }
  const Eigen::VectorXd& p_fixed() const { return p_; }
  const Eigen::VectorXd& q_min() const { return q_min_; }
  const Eigen::VectorXd& q_max() const { return q_max_; }
  const Eigen::VectorXd& weights() const { return a_; }
  double v_ref() const { return v_ref_; }
  Eigen::Index dimension() const { return q_min_.size(); }

  Eigen::VectorXd project(const Eigen::VectorXd& q) const;
  Eigen::VectorXd midpoint() const { return 0.5 * (q_min_ + q_max_); }

  /// Builds a problem without the convexity checks; for audits of non-convex models only.
  static RegulationProblem unchecked(IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min,
                                     Eigen::VectorXd q_max, Eigen::VectorXd a, double v_ref = 1.0);

 private:
  struct Unchecked {};
  RegulationProblem(Unchecked, IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min, Eigen::VectorXd q_max,
                    Eigen::VectorXd a, double v_ref);

  IcnnModel model_;
  Eigen::VectorXd p_;
  Eigen::VectorXd q_min_;
  Eigen::VectorXd q_max_;
  Eigen::VectorXd a_;
  double v_ref_;
};

struct ObjectiveValue {
  double objective = 0.0;
  Eigen::VectorXd gradient;  // d objective / d q
};

ObjectiveValue objective_and_q_gradient(const RegulationProblem& problem, const Eigen::VectorXd& q);
double objective(const RegulationProblem& problem, const Eigen::VectorXd& q);
/// Objective at many points at once (one column per q).
Eigen::VectorXd objective_batch(const RegulationProblem& problem, const Eigen::MatrixXd& qs);

struct SolveOptions {
  double step0 = 1.0;
  int max_iter = 5000;
  double tol = 1e-9;       // on ||q - P(q - grad)||_inf
  double armijo = 1e-4;
  double shrink = 0.5;
  double min_step = 1e-20;
};

struct RegulationResult {
  Eigen::VectorXd q_star;
  double objective = 0.0;
  std::vector<double> trace;  // objective at the start and after every accepted step
  bool converged = false;
  int iterations = 0;
};

/**
 * Projected gradient descent from the box midpoint with Armijo
 * backtracking along the projection arc. Each iteration starts from twice
 * the last accepted step, capped at step0. Stops on a small projected
 * gradient, on max_iter, or when the step underflows min_step.
 */
RegulationResult solve(const RegulationProblem& problem, const SolveOptions& options = {});

struct GridAudit {
  double grid_min = 0.0;       // best objective on the grid
  double oracle_min = 0.0;     // after derivative-free polish from the best grid point
  Eigen::VectorXd oracle_q;
  double gap = 0.0;            // objective(q_star) - oracle_min
  double lipschitz_bound = 0.0;  // per-coordinate sum of |d objective / d q_j| bounds times half the grid spacing
};

/**
 * Exhaustive grid audit (points_per_dim^dim <= 1e7) followed by a compass
 * search polish that uses objective values only.
 */
GridAudit validate_against_grid(const RegulationProblem& problem, const RegulationResult& result,
                                std::size_t points_per_dim);

}  // namespace convexvolt
