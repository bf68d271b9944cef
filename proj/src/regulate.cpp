#include "convexvolt/regulate.hpp"

#include "convexvolt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace convexvolt {

RegulationProblem::RegulationProblem(Unchecked, IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min,
                                     Eigen::VectorXd q_max, Eigen::VectorXd a, double v_ref)
    : model_(std::move(model)), p_(std::move(p_fixed)), q_min_(std::move(q_min)), q_max_(std::move(q_max)),
      a_(std::move(a)), v_ref_(v_ref)
{
  model_.check_shapes();
  if (q_min_.size() != q_max_.size()) throw ShapeError("q bounds differ in length");
  if (p_.size() + q_min_.size() != model_.in_dim) throw ShapeError("(p, q) does not match model input");
  if (a_.size() != model_.out_dim) throw ShapeError("objective weights do not match model output");
  if ((q_min_.array() > q_max_.array()).any()) throw InvalidArgument("q_min must not exceed q_max");
}

RegulationProblem::RegulationProblem(IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min,
                                     Eigen::VectorXd q_max, Eigen::VectorXd a, double v_ref)
    : RegulationProblem(Unchecked{}, std::move(model), std::move(p_fixed), std::move(q_min), std::move(q_max),
                        std::move(a), v_ref)
{
  if ((a_.array() < 0.0).any()) throw InvalidArgument("objective weights must be non-negative");
  if (!is_convex_admissible(model_)) throw InvalidArgument("model is not convex-admissible");
}

RegulationProblem RegulationProblem::unchecked(IcnnModel model, Eigen::VectorXd p_fixed, Eigen::VectorXd q_min,
                                               Eigen::VectorXd q_max, Eigen::VectorXd a, double v_ref)
{
  return RegulationProblem(Unchecked{}, std::move(model), std::move(p_fixed), std::move(q_min), std::move(q_max),
                           std::move(a), v_ref);
}

Eigen::VectorXd RegulationProblem::project(const Eigen::VectorXd& q) const
{
  return q.cwiseMax(q_min_).cwiseMin(q_max_);
}

namespace {

Eigen::MatrixXd stack_inputs(const RegulationProblem& problem, const Eigen::MatrixXd& qs)
{
  const auto np = problem.p_fixed().size();
  Eigen::MatrixXd x(problem.model().in_dim, qs.cols());
  x.topRows(np) = problem.p_fixed().replicate(1, qs.cols());
  x.bottomRows(qs.rows()) = qs;
  return x;
}

}  // namespace

ObjectiveValue objective_and_q_gradient(const RegulationProblem& problem, const Eigen::VectorXd& q)
{
  if (q.size() != problem.dimension()) throw ShapeError("q has wrong dimension");
  const ForwardTrace trace = forward_batch(problem.model(), stack_inputs(problem, q));
  Eigen::MatrixXd dx;
  backward(problem.model(), trace, problem.weights(), &dx);
  return {problem.weights().dot(trace.output.col(0)), dx.col(0).tail(q.size())};
}

double objective(const RegulationProblem& problem, const Eigen::VectorXd& q)
{
  if (q.size() != problem.dimension()) throw ShapeError("q has wrong dimension");
  return objective_batch(problem, q)[0];
}

Eigen::VectorXd objective_batch(const RegulationProblem& problem, const Eigen::MatrixXd& qs)
{
  const Eigen::MatrixXd y = forward_batch(problem.model(), stack_inputs(problem, qs)).output;
  return y.transpose() * problem.weights();
}

RegulationResult solve(const RegulationProblem& problem, const SolveOptions& options)
{
  RegulationResult result;
  Eigen::VectorXd q = problem.midpoint();
  ObjectiveValue cur = objective_and_q_gradient(problem, q);
  result.trace.push_back(cur.objective);

  double last_step = options.step0;
  for (int it = 0; it < options.max_iter; ++it) {
    const Eigen::VectorXd projected_grad = q - problem.project(q - cur.gradient);
    if (projected_grad.size() == 0 || projected_grad.cwiseAbs().maxCoeff() < options.tol) {
      result.converged = true;
      break;
    }

    double step = std::min(options.step0, 2.0 * last_step);
    bool accepted = false;
    Eigen::VectorXd candidate;
    ObjectiveValue next;
    while (step >= options.min_step) {
      candidate = problem.project(q - step * cur.gradient);
      next = objective_and_q_gradient(problem, candidate);
      if (next.objective <= cur.objective + options.armijo * cur.gradient.dot(candidate - q)) {
        accepted = true;
        break;
      }
      step *= options.shrink;
    }
    if (!accepted) break;

    last_step = step;
    q = std::move(candidate);
    cur = std::move(next);
    result.trace.push_back(cur.objective);
    ++result.iterations;
  }
  if (!result.converged) {
    const Eigen::VectorXd projected_grad = q - problem.project(q - cur.gradient);
    result.converged = projected_grad.size() == 0 || projected_grad.cwiseAbs().maxCoeff() < options.tol;
  }
  result.q_star = problem.project(q);
  result.objective = cur.objective;
  return result;
}

namespace {

/// Upper bound on |d objective / d q_j| over all inputs, from absolute weights.
Eigen::VectorXd gradient_bound(const RegulationProblem& problem)
{
  const IcnnModel& m = problem.model();
  const double act_slope =
      m.activation.kind == Activation::Kind::relu ? 1.0 : std::max(1.0, std::abs(m.activation.alpha));
  Eigen::MatrixXd jac = m.U[0].cwiseAbs();
  for (std::size_t l = 1; l < m.layer_count(); ++l) {
    jac = act_slope * gate_weights(m.W[l - 1], m.gate).cwiseAbs() * jac + m.U[l].cwiseAbs();
  }
  const Eigen::MatrixXd scaled = (jac.array().colwise() * m.norm.output_scale.array().abs()).rowwise() /
                                 m.norm.input_scale.transpose().array();
  const Eigen::VectorXd bound = scaled.transpose() * problem.weights().cwiseAbs();
  return bound.tail(problem.dimension());
}

}  // namespace

GridAudit validate_against_grid(const RegulationProblem& problem, const RegulationResult& result,
                                std::size_t points_per_dim)
{
  const Eigen::Index dim = problem.dimension();
  if (points_per_dim < 2) throw InvalidArgument("grid needs at least 2 points per dimension");
  double total = 1.0;
  for (Eigen::Index j = 0; j < dim; ++j) total *= static_cast<double>(points_per_dim);
  if (total > 1e7) throw InvalidArgument("grid too large: points_per_dim^dim exceeds 1e7");

  const Eigen::VectorXd spacing = (problem.q_max() - problem.q_min()) / static_cast<double>(points_per_dim - 1);
  const auto count = static_cast<std::size_t>(total);
  constexpr std::size_t kChunk = 4096;

  GridAudit audit;
  audit.grid_min = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_q = problem.midpoint();
  for (std::size_t first = 0; first < count; first += kChunk) {
    const std::size_t n = std::min(kChunk, count - first);
    Eigen::MatrixXd qs(dim, static_cast<Eigen::Index>(n));
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t code = first + c;
      for (Eigen::Index j = 0; j < dim; ++j) {
        const auto step = static_cast<double>(code % points_per_dim);
        code /= points_per_dim;
        qs(j, static_cast<Eigen::Index>(c)) =
            step == static_cast<double>(points_per_dim - 1) ? problem.q_max()[j] : problem.q_min()[j] + step * spacing[j];
      }
    }
    const Eigen::VectorXd f = objective_batch(problem, qs);
    Eigen::Index idx = 0;
    const double m = f.minCoeff(&idx);
    if (m < audit.grid_min) {
      audit.grid_min = m;
      best_q = qs.col(idx);
    }
  }

  // Compass search polish.
  Eigen::VectorXd q = best_q;
  double fq = audit.grid_min;
  Eigen::VectorXd step = spacing;
  for (int evals = 0; step.size() > 0 && step.maxCoeff() > 1e-13 && evals < 200000;) {
    bool improved = false;
    for (Eigen::Index j = 0; j < dim && !improved; ++j) {
      if (step[j] <= 0.0) continue;
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd trial = q;
        trial[j] += sign * step[j];
        trial = problem.project(trial);
        if (trial == q) continue;
        const double ft = objective(problem, trial);
        ++evals;
        if (ft < fq) {
          q = std::move(trial);
          fq = ft;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }

  audit.oracle_min = fq;
  audit.oracle_q = q;
  audit.gap = objective(problem, result.q_star) - audit.oracle_min;
  audit.lipschitz_bound = gradient_bound(problem).dot(spacing / 2.0);
  return audit;
}

}  // namespace convexvolt
