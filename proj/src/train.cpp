#include "convexvolt/train.hpp"

#include "convexvolt/error.hpp"
#include "convexvolt/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace convexvolt {

TrainStrategy TrainStrategy::smooth_gate(double s)
{
  if (!(s <= 0.0)) throw InvalidArgument("smooth gate slope must be <= 0");
  return {Kind::smooth_gate, s};
}

GateMode TrainStrategy::gate_mode() const
{
  switch (kind) {
    case Kind::post_check: return GateMode::none();
    case Kind::clamp_gate: return GateMode::hard_clamp();
    case Kind::smooth_gate: return GateMode::smooth(slope);
  }
  return GateMode::none();
}

std::string TrainStrategy::name() const
{
  switch (kind) {
    case Kind::post_check: return "post_check";
    case Kind::clamp_gate: return "clamp_gate";
    case Kind::smooth_gate: return "smooth_gate";
  }
  return "?";
}

TrainStrategy TrainStrategy::from_name(const std::string& name, double slope)
{
  if (name == "post_check" || name == "post-check") return post_check();
  if (name == "clamp_gate" || name == "clamp") return clamp_gate();
  if (name == "smooth_gate" || name == "smooth") return smooth_gate(slope);
  throw InvalidArgument("unknown strategy '" + name + "'");
}

void TrainConfig::validate() const
{
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (log_every < 1) throw InvalidArgument("log_every must be >= 1");
  if (strategy.kind == TrainStrategy::Kind::smooth_gate && strategy.slope > 0.0) {
    throw InvalidArgument("smooth gate slope must be <= 0");
  }
}

Batch Batch::from_dataset(const Dataset& ds) { return {ds.input_matrix(), ds.target_matrix()}; }

Batch Batch::columns(const std::vector<std::size_t>& idx) const
{
  Batch out{Eigen::MatrixXd(inputs.rows(), static_cast<Eigen::Index>(idx.size())),
            Eigen::MatrixXd(targets.rows(), static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(static_cast<Eigen::Index>(idx[k]));
    out.targets.col(static_cast<Eigen::Index>(k)) = targets.col(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

LossAndGradients loss_and_gradients(const IcnnModel& model, const Batch& batch)
{
  if (batch.size() == 0) throw InvalidArgument("empty batch");
  if (batch.targets.rows() != model.out_dim || batch.targets.cols() != batch.inputs.cols()) {
    throw ShapeError("targets do not match model output");
  }
  const ForwardTrace trace = forward_batch(model, batch.inputs);
  const Eigen::MatrixXd residual = trace.output - batch.targets;
  const double count = static_cast<double>(residual.size());

  LossAndGradients out;
  out.sum_squares = residual.squaredNorm();
  out.loss = out.sum_squares / count;
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite training loss");
  out.gradients = backward(model, trace, (2.0 / count) * residual);
  return out;
}

LossAndGradients loss_and_gradients(const IcnnModel& model, const Batch& batch, const TrainStrategy& strategy)
{
  IcnnModel gated = model;
  gated.gate = strategy.gate_mode();
  return loss_and_gradients(gated, batch);
}

double mean_squared_error(const IcnnModel& model, const Batch& batch)
{
  const Eigen::MatrixXd residual = forward_batch(model, batch.inputs).output - batch.targets;
  return residual.squaredNorm() / static_cast<double>(residual.size());
}

OptimizerState OptimizerState::for_model(const IcnnModel& model)
{
  return {IcnnGradients::zeros_like(model), IcnnGradients::zeros_like(model), 0};
}

namespace {

/// Calls fn(param, grad, m1, m2) for every parameter tensor as flat spans.
template <class Fn>
void for_each_tensor(IcnnModel& model, const IcnnGradients& g, OptimizerState& s, Fn&& fn)
{
  auto visit = [&](auto& p, const auto& gr, auto& m1, auto& m2) {
    if (p.size() != gr.size()) throw ShapeError("gradient does not match parameter shape");
    fn(Eigen::Map<Eigen::VectorXd>(p.data(), p.size()), Eigen::Map<const Eigen::VectorXd>(gr.data(), gr.size()),
       Eigen::Map<Eigen::VectorXd>(m1.data(), m1.size()), Eigen::Map<Eigen::VectorXd>(m2.data(), m2.size()));
  };
  if (g.W.size() != model.W.size() || g.U.size() != model.U.size() || g.b.size() != model.b.size()) {
    throw ShapeError("gradient layer count does not match model");
  }
  for (std::size_t i = 0; i < model.W.size(); ++i) visit(model.W[i], g.W[i], s.first_moment.W[i], s.second_moment.W[i]);
  for (std::size_t i = 0; i < model.U.size(); ++i) visit(model.U[i], g.U[i], s.first_moment.U[i], s.second_moment.U[i]);
  for (std::size_t i = 0; i < model.b.size(); ++i) visit(model.b[i], g.b[i], s.first_moment.b[i], s.second_moment.b[i]);
}

}  // namespace

void apply_update(IcnnModel& model, const IcnnGradients& gradients, OptimizerState& state,
                  const OptimizerConfig& optimizer, double learning_rate)
{
  ++state.step;
  bool finite = true;
  if (optimizer.kind == OptimizerConfig::Kind::sgd) {
    for_each_tensor(model, gradients, state, [&](auto p, auto g, auto, auto) {
      p -= learning_rate * g;
      finite = finite && p.allFinite();
    });
  } else {
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(optimizer.beta1, t);
    const double c2 = 1.0 - std::pow(optimizer.beta2, t);
    for_each_tensor(model, gradients, state, [&](auto p, auto g, auto m1, auto m2) {
      m1 = optimizer.beta1 * m1 + (1.0 - optimizer.beta1) * g;
      m2 = optimizer.beta2 * m2 + (1.0 - optimizer.beta2) * g.cwiseAbs2();
      p.array() -= learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + optimizer.epsilon);
      finite = finite && p.allFinite();
    });
  }
  if (!finite) throw DivergenceError("non-finite parameters after update");
}

std::size_t post_check_clamp(IcnnModel& model)
{
  std::size_t count = 0;
  for (auto& w : model.W) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      double& v = w.data()[i];
      if (v < 0.0) {
        v = 0.0;
        ++count;
      }
    }
  }
  return count;
}

TrainReport train(IcnnModel& model, const Dataset& train_set, const TrainConfig& cfg)
{
  cfg.validate();
  model.check_shapes();
  if (train_set.empty()) throw InvalidArgument("empty training set");
  model.gate = cfg.strategy.gate_mode();
  const bool post_check = cfg.strategy.kind == TrainStrategy::Kind::post_check;

  const Batch all = Batch::from_dataset(train_set);
  if (all.inputs.rows() != model.in_dim && !(cfg.mirrored_input && all.inputs.rows() * 2 == model.in_dim)) {
    throw ShapeError("dataset inputs do not match model input dimension");
  }
  // Mirrored models see [x; -x].
  const Batch data = cfg.mirrored_input ? Batch{(Eigen::MatrixXd(model.in_dim, all.size()) << all.inputs, -all.inputs).finished(),
                                                all.targets}
                                        : all;
  const Eigen::Index half = model.in_dim / 2;

  TrainReport report;
  report.initial_loss = mean_squared_error(model, data);
  OptimizerState state = OptimizerState::for_model(model);
  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RandomStream(cfg.seed, kStreamEpoch + epoch).shuffle(order);
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t last = std::min(order.size(), first + cfg.batch_size);
      const Batch mb = data.columns(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(first),
                                                             order.begin() + static_cast<std::ptrdiff_t>(last)));
      std::size_t clamped = 0;
      double loss = 0.0;
      try {
        LossAndGradients lg = loss_and_gradients(model, mb);
        loss = lg.loss;
        if (cfg.mirrored_input) {
          for (auto& g : lg.gradients.U) g.rightCols(half).setZero();
        }
        apply_update(model, lg.gradients, state, cfg.optimizer, cfg.learning_rate);
      } catch (const DivergenceError&) {
        report.diverged = true;
        break;
      }
      if (post_check) {
        clamped = post_check_clamp(model);
        report.total_clamped += clamped;
      }
      if (cfg.mirrored_input) resplit_mirrored_passthrough(model);

      ++report.iterations;
      if ((report.iterations - 1) % cfg.log_every == 0) {
        report.loss_history.push_back(loss);
        report.logged_iterations.push_back(report.iterations);
        report.wall_ms.push_back(elapsed_ms());
        report.negative_weight_events.push_back(clamped);
      }
    }
    if (!report.diverged) ++report.epochs_run;
  }
  report.wall_time = elapsed_ms() / 1e3;

  if (post_check) post_check_clamp(model);
  const Eigen::MatrixXd residual = forward_batch(model, data.inputs).output - data.targets;
  report.final_sum_squares = residual.squaredNorm();
  report.final_loss = report.final_sum_squares / static_cast<double>(residual.size());
  return report;
}

void fit_normalization(IcnnModel& model, const Dataset& ds)
{
  if (ds.empty()) throw InvalidArgument("cannot fit normalization on an empty dataset");
  const Eigen::MatrixXd x = ds.input_matrix();
  const Eigen::MatrixXd t = ds.target_matrix();
  if (x.rows() != model.in_dim || t.rows() != model.out_dim) throw ShapeError("dataset does not match model");
  auto stats = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
    mean = m.rowwise().mean();
    const Eigen::MatrixXd centered = m.colwise() - mean;
    scale = (centered.rowwise().squaredNorm() / static_cast<double>(m.cols())).cwiseSqrt();
    scale = scale.cwiseMax(1e-12);
  };
  stats(x, model.norm.input_shift, model.norm.input_scale);
  stats(t, model.norm.output_shift, model.norm.output_scale);
}

MapeReport evaluate_mape(const IcnnModel& model, const Dataset& test_set, double v_ref)
{
  if (test_set.empty()) throw InvalidArgument("empty test set");
  const Eigen::MatrixXd y = forward_batch(model, test_set.input_matrix()).output;
  const auto m = y.rows();
  const auto n = static_cast<double>(test_set.size());

  MapeReport r;
  r.per_bus = Eigen::VectorXd::Zero(m);
  r.per_bus_deviation = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd deviation_count = Eigen::VectorXd::Zero(m);
  std::size_t below = 0;
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    const Sample& s = test_set.samples[k];
    for (Eigen::Index i = 0; i < m; ++i) {
      const double v_true = s.v_true[i];
      if (!(v_true > 0.0)) throw InvalidArgument("true voltage magnitude must be positive");
      const double predicted = v_ref - y(i, static_cast<Eigen::Index>(k));
      r.per_bus[i] += std::abs(predicted - v_true) / v_true * 100.0;
      if (v_true <= v_ref) ++below;
      if (s.target[i] > 1e-9) {
        r.per_bus_deviation[i] += std::abs(y(i, static_cast<Eigen::Index>(k)) - s.target[i]) / s.target[i] * 100.0;
        deviation_count[i] += 1.0;
      }
    }
  }
  r.per_bus /= n;
  r.per_bus_deviation = r.per_bus_deviation.cwiseQuotient(deviation_count.cwiseMax(1.0));
  r.mean = r.per_bus.mean();
  r.max = r.per_bus.maxCoeff();
  r.mean_deviation = r.per_bus_deviation.mean();
  r.max_deviation = r.per_bus_deviation.maxCoeff();
  r.below_reference_fraction = static_cast<double>(below) / (n * static_cast<double>(m));
  return r;
}

}  // namespace convexvolt
