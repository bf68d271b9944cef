#include "oracles.hpp"

#include "convexvolt/datagen.hpp"
#include "convexvolt/error.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/rng.hpp"
#include "convexvolt/train.hpp"

#include <doctest.h>

#include <cmath>

using namespace convexvolt;

namespace {

Eigen::VectorXd random_vector(RandomStream& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0)
{
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

Batch random_batch(RandomStream& rng, Eigen::Index in, Eigen::Index out, Eigen::Index n)
{
  Batch b{Eigen::MatrixXd(in, n), Eigen::MatrixXd(out, n)};
  for (Eigen::Index c = 0; c < n; ++c) {
    b.inputs.col(c) = random_vector(rng, in);
    b.targets.col(c) = random_vector(rng, out);
  }
  return b;
}

// Dataset whose targets are a fixed affine map of the inputs.
Dataset affine_dataset(std::size_t n, Eigen::Index m, std::uint64_t seed)
{
  RandomStream rng(seed, 0);
  Eigen::MatrixXd A(m, 2 * m);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.uniform(-1, 1);
  const Eigen::VectorXd c = random_vector(rng, m);
  Dataset ds;
  for (std::size_t k = 0; k < n; ++k) {
    Sample s;
    s.p = random_vector(rng, m);
    s.q = random_vector(rng, m);
    s.target = A * s.input() + c;
    s.v_true = Eigen::VectorXd::Constant(m, 0.95);
    ds.samples.push_back(s);
  }
  return ds;
}

double& parameter(IcnnModel& m, int kind, std::size_t layer, Eigen::Index index)
{
  if (kind == 0) return m.W[layer].data()[index];
  if (kind == 1) return m.U[layer].data()[index];
  return m.b[layer].data()[index];
}

double gradient(const IcnnGradients& g, int kind, std::size_t layer, Eigen::Index index)
{
  if (kind == 0) return g.W[layer].data()[index];
  if (kind == 1) return g.U[layer].data()[index];
  return g.b[layer].data()[index];
}

bool near_kink(const IcnnModel& m, const Batch& batch)
{
  const ForwardTrace t = forward_batch(m, batch.inputs);
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
    if ((t.pre[l].array().abs() < 1e-4).any()) return true;
  }
  for (const auto& w : m.W) {
    if ((w.array().abs() < 1e-4).any()) return true;
  }
  return false;
}

const RadialNetwork& feeder10()
{
  static const RadialNetwork net = load_network(std::string(CONVEXVOLT_DATA_DIR) + "/feeder10.net");
  return net;
}

}  // namespace

TEST_CASE("strategy names and gate modes")
{
  CHECK(TrainStrategy::post_check().gate_mode().kind == GateMode::Kind::none);
  CHECK(TrainStrategy::clamp_gate().gate_mode().kind == GateMode::Kind::hard_clamp);
  CHECK(TrainStrategy::smooth_gate(-0.2).gate_mode().slope == -0.2);
  CHECK(TrainStrategy::from_name("post-check").kind == TrainStrategy::Kind::post_check);
  CHECK(TrainStrategy::from_name("clamp").kind == TrainStrategy::Kind::clamp_gate);
  CHECK(TrainStrategy::from_name("smooth", -0.5).slope == -0.5);
  CHECK_THROWS_AS(TrainStrategy::smooth_gate(0.5), InvalidArgument);
  CHECK_THROWS_AS(TrainStrategy::from_name("adamw"), InvalidArgument);
}

TEST_CASE("zero model on zero targets has zero loss and gradient")
{
  IcnnModel m(3, {4, 4}, 2);
  RandomStream rng(1, 0);
  Batch b = random_batch(rng, 3, 2, 5);
  b.targets.setZero();
  const auto lg = loss_and_gradients(m, b);
  CHECK(lg.loss == 0.0);
  CHECK(lg.gradients.max_abs() == 0.0);
}

TEST_CASE("loss is the mean squared error over batch and outputs")
{
  IcnnModel m(2, {3}, 2);
  initialize(m, 3);
  RandomStream rng(2, 0);
  const Batch b = random_batch(rng, 2, 2, 4);
  const Eigen::MatrixXd y = forward_batch(m, b.inputs).output;
  const double sse = (y - b.targets).squaredNorm();
  const auto lg = loss_and_gradients(m, b);
  CHECK(lg.sum_squares == doctest::Approx(sse).epsilon(1e-14));
  CHECK(lg.loss == doctest::Approx(sse / 8.0).epsilon(1e-14));
  CHECK(mean_squared_error(m, b) == doctest::Approx(lg.loss).epsilon(1e-14));
}

TEST_CASE("parameter gradients match finite differences for every strategy")
{
  for (auto strategy : {TrainStrategy::post_check(), TrainStrategy::clamp_gate(), TrainStrategy::smooth_gate(-0.1)}) {
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      RandomStream rng(seed, 7);
      IcnnModel m(3, {5, 4}, 2, Activation::relu(), strategy.gate_mode());
      Batch batch;
      do {
        initialize(m, rng.below(1u << 30));
        batch = random_batch(rng, 3, 2, 6);
      } while (near_kink(m, batch));
      const auto lg = loss_and_gradients(m, batch, strategy);
      for (int trial = 0; trial < 12; ++trial) {
        const int kind = static_cast<int>(rng.below(3));
        const std::size_t layer = kind == 0 ? rng.below(m.W.size()) : rng.below(m.U.size());
        const Eigen::Index size =
            kind == 0 ? m.W[layer].size() : kind == 1 ? m.U[layer].size() : m.b[layer].size();
        const auto index = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size)));
        IcnnModel probe = m;
        double& w = parameter(probe, kind, layer, index);
        const double w0 = w;
        const double fd = oracle::central_difference(
            [&](double v) {
              w = v;
              return loss_and_gradients(probe, batch, strategy).loss;
            },
            w0, 1e-6);
        const double analytic = gradient(lg.gradients, kind, layer, index);
        CHECK_MESSAGE(oracle::relative_error(fd, analytic, 1e-8) < 1e-4, strategy.name(), " kind ", kind);
        ++checked;
      }
    }
    CHECK(checked >= 50);
  }
}

TEST_CASE("smooth gradient on a negative raw weight is s times the ungated gradient")
{
  const double s = -0.05;
  IcnnModel m(3, {4, 3}, 2, Activation::leaky_relu(0.1), GateMode::smooth(s));
  initialize(m, 5);
  m.W[0](1, 2) = -1.0;
  RandomStream rng(9, 0);
  const Batch b = random_batch(rng, 3, 2, 8);
  const auto smooth = loss_and_gradients(m, b, TrainStrategy::smooth_gate(s));

  IcnnModel plain = m;
  plain.gate = GateMode::none();
  for (auto& w : plain.W) w = gate_weights(w, GateMode::smooth(s));
  const auto none = loss_and_gradients(plain, b, TrainStrategy::post_check());
  CHECK(smooth.gradients.W[0](1, 2) == doctest::Approx(s * none.gradients.W[0](1, 2)).epsilon(1e-12));
  CHECK(smooth.gradients.U[1] == none.gradients.U[1]);
}

TEST_CASE("all-negative hidden weights: clamp gate has no W gradient, smooth gate does")
{
  IcnnModel m(18, {16, 32, 16}, 9);
  initialize(m, 2, WeightInit::all_negative);
  RandomStream rng(4, 0);
  const Batch b = random_batch(rng, 18, 9, 32);

  m.gate = GateMode::hard_clamp();
  const auto clamp = loss_and_gradients(m, b, TrainStrategy::clamp_gate());
  for (const auto& g : clamp.gradients.W) CHECK(g.cwiseAbs().maxCoeff() == 0.0);

  const double s = -0.01;
  m.gate = GateMode::smooth(s);
  const auto smooth = loss_and_gradients(m, b, TrainStrategy::smooth_gate(s));
  IcnnModel plain = m;
  plain.gate = GateMode::none();
  for (auto& w : plain.W) w = gate_weights(w, GateMode::smooth(s));
  const auto none = loss_and_gradients(plain, b, TrainStrategy::post_check());
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    CHECK(smooth.gradients.W[l].cwiseAbs().maxCoeff() > 0.0);
    CHECK((smooth.gradients.W[l] - s * none.gradients.W[l]).cwiseAbs().maxCoeff() <=
          1e-12 * none.gradients.W[l].cwiseAbs().maxCoeff());
  }
}

TEST_CASE("optimizer updates")
{
  IcnnModel m(1, {1}, 1);
  m.b[1][0] = 2.0;
  IcnnGradients g = IcnnGradients::zeros_like(m);

  SUBCASE("zero gradient leaves the model unchanged")
  {
    OptimizerState st = OptimizerState::for_model(m);
    IcnnModel before = m;
    apply_update(m, g, st, OptimizerConfig::adam(), 0.1);
    CHECK(m.b[1] == before.b[1]);
    CHECK(m.U[0] == before.U[0]);
  }
  SUBCASE("sgd")
  {
    OptimizerState st = OptimizerState::for_model(m);
    g.b[1][0] = 0.5;
    apply_update(m, g, st, OptimizerConfig::sgd(), 0.1);
    CHECK(m.b[1][0] == doctest::Approx(2.0 - 0.05));
  }
  SUBCASE("adam follows the bias-corrected recurrence")
  {
    OptimizerState st = OptimizerState::for_model(m);
    const double grad = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    g.b[1][0] = grad;
    double w = 2.0, m1 = 0.0, m2 = 0.0;
    for (int t = 1; t <= 3; ++t) {
      m1 = b1 * m1 + (1 - b1) * grad;
      m2 = b2 * m2 + (1 - b2) * grad * grad;
      w -= lr * (m1 / (1 - std::pow(b1, t))) / (std::sqrt(m2 / (1 - std::pow(b2, t))) + eps);
      apply_update(m, g, st, OptimizerConfig::adam(b1, b2, eps), lr);
      CHECK(m.b[1][0] == doctest::Approx(w).epsilon(1e-15));
    }
  }
  SUBCASE("non-finite parameters are refused")
  {
    OptimizerState st = OptimizerState::for_model(m);
    g.b[1][0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(apply_update(m, g, st, OptimizerConfig::sgd(), 0.1), DivergenceError);
  }
}

TEST_CASE("post-check clamp")
{
  IcnnModel m(1, {2, 2}, 1);
  m.W[0] << 0.2, -0.4, 0.1, 0.3;
  m.U[0] << -1.0, -2.0;
  CHECK(post_check_clamp(m) == 1);
  Eigen::Matrix2d expect;
  expect << 0.2, 0.0, 0.1, 0.3;
  CHECK(m.W[0] == expect);
  CHECK(m.U[0](0, 0) == -1.0);
  CHECK(post_check_clamp(m) == 0);
  initialize(m, 1, WeightInit::all_negative);
  post_check_clamp(m);
  for (const auto& w : m.W) CHECK(w.isZero());
}

TEST_CASE("training config validation")
{
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("affine targets are fitted by smooth gating")
{
  const Dataset ds = affine_dataset(64, 3, 1);
  IcnnModel m(6, {8, 8}, 3, Activation::relu(), GateMode::smooth(-0.01));
  initialize(m, 1);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.learning_rate = 1e-2;
  cfg.strategy = TrainStrategy::smooth_gate();
  const TrainReport r = train(m, ds, cfg);
  CHECK_FALSE(r.diverged);
  CHECK(r.final_loss < 0.01 * r.initial_loss);
  CHECK(r.loss_history.size() == r.iterations);
  CHECK(r.iterations == 500 * 2);
}

TEST_CASE("training is deterministic")
{
  const Dataset ds = affine_dataset(50, 2, 3);
  for (auto strategy : {TrainStrategy::post_check(), TrainStrategy::smooth_gate()}) {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 4;
    cfg.strategy = strategy;
    IcnnModel a(4, {6}, 2), b(4, {6}, 2);
    initialize(a, 2);
    initialize(b, 2);
    const auto ra = train(a, ds, cfg), rb = train(b, ds, cfg);
    CHECK(ra.loss_history == rb.loss_history);
    CHECK(format_model(a) == format_model(b));
    cfg.seed = 5;
    IcnnModel c(4, {6}, 2);
    initialize(c, 2);
    CHECK(train(c, ds, cfg).loss_history != ra.loss_history);
  }
}

TEST_CASE("all-positive start: post-check and smooth gating agree until a weight turns negative")
{
  const Dataset ds = affine_dataset(64, 2, 5);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-4;
  IcnnModel a(4, {6, 6}, 2);
  initialize(a, 3, WeightInit::all_positive);
  IcnnModel b = a;
  cfg.strategy = TrainStrategy::post_check();
  const auto post = train(a, ds, cfg);
  cfg.strategy = TrainStrategy::smooth_gate();
  const auto smooth = train(b, ds, cfg);

  std::size_t first_event = post.negative_weight_events.size();
  for (std::size_t i = 0; i < post.negative_weight_events.size(); ++i) {
    if (post.negative_weight_events[i] > 0) {
      first_event = i;
      break;
    }
  }
  CHECK(first_event >= 5);
  // The loss at the step that produced the first negative weight is still shared.
  const std::size_t shared = std::min(first_event + 1, post.loss_history.size());
  for (std::size_t i = 0; i < shared; ++i) CHECK(post.loss_history[i] == smooth.loss_history[i]);
}

TEST_CASE("trained models are convex for every strategy")
{
  const Dataset ds = affine_dataset(40, 2, 6);
  for (auto strategy : {TrainStrategy::post_check(), TrainStrategy::clamp_gate(), TrainStrategy::smooth_gate()}) {
    IcnnModel m(4, {6, 6}, 2, Activation::relu(), strategy.gate_mode());
    initialize(m, 9);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 1e-2;
    cfg.strategy = strategy;
    const auto r = train(m, ds, cfg);
    CHECK(is_convex_admissible(m));
    for (const auto& w : m.W) CHECK((gate_weights(w, m.gate).array() >= 0).all());
    CHECK(check_convexity(m, InputBox::from_samples(ds.input_matrix()), 1).passed);
    if (strategy.kind == TrainStrategy::Kind::post_check) CHECK(r.total_clamped > 0);
  }
}

TEST_CASE("mirrored training rebuilds the mirrored half after each step")
{
  const Dataset ds = affine_dataset(12, 2, 8);
  IcnnModel base(4, {5}, 2, Activation::relu(), GateMode::smooth(-0.01));
  initialize(base, 4);
  const IcnnModel dup = build_duplicated(base);

  // One full-batch SGD step by hand.
  Batch mirrored = Batch::from_dataset(ds);
  mirrored.inputs = (Eigen::MatrixXd(8, 12) << mirrored.inputs, -mirrored.inputs).finished();
  const auto lg = loss_and_gradients(dup, mirrored, TrainStrategy::smooth_gate());
  const double lr = 0.05;

  IcnnModel trained = dup;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 12;
  cfg.learning_rate = lr;
  cfg.optimizer = OptimizerConfig::sgd();
  cfg.strategy = TrainStrategy::smooth_gate();
  cfg.mirrored_input = true;
  train(trained, ds, cfg);

  for (std::size_t l = 0; l < dup.U.size(); ++l) {
    const Eigen::MatrixXd pre_split = dup.U[l].leftCols(4) - lr * lg.gradients.U[l].leftCols(4);
    CHECK((trained.U[l].leftCols(4) - pre_split.cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((trained.U[l].rightCols(4) - (-pre_split).cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK((trained.b[0] - (dup.b[0] - lr * lg.gradients.b[0])).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("normalization statistics")
{
  const Dataset ds = affine_dataset(30, 2, 2);
  IcnnModel m(4, {3}, 2);
  fit_normalization(m, ds);
  const Eigen::MatrixXd X = ds.input_matrix();
  CHECK(m.norm.input_shift[1] == doctest::Approx(X.row(1).mean()));
  const double var = (X.row(1).array() - X.row(1).mean()).square().mean();
  CHECK(m.norm.input_scale[1] == doctest::Approx(std::sqrt(var)));
}

TEST_CASE("MAPE closed forms")
{
  Dataset ds;
  for (int k = 0; k < 4; ++k) {
    Sample s;
    s.p = Eigen::VectorXd::Constant(2, 0.1 * k);
    s.q = Eigen::VectorXd::Constant(2, 0.05);
    s.v_true = Eigen::VectorXd::Constant(2, 0.99);
    s.target = Eigen::VectorXd::Constant(2, 0.01);
    ds.samples.push_back(s);
  }
  SUBCASE("constant-zero predictor")
  {
    const IcnnModel zero(4, {3}, 2);
    const MapeReport r = evaluate_mape(zero, ds, 1.0);
    CHECK(r.per_bus[0] == doctest::Approx(100.0 * 0.01 / 0.99));
    CHECK(r.mean == doctest::Approx(1.0101).epsilon(1e-4));
    CHECK(r.mean_deviation == doctest::Approx(100.0));
    CHECK(r.below_reference_fraction == 1.0);
  }
  SUBCASE("perfect predictor")
  {
    IcnnModel exact(4, {3}, 2);
    exact.b[1].setConstant(0.01);
    const MapeReport r = evaluate_mape(exact, ds, 1.0);
    CHECK(r.mean < 1e-12);
    CHECK(r.max < 1e-12);
  }
  SUBCASE("errors")
  {
    const IcnnModel zero(4, {3}, 2);
    CHECK_THROWS_AS(evaluate_mape(zero, Dataset{}, 1.0), InvalidArgument);
    ds.samples[0].v_true[0] = 0.0;
    CHECK_THROWS_AS(evaluate_mape(zero, ds, 1.0), InvalidArgument);
  }
}

TEST_CASE("a trained surrogate beats the constant-mean predictor on the 10-bus feeder")
{
  ScenarioConfig sc;
  sc.n_samples = 300;
  sc.seed = 2;
  const auto [train_set, test_set] = split_dataset(generate_dataset(feeder10(), sc), 0.8, 2);
  IcnnModel m(18, {16, 16}, 9, Activation::relu(), GateMode::smooth(-0.01));
  fit_normalization(m, train_set);
  initialize(m, 1);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 3e-3;
  train(m, train_set, cfg);

  const Eigen::VectorXd mean_target = train_set.target_matrix().rowwise().mean();
  double baseline = 0.0;
  for (const auto& s : test_set.samples) {
    baseline += ((1.0 - mean_target.array() - s.v_true.array()).abs() / s.v_true.array()).sum();
  }
  baseline *= 100.0 / static_cast<double>(test_set.size() * 9);
  const MapeReport r = evaluate_mape(m, test_set, 1.0);
  CHECK(r.mean < baseline);
  CHECK(r.below_reference_fraction == 1.0);
}
