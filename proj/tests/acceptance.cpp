// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance <work dir> [criterion numbers...]

#include "oracles.hpp"

#include "convexvolt/datagen.hpp"
#include "convexvolt/experiment.hpp"
#include "convexvolt/grid.hpp"
#include "convexvolt/icnn.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/regulate.hpp"
#include "convexvolt/rng.hpp"
#include "convexvolt/train.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace convexvolt;
namespace fs = std::filesystem;

namespace {

fs::path g_work;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

RadialNetwork fixture(const std::string& name) { return load_network(fs::path(CONVEXVOLT_DATA_DIR) / name); }

Eigen::VectorXd random_vector(RandomStream& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0)
{
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

IcnnModel random_model(RandomStream& rng, GateMode gate, Activation act)
{
  const Eigen::Index in = 2 + static_cast<Eigen::Index>(rng.below(8));
  std::vector<Eigen::Index> hidden;
  const auto depth = 1 + rng.below(3);
  for (std::uint64_t d = 0; d < depth; ++d) hidden.push_back(2 + static_cast<Eigen::Index>(rng.below(10)));
  IcnnModel m(in, hidden, 1 + static_cast<Eigen::Index>(rng.below(4)), act, gate);
  initialize(m, rng.below(1u << 30));
  return m;
}

// 1. Gradients against central differences.
Outcome gradient_oracle()
{
  double worst = 0.0;
  std::size_t checked = 0, models = 0;
  for (auto strategy : {TrainStrategy::post_check(), TrainStrategy::clamp_gate(), TrainStrategy::smooth_gate()}) {
    RandomStream rng(1, static_cast<std::uint64_t>(strategy.kind));
    for (int model_index = 0; model_index < 5; ++model_index, ++models) {
      IcnnModel m;
      Batch batch;
      for (;;) {
        m = random_model(rng, strategy.gate_mode(), Activation::relu());
        batch = Batch{Eigen::MatrixXd(m.in_dim, 8), Eigen::MatrixXd(m.out_dim, 8)};
        for (Eigen::Index c = 0; c < 8; ++c) {
          batch.inputs.col(c) = random_vector(rng, m.in_dim);
          batch.targets.col(c) = random_vector(rng, m.out_dim);
        }
        const ForwardTrace t = forward_batch(m, batch.inputs);
        bool kink = false;
        for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) kink = kink || (t.pre[l].array().abs() < 1e-4).any();
        for (const auto& w : m.W) kink = kink || (w.array().abs() < 1e-4).any();
        if (!kink) break;
      }
      const auto lg = loss_and_gradients(m, batch, strategy);
      for (int trial = 0; trial < 12; ++trial) {
        const auto kind = rng.below(3);
        const std::size_t layer = kind == 0 ? rng.below(m.W.size()) : rng.below(m.U.size());
        IcnnModel probe = m;
        double* p;
        double g;
        if (kind == 0) {
          const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.W[layer].size())));
          p = probe.W[layer].data() + i;
          g = lg.gradients.W[layer].data()[i];
        } else if (kind == 1) {
          const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.U[layer].size())));
          p = probe.U[layer].data() + i;
          g = lg.gradients.U[layer].data()[i];
        } else {
          const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.b[layer].size())));
          p = probe.b[layer].data() + i;
          g = lg.gradients.b[layer].data()[i];
        }
        const double w0 = *p;
        const double fd = oracle::central_difference(
            [&](double v) {
              *p = v;
              return loss_and_gradients(probe, batch, strategy).loss;
            },
            w0, 1e-6);
        worst = std::max(worst, oracle::relative_error(fd, g, 1e-8));
        ++checked;
      }
    }
  }
  return {worst < 1e-4 && checked >= 150,
          std::to_string(checked) + " components over " + std::to_string(models) + " models, worst rel. error " +
              fmt("%.2e", worst)};
}

// 2. Convexity audit on admissible models and a counterexample.
Outcome convexity_suite()
{
  RandomStream rng(2, 0);
  const Activation acts[] = {Activation::relu(), Activation::leaky_relu(0.2), Activation::elu(1.0)};
  const GateMode gates[] = {GateMode::hard_clamp(), GateMode::smooth(-0.01), GateMode::smooth(-0.5)};
  int admissible_passed = 0, total = 0;
  double worst = 0.0;
  for (int i = 0; i < 18; ++i) {
    IcnnModel m = random_model(rng, gates[i % 3], acts[(i / 3) % 3]);
    if (i >= 9) {
      // ungated with non-negative hidden weights
      m.gate = GateMode::none();
      for (auto& w : m.W) w = w.cwiseAbs();
    }
    if (!is_convex_admissible(m)) continue;
    ++total;
    const auto r = check_convexity(m, InputBox::unit(m.in_dim), static_cast<std::uint64_t>(i), 200, 9, 1e-9);
    worst = std::max(worst, r.worst_violation);
    if (r.passed) ++admissible_passed;
  }
  IcnnModel bad(1, {1, 1}, 1);
  bad.U[0](0, 0) = 1.0;
  bad.W[0](0, 0) = 1.0;
  bad.W[1](0, 0) = -1.0;
  const auto r = check_convexity(bad, InputBox{Eigen::VectorXd::Constant(1, -1), Eigen::VectorXd::Constant(1, 1)}, 0,
                                 200, 9, 1e-9);
  const bool witness = !r.passed && r.x.size() == 1 && r.y.size() == 1 && r.lambda > 0 && r.lambda < 1;
  return {admissible_passed == total && total == 18 && witness,
          std::to_string(admissible_passed) + "/" + std::to_string(total) + " admissible models pass (worst " +
              fmt("%.1e", worst) + "); counterexample witness x=" + fmt("%.4f y=%.4f lambda=%.2f violation=%.3e", r.x[0],
                                                                       r.y[0], r.lambda, r.worst_violation)};
}

// 3. Duplicated model equals the original.
Outcome duplication_equivalence()
{
  RandomStream rng(3, 0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    IcnnModel m = random_model(rng, GateMode::smooth(-0.01), Activation::relu());
    m.norm.input_shift = random_vector(rng, m.in_dim);
    m.norm.input_scale = random_vector(rng, m.in_dim, 0.2, 3);
    m.norm.output_shift = random_vector(rng, m.out_dim);
    m.norm.output_scale = random_vector(rng, m.out_dim, 0.2, 3);
    const Eigen::VectorXd x = random_vector(rng, m.in_dim, -2, 2);
    Eigen::VectorXd xx(2 * m.in_dim);
    xx << x, -x;
    worst = std::max(worst, (forward(build_duplicated(m), xx).first - forward(m, x).first).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "100 random (model, x), max |difference| " + fmt("%.2e", worst)};
}

std::string checks_detail(const std::vector<AcceptanceCheck>& checks, bool& all)
{
  std::string out;
  all = !checks.empty();
  for (const auto& c : checks) {
    all = all && c.passed;
    out += std::string(out.empty() ? "" : "; ") + (c.passed ? "ok " : "FAILED ") + c.name + " [" + c.detail + "]";
  }
  return out;
}

// 4. Duplication study orderings.
Outcome duplication_study()
{
  ExperimentSpec spec = load_experiment_spec(fs::path(CONVEXVOLT_CONFIG_DIR) / "duplication.json");
  spec.output_dir = g_work / "duplication";
  const ComparisonTable t = run_duplication_study(spec);
  bool all = false;
  std::string detail = checks_detail(check_duplication_orderings(t), all);
  return {all && spec.n_seeds >= 10, std::to_string(spec.n_seeds) + " seeds: " + detail};
}

// 5. Strategy study orderings.
Outcome strategy_study()
{
  ExperimentSpec spec = load_experiment_spec(fs::path(CONVEXVOLT_CONFIG_DIR) / "strategies.json");
  spec.output_dir = g_work / "strategies";
  const ComparisonTable t = run_strategy_study(spec);
  bool all = false;
  std::string detail = checks_detail(check_strategy_orderings(t), all);
  return {all && spec.n_seeds == 20 && spec.networks.size() >= 2, std::to_string(spec.n_seeds) + " seeds: " + detail};
}

// 6. All-negative start: clamp gate has zero W gradients, smooth gate has s times the ungated ones.
Outcome vanishing_gradient()
{
  const double s = -0.01;
  IcnnModel m(18, {16, 32, 16}, 9);
  initialize(m, 6, WeightInit::all_negative);
  RandomStream rng(6, 1);
  Batch b{Eigen::MatrixXd(18, 32), Eigen::MatrixXd(9, 32)};
  for (Eigen::Index c = 0; c < 32; ++c) {
    b.inputs.col(c) = random_vector(rng, 18);
    b.targets.col(c) = random_vector(rng, 9);
  }
  m.gate = GateMode::hard_clamp();
  double clamp_max = 0.0;
  for (const auto& g : loss_and_gradients(m, b, TrainStrategy::clamp_gate()).gradients.W) {
    clamp_max = std::max(clamp_max, g.cwiseAbs().maxCoeff());
  }
  m.gate = GateMode::smooth(s);
  const auto smooth = loss_and_gradients(m, b, TrainStrategy::smooth_gate(s));
  IcnnModel plain = m;
  plain.gate = GateMode::none();
  for (auto& w : plain.W) w = gate_weights(w, GateMode::smooth(s));
  const auto none = loss_and_gradients(plain, b, TrainStrategy::post_check());
  double smooth_min = std::numeric_limits<double>::infinity(), ratio_err = 0.0;
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    smooth_min = std::min(smooth_min, smooth.gradients.W[l].cwiseAbs().maxCoeff());
    ratio_err = std::max(ratio_err, (smooth.gradients.W[l] - s * none.gradients.W[l]).cwiseAbs().maxCoeff() /
                                        (std::abs(s) * none.gradients.W[l].cwiseAbs().maxCoeff()));
  }
  return {clamp_max == 0.0 && smooth_min > 0.0 && ratio_err < 1e-12,
          "clamp max |dW| = " + fmt("%g", clamp_max) + ", smooth min per-layer max |dW| = " + fmt("%.3e", smooth_min) +
              ", rel. deviation from s x ungated " + fmt("%.1e", ratio_err)};
}

// 7. Power flow against closed form and Newton; residuals and relaxation slack.
Outcome power_flow_oracle()
{
  double v_err = 0.0, residual = 0.0, slack = 0.0;
  {
    std::vector<Bus> buses{{0, std::nullopt, 0, 0}, {1, 0, 0.3, 0.2}};
    const RadialNetwork two(buses, {{0, 1, 0.05, 0.08}});
    const auto sol = solve_distflow(two, two.base_load_p(), two.base_load_q(), {1e-12, 200});
    v_err = std::max(v_err, std::abs(sol.v[1] - oracle::two_bus(1.0, 0.05, 0.08, 0.3, 0.2).v1));
  }
  {
    const RadialNetwork chain({{0, std::nullopt, 0, 0}, {1, 0, 0.12, 0.06}, {2, 1, 0.10, 0.05}},
                              {{0, 1, 0.02, 0.04}, {1, 2, 0.03, 0.03}});
    const RadialNetwork star({{0, std::nullopt, 0, 0}, {1, 0, 0.2, 0.1}, {2, 0, 0.15, 0.02}},
                             {{0, 1, 0.05, 0.02}, {0, 2, 0.01, 0.06}}, 1.05);
    for (const auto* net : {&chain, &star}) {
      const auto sol = solve_distflow(*net, net->base_load_p(), net->base_load_q(), {1e-12, 200});
      v_err = std::max(v_err, (sol.v - oracle::newton_distflow(*net, net->base_load_p(), net->base_load_q()))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
  }
  for (const char* name : {"feeder3.net", "feeder10.net", "feeder33.net"}) {
    const RadialNetwork net = fixture(name);
    ScenarioConfig sc;
    sc.n_samples = 20;
    sc.seed = 7;
    for (const auto& s : generate_dataset(net, sc).samples) {
      const auto sol = solve_distflow(net, s.p, s.q);
      const ResidualReport r = verify_solution(net, s.p, s.q, sol);
      residual = std::max(residual, r.max_violation());
      slack = std::max(slack, r.relaxation_slack.cwiseAbs().maxCoeff());
    }
  }
  return {v_err < 1e-8 && residual < 1e-8 && slack < 1e-8,
          "max |v - oracle| " + fmt("%.1e", v_err) + ", max residual " + fmt("%.1e", residual) +
              ", max |relaxation slack| " + fmt("%.1e", slack)};
}

// 8. Projected gradient reaches the grid oracle on the 3-bus fixture.
Outcome regulation_optimality()
{
  const RadialNetwork net = fixture("feeder3.net");
  ScenarioConfig sc;
  sc.n_samples = 300;
  sc.seed = 8;
  const auto [train_set, test_set] = split_dataset(generate_dataset(net, sc, "feeder3"), 0.8, 8);
  IcnnModel m(4, {8, 8}, 2, Activation::elu(1.0), GateMode::smooth(-0.01));
  fit_normalization(m, train_set);
  initialize(m, 8);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 3e-3;
  train(m, train_set, cfg);

  double worst_gap = -1.0;
  bool feasible = true;
  for (std::size_t k = 0; k < 10; ++k) {
    const Sample& s = test_set.samples[k];
    const Eigen::VectorXd cap = 0.5 * net.base_load_p();
    const RegulationProblem prob(m, s.p, s.q - cap, s.q + cap, Eigen::VectorXd::Ones(2));
    const auto res = solve(prob);
    feasible = feasible && (res.q_star.array() >= prob.q_min().array()).all() &&
               (res.q_star.array() <= prob.q_max().array()).all();
    const GridAudit audit = validate_against_grid(prob, res, 51);
    worst_gap = std::max(worst_gap, audit.gap);
  }
  return {feasible && worst_gap <= 1e-6,
          "10 scenarios, dim(q) = 2, 51x51 grid + polish: worst objective gap " + fmt("%.2e", worst_gap) +
              (feasible ? ", all feasible" : ", INFEASIBLE")};
}

// 9. Seeded CLI runs repeat bitwise; also the single-seed smoke budget.
Outcome determinism()
{
  const std::string cli = CONVEXVOLT_CLI;
  const fs::path data = CONVEXVOLT_DATA_DIR, cfg = fs::path(CONVEXVOLT_CONFIG_DIR) / "smoke.json";
  auto run_all = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::string cmds[] = {
        cli + " gen-data --network " + (data / "feeder10.net").string() + " --samples 300 --seed 5 --out " + d +
            "/data.txt",
        cli + " train --dataset " + d + "/data.txt --strategy smooth --epochs 20 --seed 3 --no-timing --out-model " +
            d + "/model.json --out-report " + d + "/report.csv",
        cli + " train --dataset " + d + "/data.txt --strategy post-check --epochs 20 --seed 3 --no-timing --out-model " +
            d + "/model_post.json --out-report " + d + "/report_post.csv",
        cli + " compare-duplication " + cfg.string() + " --no-timing --out-dir " + d + "/dup",
        cli + " compare-strategies " + cfg.string() + " --no-timing --out-dir " + d + "/strat",
    };
    for (const auto& c : cmds) {
      if (std::system((c + " > " + d + "/log.txt 2>&1").c_str()) != 0) return false;
    }
    fs::remove(dir / "log.txt");
    return true;
  };
  const auto start = std::chrono::steady_clock::now();
  if (!run_all(g_work / "det_a")) return {false, "CLI run failed"};
  const double first = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!run_all(g_work / "det_b")) return {false, "CLI run failed"};

  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(g_work / "det_a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), g_work / "det_a");
    ++files;
    if (!fs::exists(g_work / "det_b" / rel) || read_file(entry.path()) != read_file(g_work / "det_b" / rel)) {
      differing.push_back(rel.string());
    }
  }
  std::string detail = std::to_string(files) + " files compared, " + std::to_string(differing.size()) +
                       " differ; one smoke pass took " + fmt("%.1f s", first) + " (< 60 s)";
  for (const auto& f : differing) detail += " " + f;
  return {differing.empty() && files > 10 && first < 60.0, detail};
}

struct Criterion {
  int number;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv)
{
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "convexvolt_acceptance";
  fs::create_directories(g_work);
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 10, gradient_oracle},
      {2, "convexity suite", 5, convexity_suite},
      {3, "duplication equivalence", 5, duplication_equivalence},
      {4, "duplication-study ordering", 600, duplication_study},
      {5, "strategy-study ordering", 900, strategy_study},
      {6, "vanishing-gradient witness", 1, vanishing_gradient},
      {7, "power-flow oracle", 5, power_flow_oracle},
      {8, "regulation optimality", 60, regulation_optimality},
      {9, "determinism", 120, determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool ok = o.passed && in_time;
    if (!ok) ++failed;
    std::printf("%s criterion %d (%s): %s; %.2f s (budget %.0f s%s)\n", ok ? "PASS" : "FAIL", c.number, c.name,
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", EXCEEDED");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
