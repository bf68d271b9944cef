#include "convexvolt/datagen.hpp"
#include "convexvolt/error.hpp"
#include "convexvolt/experiment.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/regulate.hpp"
#include "convexvolt/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace convexvolt;

namespace {

std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Whitespace, comma or newline separated numbers.
Eigen::VectorXd read_vector(const std::string& path)
{
  std::string text = read_file(path);
  for (char& c : text) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(text);
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    if (token[0] == '#') {
      std::getline(in, token);
      continue;
    }
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ParseError(path + ": not a number: '" + token + "'");
    }
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

int report_checks(const std::vector<AcceptanceCheck>& checks, bool assert_checks)
{
  bool ok = true;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return assert_checks && !ok ? 2 : 0;
}

void warn_diverged(const ComparisonTable& table)
{
  for (const auto& row : table.rows) {
    if (row.diverged_runs) {
      std::cerr << "warning: " << row.network_id << "/" << row.arm << ": " << row.diverged_runs
                << " diverged run(s) excluded from statistics\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Input-convex surrogate training and voltage regulation on radial feeders"};
  app.require_subcommand(1);

  // gen-data
  std::string network_path, out_path;
  ScenarioConfig scenario;
  auto* gen = app.add_subcommand("gen-data", "Sample operating points and solve power flow");
  gen->add_option("--network", network_path, "Network file")->required()->check(CLI::ExistingFile);
  gen->add_option("--samples", scenario.n_samples, "Number of scenarios");
  gen->add_option("--seed", scenario.seed);
  gen->add_option("--scale-min", scenario.load_scale_min);
  gen->add_option("--scale-max", scenario.load_scale_max);
  gen->add_option("--pf-min", scenario.pf_min);
  gen->add_option("--pf-max", scenario.pf_max);
  gen->add_option("--out", out_path, "Dataset file")->required();

  // train
  std::string dataset_path, model_path, report_path, strategy_name = "smooth", optimizer_name = "adam";
  std::string activation_name = "relu";
  bool no_timing = false;
  double slope = -0.01, alpha = 0.0, train_fraction = 1.0;
  std::vector<Eigen::Index> hidden{16, 32, 16};
  TrainConfig tcfg;
  bool normalize = true;
  auto* tr = app.add_subcommand("train", "Train an input-convex surrogate");
  tr->add_option("--network", network_path, "Network file (checked against the dataset)")->check(CLI::ExistingFile);
  tr->add_option("--dataset", dataset_path)->required()->check(CLI::ExistingFile);
  tr->add_option("--strategy", strategy_name)->check(CLI::IsMember({"post-check", "clamp", "smooth"}));
  tr->add_option("--slope", slope, "Smooth gate slope s <= 0");
  tr->add_option("--epochs", tcfg.epochs);
  tr->add_option("--batch-size", tcfg.batch_size);
  tr->add_option("--lr", tcfg.learning_rate);
  tr->add_option("--optimizer", optimizer_name)->check(CLI::IsMember({"adam", "sgd"}));
  tr->add_option("--seed", tcfg.seed);
  tr->add_option("--hidden", hidden, "Hidden widths")->expected(1, -1);
  tr->add_option("--activation", activation_name)->check(CLI::IsMember({"relu", "leaky_relu", "elu"}));
  tr->add_option("--alpha", alpha);
  tr->add_option("--train-fraction", train_fraction, "Train on this fraction of the dataset");
  tr->add_flag("!--no-normalize", normalize, "Disable input/output standardization");
  tr->add_option("--out-model", model_path)->required();
  tr->add_option("--out-report", report_path);
  tr->add_flag("--no-timing", no_timing, "Write wall_ms as 0");

  // eval
  auto* ev = app.add_subcommand("eval", "MAPE of a model on a dataset");
  ev->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out_path, "Per-bus CSV");

  // regulate
  std::string p_path, qmin_path, qmax_path, a_path;
  double v_ref = 1.0;
  auto* reg = app.add_subcommand("regulate", "Minimize the weighted surrogate over a q box");
  reg->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  reg->add_option("--p", p_path)->required()->check(CLI::ExistingFile);
  reg->add_option("--q-min", qmin_path)->required()->check(CLI::ExistingFile);
  reg->add_option("--q-max", qmax_path)->required()->check(CLI::ExistingFile);
  reg->add_option("--a", a_path)->required()->check(CLI::ExistingFile);
  reg->add_option("--v-ref", v_ref);
  reg->add_option("--out", out_path)->required();

  // studies
  std::string config_path;
  bool assert_checks = false;
  std::size_t scenarios = 20;
  double capacity = 0.5;
  auto* dup = app.add_subcommand("compare-duplication", "Basic vs duplicated-input ICNN study");
  auto* strat = app.add_subcommand("compare-strategies", "Convexification strategy study");
  auto* e2e = app.add_subcommand("end-to-end", "Train, then regulate held-out scenarios");
  for (auto* sub : {dup, strat, e2e}) {
    sub->add_option("config", config_path, "Experiment JSON config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out-dir", out_path, "Override the config's output directory");
    sub->add_flag("--no-timing", no_timing, "Write wall-clock columns as 0");
  }
  for (auto* sub : {dup, strat}) sub->add_flag("--assert", assert_checks, "Exit nonzero if an ordering check fails");
  e2e->add_option("--scenarios", scenarios);
  e2e->add_option("--capacity", capacity, "q bounds are sample q +- capacity * base load p");
  e2e->add_flag("--assert", assert_checks, "Exit nonzero unless >= 80% of scenarios improve the true objective");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const RadialNetwork net = load_network(network_path);
      const Dataset ds = generate_dataset(net, scenario, std::filesystem::path(network_path).stem().string());
      save_dataset(ds, out_path);
      std::cout << "wrote " << ds.size() << " samples (" << ds.skipped << " skipped) to " << out_path << '\n';
      return 0;
    }

    if (tr->parsed()) {
      Dataset ds = load_dataset(dataset_path);
      if (ds.empty()) throw InvalidArgument("dataset is empty");
      if (!network_path.empty()) {
        const RadialNetwork net = load_network(network_path);
        if (net.load_bus_count() != ds.bus_count()) throw ShapeError("dataset does not match the network");
      }
      if (train_fraction < 1.0) ds = split_dataset(ds, train_fraction, ds.config.seed).first;
      tcfg.strategy = TrainStrategy::from_name(strategy_name, slope);
      tcfg.optimizer = optimizer_name == "adam" ? OptimizerConfig::adam() : OptimizerConfig::sgd();
      const auto m = static_cast<Eigen::Index>(ds.bus_count());
      IcnnModel model(2 * m, hidden, m, Activation::from_name(activation_name, alpha), tcfg.strategy.gate_mode());
      if (normalize) fit_normalization(model, ds);
      initialize(model, tcfg.seed);
      const TrainReport report = train(model, ds, tcfg);
      save_model(model, model_path);
      if (!report_path.empty()) {
        std::ostringstream csv;
        csv << "iteration,loss,wall_ms,negative_weight_events\n";
        for (std::size_t i = 0; i < report.loss_history.size(); ++i) {
          const double ms = no_timing ? 0.0 : report.wall_ms[i];
          csv << report.logged_iterations[i] << ',' << num(report.loss_history[i]) << ',' << num(ms) << ','
              << report.negative_weight_events[i] << '\n';
        }
        write_file(report_path, csv.str());
      }
      std::cout << "strategy " << tcfg.strategy.name() << ": initial loss " << report.initial_loss << ", final loss "
                << report.final_loss << " after " << report.iterations << " iterations ("
                << report.wall_time << " s)\n";
      if (report.diverged) {
        std::cerr << "warning: training diverged; partial model written\n";
        return 3;
      }
      return 0;
    }

    if (ev->parsed()) {
      const IcnnModel model = load_model(model_path);
      const Dataset ds = load_dataset(dataset_path);
      const MapeReport mape = evaluate_mape(model, ds, ds.config.v_ref);
      std::cout << "mean MAPE " << mape.mean << " %, max bus MAPE " << mape.max << " %\n"
                << "deviation-relative MAPE mean " << mape.mean_deviation << " %, max " << mape.max_deviation
                << " %\n";
      if (!out_path.empty()) {
        std::ostringstream csv;
        csv << "bus,mape,mape_deviation\n";
        for (Eigen::Index j = 0; j < mape.per_bus.size(); ++j) {
          csv << j + 1 << ',' << num(mape.per_bus[j]) << ',' << num(mape.per_bus_deviation[j]) << '\n';
        }
        write_file(out_path, csv.str());
      }
      return 0;
    }

    if (reg->parsed()) {
      const IcnnModel model = load_model(model_path);
      const RegulationProblem problem(model, read_vector(p_path), read_vector(qmin_path), read_vector(qmax_path),
                                      read_vector(a_path), v_ref);
      const RegulationResult result = solve(problem);
      std::ostringstream csv;
      csv << "# q is the controllable net reactive injection at each bus, replacing the load-side q\n";
      csv << "q_star";
      for (Eigen::Index j = 0; j < result.q_star.size(); ++j) csv << ',' << num(result.q_star[j]);
      csv << "\nobjective," << num(result.objective) << "\niterations," << result.iterations << "\nconverged,"
          << (result.converged ? 1 : 0) << "\ntrace";
      for (double t : result.trace) csv << ',' << num(t);
      csv << '\n';
      write_file(out_path, csv.str());
      std::cout << "objective " << result.objective << " after " << result.iterations << " iterations\n";
      return 0;
    }

    ExperimentSpec spec = load_experiment_spec(config_path);
    if (!out_path.empty()) spec.output_dir = out_path;
    if (no_timing) spec.record_timing = false;

    if (dup->parsed() || strat->parsed()) {
      const ComparisonTable table = dup->parsed() ? run_duplication_study(spec) : run_strategy_study(spec);
      warn_diverged(table);
      std::cout << read_file(spec.output_dir / "summary.txt");
      const auto checks = dup->parsed() ? check_duplication_orderings(table) : check_strategy_orderings(table);
      bool ok = true;
      for (const auto& c : checks) ok = ok && c.passed;
      return assert_checks && !ok ? 2 : 0;
    }

    if (e2e->parsed()) {
      EndToEndOptions options;
      options.n_scenarios = scenarios;
      options.capacity_fraction = capacity;
      const EndToEndReport report = run_end_to_end(spec, options);
      std::cout << read_file(spec.output_dir / "end_to_end_summary.txt");
      const bool ok = 5 * report.true_improved >= 4 * report.scenarios.size();
      return report_checks({{"true objective improved in >= 80% of scenarios", ok,
                             std::to_string(report.true_improved) + "/" + std::to_string(report.scenarios.size())}},
                           assert_checks);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
