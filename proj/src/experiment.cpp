#include "convexvolt/experiment.hpp"

#include "convexvolt/error.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace convexvolt {

std::string variant_name(Variant v)
{
  switch (v) {
    case Variant::basic: return "basic";
    case Variant::dup_trick_equal_params: return "dup_trick_equal_params";
    case Variant::dup_trick_equal_neurons: return "dup_trick_equal_neurons";
  }
  return "?";
}

Variant variant_from_name(const std::string& name)
{
  if (name == "basic") return Variant::basic;
  if (name == "dup_trick_equal_params") return Variant::dup_trick_equal_params;
  if (name == "dup_trick_equal_neurons") return Variant::dup_trick_equal_neurons;
  throw InvalidArgument("unknown variant '" + name + "'");
}

void ExperimentSpec::validate() const
{
  if (networks.empty()) throw InvalidArgument("experiment needs at least one network");
  if (n_seeds < 1) throw InvalidArgument("n_seeds must be >= 1");
  if (variants.empty() && strategies.empty()) throw InvalidArgument("experiment needs a variant or strategy");
  data.validate();
  train.validate();
}

// ---------------------------------------------------------------------------
// Config parsing

ExperimentSpec parse_experiment_spec(const std::string& json_text, const std::filesystem::path& base_dir)
{
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }

  ExperimentSpec spec;
  try {
    for (const auto& n : doc.at("networks")) {
      std::filesystem::path p = n.get<std::string>();
      spec.networks.push_back(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
    }
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      spec.data.n_samples = d.value("n_samples", spec.data.n_samples);
      spec.data.load_scale_min = d.value("scale_min", spec.data.load_scale_min);
      spec.data.load_scale_max = d.value("scale_max", spec.data.load_scale_max);
      spec.data.pf_min = d.value("pf_min", spec.data.pf_min);
      spec.data.pf_max = d.value("pf_max", spec.data.pf_max);
      spec.data.seed = d.value("seed", spec.data.seed);
      spec.data.v_ref = d.value("v_ref", spec.data.v_ref);
      spec.train_fraction = d.value("train_fraction", spec.train_fraction);
    }
    if (doc.contains("model")) {
      const auto& m = doc["model"];
      if (m.contains("hidden_dims")) spec.hidden_dims = m["hidden_dims"].get<std::vector<Eigen::Index>>();
      spec.activation = Activation::from_name(m.value("activation", std::string("relu")), m.value("alpha", 0.0));
      spec.normalize = m.value("normalize", spec.normalize);
      if (m.contains("equal_params_dims") && !m["equal_params_dims"].is_null()) {
        spec.equal_params_dims = m["equal_params_dims"].get<std::vector<Eigen::Index>>();
      }
    }
    for (const auto& v : doc.value("variants", json::array())) spec.variants.push_back(variant_from_name(v.get<std::string>()));
    const double default_slope = doc.contains("train") ? doc["train"].value("slope", -0.01) : -0.01;
    for (const auto& s : doc.value("strategies", json::array())) {
      spec.strategies.push_back(TrainStrategy::from_name(s.get<std::string>(), default_slope));
    }
    spec.n_seeds = doc.value("n_seeds", spec.n_seeds);
    spec.first_seed = doc.value("first_seed", spec.first_seed);
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      spec.train.epochs = t.value("epochs", spec.train.epochs);
      spec.train.batch_size = t.value("batch_size", spec.train.batch_size);
      spec.train.learning_rate = t.value("learning_rate", spec.train.learning_rate);
      spec.train.log_every = t.value("log_every", spec.train.log_every);
      const std::string opt = t.value("optimizer", std::string("adam"));
      if (opt == "adam") {
        spec.train.optimizer = OptimizerConfig::adam(t.value("beta1", 0.9), t.value("beta2", 0.999), t.value("epsilon", 1e-8));
      } else if (opt == "sgd") {
        spec.train.optimizer = OptimizerConfig::sgd();
      } else {
        throw InvalidArgument("unknown optimizer '" + opt + "'");
      }
      spec.train.strategy = TrainStrategy::from_name(t.value("strategy", std::string("post_check")), default_slope);
    }
    if (doc.contains("output_dir")) {
      std::filesystem::path out = doc["output_dir"].get<std::string>();
      spec.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
    }
    spec.record_timing = doc.value("record_timing", spec.record_timing);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path)
{
  return parse_experiment_spec(read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Statistics

MeanStd mean_std(const std::vector<double>& values)
{
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

const ComparisonRow* ComparisonTable::find(const std::string& network_id, const std::string& arm) const
{
  for (const auto& row : rows) {
    if (row.network_id == network_id && row.arm == arm) return &row;
  }
  return nullptr;
}

ComparisonTable aggregate(std::vector<RunRecord> runs)
{
  ComparisonTable table;
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.network_id, r.arm);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [network, arm] : keys) {
    ComparisonRow row;
    row.network_id = network;
    row.arm = arm;
    std::vector<double> wall, ms, loss, sum_sq, mape, mape_dev;
    Eigen::VectorXd per_bus;
    for (const auto& r : runs) {
      if (r.network_id != network || r.arm != arm) continue;
      row.hidden_dims = r.hidden_dims;
      row.parameter_count = r.parameter_count;
      if (r.diverged) {
        ++row.diverged_runs;
        continue;
      }
      ++row.completed_runs;
      wall.push_back(r.wall_time);
      ms.push_back(r.ms_per_iteration);
      loss.push_back(r.final_loss);
      sum_sq.push_back(r.final_sum_squares);
      mape.push_back(r.mean_mape);
      mape_dev.push_back(r.mean_mape_deviation);
      per_bus = per_bus.size() ? Eigen::VectorXd(per_bus + r.per_bus_mape) : r.per_bus_mape;
    }
    row.wall_time = mean_std(wall);
    row.ms_per_iteration = mean_std(ms);
    row.final_loss = mean_std(loss);
    row.final_sum_squares = mean_std(sum_sq);
    row.mean_mape = mean_std(mape);
    row.mean_mape_deviation = mean_std(mape_dev);
    if (per_bus.size() > 0) {
      per_bus /= static_cast<double>(row.completed_runs);
      row.bus_mean_mape = per_bus.mean();
      row.bus_max_mape = per_bus.maxCoeff();
    }
    table.rows.push_back(std::move(row));
  }
  table.runs = std::move(runs);
  return table;
}

std::vector<Eigen::Index> match_parameter_count(const std::vector<Eigen::Index>& reference, Eigen::Index in_dim,
                                                Eigen::Index out_dim, std::size_t target_params)
{
  if (reference.empty()) return {};
  const Eigen::Index lead = reference.front();
  std::vector<Eigen::Index> best;
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (Eigen::Index t = 1; t <= 4 * lead; ++t) {
    std::vector<Eigen::Index> dims;
    for (auto h : reference) {
      dims.push_back(std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(
                                                  static_cast<double>(h) * static_cast<double>(t) / static_cast<double>(lead)))));
    }
    const std::size_t count = IcnnModel(in_dim, dims, out_dim).parameter_count();
    const std::size_t diff = count > target_params ? count - target_params : target_params - count;
    if (diff < best_diff) {
      best_diff = diff;
      best = dims;
    }
  }
  return best;
}

std::string dataset_hash(const Dataset& ds)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : format_dataset(ds)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Output helpers

namespace {

std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string dims_text(const std::vector<Eigen::Index>& dims)
{
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? " " : "") + std::to_string(dims[i]);
  return out + "]";
}

std::string format_table_csv(const ComparisonTable& table)
{
  std::ostringstream out;
  out << "network,arm,hidden_dims,parameters,completed_runs,diverged_runs,mean_wall_s,std_wall_s,mean_ms_per_iter,"
         "std_ms_per_iter,mean_final_loss,std_final_loss,mean_final_sum_sq,std_final_sum_sq,mean_mape,std_mape,"
         "mean_mape_deviation,std_mape_deviation,bus_mean_mape,bus_max_mape\n";
  for (const auto& r : table.rows) {
    out << r.network_id << ',' << r.arm << ',' << dims_text(r.hidden_dims) << ',' << r.parameter_count << ','
        << r.completed_runs << ',' << r.diverged_runs << ',' << num(r.wall_time.mean) << ',' << num(r.wall_time.std)
        << ',' << num(r.ms_per_iteration.mean) << ',' << num(r.ms_per_iteration.std) << ','
        << num(r.final_loss.mean) << ',' << num(r.final_loss.std) << ',' << num(r.final_sum_squares.mean) << ','
        << num(r.final_sum_squares.std) << ',' << num(r.mean_mape.mean) << ',' << num(r.mean_mape.std) << ','
        << num(r.mean_mape_deviation.mean) << ',' << num(r.mean_mape_deviation.std) << ','
        << num(r.bus_mean_mape) << ',' << num(r.bus_max_mape) << '\n';
  }
  return out.str();
}

std::string format_runs_csv(const std::vector<RunRecord>& runs)
{
  std::ostringstream out;
  out << "network,arm,seed,dataset_hash,hidden_dims,parameters,diverged,initial_loss,final_loss,final_sum_sq,"
         "mean_mape,max_mape,mean_mape_deviation,wall_s,ms_per_iter,iterations,clamped_entries\n";
  for (const auto& r : runs) {
    out << r.network_id << ',' << r.arm << ',' << r.seed << ',' << r.dataset_hash << ',' << dims_text(r.hidden_dims)
        << ',' << r.parameter_count << ',' << (r.diverged ? 1 : 0) << ',' << num(r.initial_loss) << ','
        << num(r.final_loss) << ',' << num(r.final_sum_squares) << ',' << num(r.mean_mape) << ','
        << num(r.max_mape) << ',' << num(r.mean_mape_deviation) << ',' << num(r.wall_time) << ','
        << num(r.ms_per_iteration) << ',' << r.iterations << ',' << r.total_clamped << '\n';
  }
  return out.str();
}

std::string format_history_csv(const std::vector<double>& history)
{
  std::ostringstream out;
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) out << i + 1 << ',' << num(history[i]) << '\n';
  return out.str();
}

std::string format_checks(const std::vector<AcceptanceCheck>& checks)
{
  std::ostringstream out;
  for (const auto& c : checks) out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  return out.str();
}

std::string format_summary(const std::string& title, const ComparisonTable& table,
                           const std::vector<AcceptanceCheck>& checks)
{
  std::ostringstream out;
  out << title << "\n\n";
  out << std::left << std::setw(12) << "network" << std::setw(26) << "arm" << std::setw(14) << "hidden"
      << std::setw(8) << "params" << std::setw(6) << "runs" << std::setw(24) << "final loss (mean+-std)"
      << std::setw(22) << "MAPE % (mean+-std)" << std::setw(12) << "ms/iter" << "bus mean/max MAPE %\n";
  for (const auto& r : table.rows) {
    char loss[64], mape[64], ms[32], bus[48];
    std::snprintf(loss, sizeof loss, "%.4g+-%.2g", r.final_loss.mean, r.final_loss.std);
    std::snprintf(mape, sizeof mape, "%.4f+-%.4f", r.mean_mape.mean, r.mean_mape.std);
    std::snprintf(ms, sizeof ms, "%.4f", r.ms_per_iteration.mean);
    std::snprintf(bus, sizeof bus, "%.4f / %.4f", r.bus_mean_mape, r.bus_max_mape);
    out << std::left << std::setw(12) << r.network_id << std::setw(26) << r.arm << std::setw(14)
        << dims_text(r.hidden_dims) << std::setw(8) << r.parameter_count << std::setw(6)
        << (std::to_string(r.completed_runs) + (r.diverged_runs ? "*" : "")) << std::setw(24) << loss
        << std::setw(22) << mape << std::setw(12) << ms << bus << '\n';
    if (r.diverged_runs) out << "  * " << r.diverged_runs << " diverged run(s) excluded\n";
  }
  if (!checks.empty()) out << '\n' << format_checks(checks);
  return out.str();
}

struct PreparedData {
  std::string network_id;
  RadialNetwork net;
  Dataset train;
  Dataset test;
  std::string hash;
};

PreparedData prepare(const std::filesystem::path& network_path, const ExperimentSpec& spec)
{
  RadialNetwork net = load_network(network_path);
  const std::string id = network_path.stem().string();
  Dataset all = generate_dataset(net, spec.data, id);
  auto [train_set, test_set] = split_dataset(all, spec.train_fraction, spec.data.seed);
  return {id, std::move(net), std::move(train_set), std::move(test_set), dataset_hash(all)};
}

Eigen::VectorXd per_bus_abs_error(const IcnnModel& model, const Dataset& test, double v_ref)
{
  const Eigen::MatrixXd y = forward_batch(model, test.input_matrix()).output;
  Eigen::VectorXd err = Eigen::VectorXd::Zero(y.rows());
  for (std::size_t k = 0; k < test.size(); ++k) {
    err += ((v_ref - y.col(static_cast<Eigen::Index>(k)).array()) - test.samples[k].v_true.array()).abs().matrix();
  }
  return err / static_cast<double>(test.size());
}

/// Trains one model; `mirrored` builds the [x; -x] variant from the same initial function.
RunRecord run_one(const PreparedData& data, const ExperimentSpec& spec, const std::string& arm,
                  const std::vector<Eigen::Index>& dims, bool mirrored, const TrainStrategy& strategy,
                  std::uint64_t seed)
{
  const auto m = static_cast<Eigen::Index>(data.train.bus_count());
  IcnnModel model(2 * m, dims, m, spec.activation, strategy.gate_mode());
  if (spec.normalize) fit_normalization(model, data.train);
  initialize(model, seed);
  if (mirrored) model = build_duplicated(model);

  TrainConfig cfg = spec.train;
  cfg.seed = seed;
  cfg.strategy = strategy;
  cfg.mirrored_input = mirrored;
  const TrainReport report = train(model, data.train, cfg);

  RunRecord r;
  r.network_id = data.network_id;
  r.arm = arm;
  r.seed = seed;
  r.dataset_hash = data.hash;
  r.hidden_dims = dims;
  r.parameter_count = model.parameter_count();
  r.diverged = report.diverged;
  r.initial_loss = report.initial_loss;
  r.final_loss = report.final_loss;
  r.final_sum_squares = report.final_sum_squares;
  r.iterations = report.iterations;
  r.total_clamped = report.total_clamped;
  r.loss_history = report.loss_history;
  if (spec.record_timing) {
    r.wall_time = report.wall_time;
    r.ms_per_iteration = report.ms_per_iteration();
  }
  if (!report.diverged) {
    const IcnnModel plain = mirrored ? collapse_duplicated(model) : model;
    const MapeReport mape = evaluate_mape(plain, data.test, spec.data.v_ref);
    r.mean_mape = mape.mean;
    r.max_mape = mape.max;
    r.mean_mape_deviation = mape.mean_deviation;
    r.per_bus_mape = mape.per_bus;
    r.per_bus_abs_error = per_bus_abs_error(plain, data.test, spec.data.v_ref);
  }
  return r;
}

void write_curves(const ComparisonTable& table, const std::filesystem::path& dir)
{
  std::vector<std::string> arms;
  std::vector<std::vector<std::vector<double>>> histories;
  const bool several_networks =
      std::any_of(table.rows.begin(), table.rows.end(),
                  [&](const ComparisonRow& row) { return row.network_id != table.rows.front().network_id; });
  for (const auto& r : table.runs) {
    const std::string arm = several_networks ? r.network_id + ":" + r.arm : r.arm;
    write_file(dir / "curves" / (r.network_id + "_" + r.arm + "_seed" + std::to_string(r.seed) + ".csv"),
               format_history_csv(r.loss_history));
    if (r.diverged) continue;
    auto it = std::find(arms.begin(), arms.end(), arm);
    if (it == arms.end()) {
      arms.push_back(arm);
      histories.emplace_back();
      it = arms.end() - 1;
    }
    histories[static_cast<std::size_t>(it - arms.begin())].push_back(r.loss_history);
  }
  if (!arms.empty()) emit_loglog_curves(arms, histories, dir / "curves_loglog.csv");
}

}  // namespace

// ---------------------------------------------------------------------------
// Studies

ComparisonTable run_duplication_study(const ExperimentSpec& spec)
{
  spec.validate();
  if (spec.variants.empty()) throw InvalidArgument("duplication study needs variants");
  const PreparedData data = prepare(spec.networks.front(), spec);
  const auto m = static_cast<Eigen::Index>(data.train.bus_count());

  const std::size_t basic_params = IcnnModel(2 * m, spec.hidden_dims, m).parameter_count();
  const std::vector<Eigen::Index> equal_params_dims =
      spec.equal_params_dims.empty() ? match_parameter_count(spec.hidden_dims, 4 * m, m, basic_params)
                                     : spec.equal_params_dims;

  struct Task {
    Variant variant;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Variant v : spec.variants) {
    for (std::size_t k = 0; k < spec.n_seeds; ++k) tasks.push_back({v, spec.first_seed + k});
  }
  std::vector<RunRecord> runs(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const Task& t = tasks[i];
    const bool mirrored = t.variant != Variant::basic;
    const auto& dims = t.variant == Variant::dup_trick_equal_params ? equal_params_dims : spec.hidden_dims;
    runs[i] = run_one(data, spec, variant_name(t.variant), dims, mirrored, spec.train.strategy, t.seed);
  });

  ComparisonTable table = aggregate(std::move(runs));
  const auto checks = check_duplication_orderings(table);
  write_file(spec.output_dir / "table.csv", format_table_csv(table));
  write_file(spec.output_dir / "runs.csv", format_runs_csv(table.runs));
  write_curves(table, spec.output_dir);
  write_file(spec.output_dir / "summary.txt",
             format_summary("Duplication study on " + data.network_id + " (" + std::to_string(spec.n_seeds) +
                                " seeds, strategy " + spec.train.strategy.name() + ")",
                            table, checks));
  return table;
}

ComparisonTable run_strategy_study(const ExperimentSpec& spec)
{
  spec.validate();
  if (spec.strategies.empty()) throw InvalidArgument("strategy study needs strategies");
  std::vector<PreparedData> feeders;
  for (const auto& path : spec.networks) feeders.push_back(prepare(path, spec));

  struct Task {
    std::size_t feeder;
    TrainStrategy strategy;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t f = 0; f < feeders.size(); ++f) {
    for (const auto& s : spec.strategies) {
      for (std::size_t k = 0; k < spec.n_seeds; ++k) tasks.push_back({f, s, spec.first_seed + k});
    }
  }
  std::vector<RunRecord> runs(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const Task& t = tasks[i];
    runs[i] = run_one(feeders[t.feeder], spec, t.strategy.name(), spec.hidden_dims, false, t.strategy, t.seed);
  });

  ComparisonTable table = aggregate(std::move(runs));
  const auto checks = check_strategy_orderings(table);
  write_file(spec.output_dir / "table.csv", format_table_csv(table));
  write_file(spec.output_dir / "runs.csv", format_runs_csv(table.runs));
  write_curves(table, spec.output_dir);

  // Seed-averaged |V_hat - V| per bus, one column per (network, strategy).
  std::ostringstream mismatch;
  mismatch << "network,bus";
  for (const auto& s : spec.strategies) mismatch << ',' << s.name() << "_abs_error," << s.name() << "_mape";
  mismatch << '\n';
  for (const auto& feeder : feeders) {
    const auto m = static_cast<Eigen::Index>(feeder.train.bus_count());
    std::vector<Eigen::VectorXd> err(spec.strategies.size(), Eigen::VectorXd::Zero(m));
    std::vector<Eigen::VectorXd> mape(spec.strategies.size(), Eigen::VectorXd::Zero(m));
    std::vector<double> count(spec.strategies.size(), 0.0);
    for (const auto& r : table.runs) {
      if (r.network_id != feeder.network_id || r.diverged) continue;
      for (std::size_t s = 0; s < spec.strategies.size(); ++s) {
        if (spec.strategies[s].name() != r.arm) continue;
        err[s] += r.per_bus_abs_error;
        mape[s] += r.per_bus_mape;
        count[s] += 1.0;
      }
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      mismatch << feeder.network_id << ',' << j + 1;
      for (std::size_t s = 0; s < spec.strategies.size(); ++s) {
        const double c = std::max(1.0, count[s]);
        mismatch << ',' << num(err[s][j] / c) << ',' << num(mape[s][j] / c);
      }
      mismatch << '\n';
    }
  }
  write_file(spec.output_dir / "per_bus_mismatch.csv", mismatch.str());
  write_file(spec.output_dir / "summary.txt",
             format_summary("Strategy study (" + std::to_string(spec.n_seeds) + " seeds)", table, checks));
  return table;
}

std::string format_loglog_curves(const std::vector<std::string>& arms,
                                 const std::vector<std::vector<std::vector<double>>>& histories)
{
  if (arms.empty() || arms.size() != histories.size()) throw InvalidArgument("curves need one history set per arm");
  std::size_t length = std::numeric_limits<std::size_t>::max();
  for (const auto& runs : histories) {
    if (runs.empty()) throw InvalidArgument("arm without runs");
    for (const auto& h : runs) length = std::min(length, h.size());
  }
  if (length == 0) throw InvalidArgument("empty loss history");

  std::ostringstream out;
  out << "iteration";
  for (const auto& a : arms) out << ',' << a << "_mean," << a << "_std";
  out << '\n';
  std::vector<double> column;
  for (std::size_t i = 0; i < length; ++i) {
    out << i + 1;
    for (const auto& runs : histories) {
      column.clear();
      for (const auto& h : runs) column.push_back(h[i]);
      const MeanStd s = mean_std(column);
      out << ',' << num(s.mean) << ',' << num(s.std);
    }
    out << '\n';
  }
  return out.str();
}

void emit_loglog_curves(const std::vector<std::string>& arms,
                        const std::vector<std::vector<std::vector<double>>>& histories, const std::filesystem::path& path)
{
  write_file(path, format_loglog_curves(arms, histories));
}

// ---------------------------------------------------------------------------
// Orderings

std::vector<AcceptanceCheck> check_duplication_orderings(const ComparisonTable& table)
{
  std::vector<AcceptanceCheck> checks;
  if (table.rows.empty()) return checks;
  const std::string& net = table.rows.front().network_id;
  const ComparisonRow* basic = table.find(net, "basic");
  const ComparisonRow* equal_params = table.find(net, "dup_trick_equal_params");
  const ComparisonRow* equal_neurons = table.find(net, "dup_trick_equal_neurons");
  char buf[256];
  if (basic && equal_params) {
    const double threshold = basic->final_loss.mean - basic->final_loss.std;
    std::snprintf(buf, sizeof buf, "trick %.6g vs basic %.6g (basic std %.3g, params %zu vs %zu)",
                  equal_params->final_loss.mean, basic->final_loss.mean, basic->final_loss.std,
                  equal_params->parameter_count, basic->parameter_count);
    checks.push_back({"equal-params trick not better than basic by > 1 std",
                      equal_params->completed_runs > 0 && equal_params->final_loss.mean >= threshold, buf});
  }
  if (basic && equal_neurons) {
    std::snprintf(buf, sizeof buf, "trick %.6g vs basic %.6g", equal_neurons->final_loss.mean, basic->final_loss.mean);
    checks.push_back({"equal-neurons trick has lower mean final loss",
                      equal_neurons->completed_runs > 0 && equal_neurons->final_loss.mean < basic->final_loss.mean,
                      buf});
    const double ratio = basic->ms_per_iteration.mean > 0.0
                             ? equal_neurons->ms_per_iteration.mean / basic->ms_per_iteration.mean
                             : 0.0;
    std::snprintf(buf, sizeof buf, "%.4f vs %.4f ms/iter (ratio %.3f)", equal_neurons->ms_per_iteration.mean,
                  basic->ms_per_iteration.mean, ratio);
    checks.push_back({"equal-neurons trick costs >= 10% more per iteration", ratio >= 1.10, buf});
  }
  return checks;
}

std::vector<AcceptanceCheck> check_strategy_orderings(const ComparisonTable& table)
{
  std::vector<AcceptanceCheck> checks;
  std::vector<std::string> networks;
  for (const auto& row : table.rows) {
    if (std::find(networks.begin(), networks.end(), row.network_id) == networks.end()) networks.push_back(row.network_id);
  }
  char buf[256];
  for (const auto& net : networks) {
    const ComparisonRow* post = table.find(net, "post_check");
    const ComparisonRow* smooth = table.find(net, "smooth_gate");
    if (!post || !smooth) continue;
    std::snprintf(buf, sizeof buf, "smooth %.4f%% vs post-check %.4f%%", smooth->mean_mape.mean, post->mean_mape.mean);
    checks.push_back({net + ": smooth_gate mean MAPE below post_check",
                      smooth->completed_runs > 0 && smooth->mean_mape.mean < post->mean_mape.mean, buf});
    std::snprintf(buf, sizeof buf, "smooth %.4g vs post-check %.4g", smooth->final_loss.std, post->final_loss.std);
    checks.push_back({net + ": smooth_gate final-loss std <= post_check", smooth->final_loss.std <= post->final_loss.std,
                      buf});
  }
  return checks;
}

// ---------------------------------------------------------------------------
// End to end

EndToEndReport end_to_end(const RadialNetwork& net, const IcnnModel& model, const Dataset& held_out,
                          const EndToEndOptions& options)
{
  const auto m = static_cast<Eigen::Index>(net.load_bus_count());
  if (model.in_dim != 2 * m || model.out_dim != m) throw ShapeError("model does not match network");
  const Eigen::VectorXd capacity = options.capacity_fraction * net.base_load_p().cwiseAbs();
  const double v_ref = held_out.config.v_ref;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);

  auto true_objective = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    const PowerFlowSolution sol = solve_distflow(net, p, q);
    return (voltage_magnitudes(sol).tail(m).array() - v_ref).abs().sum();
  };

  EndToEndReport report;
  const std::size_t n = std::min(options.n_scenarios, held_out.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Sample& s = held_out.samples[k];
    const RegulationProblem problem(model, s.p, s.q - capacity, s.q + capacity, ones, v_ref);
    const RegulationResult result = solve(problem, options.solver);

    ScenarioOutcome o;
    o.sample_index = k;
    o.predicted_q0 = objective(problem, problem.midpoint());
    o.predicted_star = result.objective;
    o.true_q0 = true_objective(s.p, problem.midpoint());
    o.true_star = true_objective(s.p, result.q_star);
    o.iterations = result.iterations;
    o.converged = result.converged;
    o.q_star = result.q_star;
    if (o.predicted_star <= o.predicted_q0) ++report.predicted_improved;
    if (o.true_star <= o.true_q0) ++report.true_improved;
    report.scenarios.push_back(std::move(o));
  }
  return report;
}

EndToEndReport run_end_to_end(const ExperimentSpec& spec, const EndToEndOptions& options)
{
  spec.validate();
  const PreparedData data = prepare(spec.networks.front(), spec);
  const auto m = static_cast<Eigen::Index>(data.train.bus_count());
  const TrainStrategy strategy = TrainStrategy::smooth_gate(
      spec.train.strategy.kind == TrainStrategy::Kind::smooth_gate ? spec.train.strategy.slope : -0.01);
  IcnnModel model(2 * m, spec.hidden_dims, m, spec.activation, strategy.gate_mode());
  if (spec.normalize) fit_normalization(model, data.train);
  initialize(model, spec.first_seed);
  TrainConfig cfg = spec.train;
  cfg.seed = spec.first_seed;
  cfg.strategy = strategy;
  const TrainReport tr = train(model, data.train, cfg);
  if (tr.diverged) throw DivergenceError("end-to-end training diverged");

  const EndToEndReport report = end_to_end(data.net, model, data.test, options);
  std::ostringstream csv;
  csv << "# q is the controllable net reactive injection at each bus, replacing the sampled load q\n";
  csv << "scenario,predicted_q0,predicted_q_star,true_q0,true_q_star,iterations,converged\n";
  for (const auto& o : report.scenarios) {
    csv << o.sample_index << ',' << num(o.predicted_q0) << ',' << num(o.predicted_star) << ',' << num(o.true_q0) << ','
        << num(o.true_star) << ',' << o.iterations << ',' << (o.converged ? 1 : 0) << '\n';
  }
  write_file(spec.output_dir / "end_to_end.csv", csv.str());
  save_model(model, spec.output_dir / "end_to_end_model.json");
  std::ostringstream summary;
  summary << "End-to-end regulation on " << data.network_id << ": " << report.scenarios.size() << " held-out scenarios\n"
          << "predicted objective improved: " << report.predicted_improved << '\n'
          << "true (power-flow) objective improved: " << report.true_improved << '\n';
  write_file(spec.output_dir / "end_to_end_summary.txt", summary.str());
  return report;
}

}  // namespace convexvolt
