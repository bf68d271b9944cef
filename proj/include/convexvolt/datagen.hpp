#pragma once

#include "convexvolt/grid.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace convexvolt {

struct ScenarioConfig {
  std::size_t n_samples = 500;
  double load_scale_min = 0.5;
  double load_scale_max = 1.5;
  double pf_min = 0.85;
  double pf_max = 0.95;
  std::uint64_t seed = 0;
  double v_ref = 1.0;

  /// Throws InvalidArgument when the ranges are inconsistent.
  void validate() const;
};

/// One operating point. All vectors are indexed by non-slack bus (bus j at j - 1).
struct Sample {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  Eigen::VectorXd target;  // |V - v_ref|
  Eigen::VectorXd v_true;  // V

  /// Network input (p, q) as one vector.
  Eigen::VectorXd input() const;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string network_id;
  ScenarioConfig config;
  std::size_t skipped = 0;  // non-converged scenarios dropped during generation

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t bus_count() const { return samples.empty() ? 0 : static_cast<std::size_t>(samples[0].p.size()); }

  /// Inputs as columns (2m x N) and targets as columns (m x N).
  Eigen::MatrixXd input_matrix() const;
  Eigen::MatrixXd target_matrix() const;
};

/// Lagging reactive power for real power p at power factor pf in (0, 1].
double reactive_from_pf(double p, double pf);

/**
 * Scenario generator. Sample k draws from RandomStream(seed, k): first one
 * load scale per non-slack bus, then one power factor per non-slack bus.
 * Samples whose power flow fails to converge are dropped and counted;
 * more than 10% dropped raises InvalidArgument.
 *
 * Work is split over CONVEXVOLT_WORKERS threads; output does not depend on
 * the thread count.
 */
Dataset generate_dataset(const RadialNetwork& net, const ScenarioConfig& cfg, std::string network_id = "network");

/// Disjoint shuffled partition. Train size is round(fraction * N).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed);

/**
 * Dataset text file:
 *
 *     convexvolt-dataset 1
 *     network_id <id>
 *     config n_samples <n> scale_min <a> scale_max <b> pf_min <c> pf_max <d> seed <s> v_ref <v>
 *     dims samples <N> buses <m>
 *     skipped <k>
 *     data p[1..m] q[1..m] target[1..m] v_true[1..m]
 *     <N records of 4m numbers, %.17g, space separated>
 */
std::string format_dataset(const Dataset& ds);
Dataset parse_dataset(const std::string& content);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace convexvolt
