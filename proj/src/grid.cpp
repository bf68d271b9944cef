#include "convexvolt/grid.hpp"

#include "convexvolt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace convexvolt {

namespace {

int find_root(std::vector<int>& parent, int i)
{
  while (parent[static_cast<std::size_t>(i)] != i) {
    auto& p = parent[static_cast<std::size_t>(i)];
    p = parent[static_cast<std::size_t>(p)];
    i = p;
  }
  return i;
}

}  // namespace

RadialNetwork::RadialNetwork(std::vector<Bus> buses, std::vector<Line> lines, double slack_voltage_sq)
    : buses_(std::move(buses)), lines_(std::move(lines)), slack_voltage_sq_(slack_voltage_sq)
{
  if (buses_.empty()) throw TopologyError("network has no buses");
  if (!(slack_voltage_sq_ > 0.0) || !std::isfinite(slack_voltage_sq_)) {
    throw TopologyError("slack_voltage_sq must be positive");
  }

  std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
  const int n = static_cast<int>(buses_.size());
  for (int i = 0; i < n; ++i) {
    const Bus& bus = buses_[static_cast<std::size_t>(i)];
    if (i > 0 && bus.id == buses_[static_cast<std::size_t>(i - 1)].id) {
      throw TopologyError("duplicate bus id " + std::to_string(bus.id));
    }
    if (bus.id != i) throw TopologyError("bus ids must be contiguous from 0");
    if (!std::isfinite(bus.base_load_p) || !std::isfinite(bus.base_load_q)) {
      throw TopologyError("non-finite load at bus " + std::to_string(i));
    }
  }

  const auto slack_count = std::count_if(buses_.begin(), buses_.end(), [](const Bus& b) { return !b.parent; });
  if (slack_count != 1) {
    throw TopologyError("expected exactly one slack bus, found " + std::to_string(slack_count));
  }
  if (buses_.front().parent) throw TopologyError("slack bus must have id 0");
  for (const Bus& bus : buses_) {
    if (bus.parent && (*bus.parent < 0 || *bus.parent >= n || *bus.parent == bus.id)) {
      throw TopologyError("bus " + std::to_string(bus.id) + " has invalid parent");
    }
  }

  std::vector<int> uf(static_cast<std::size_t>(n));
  std::iota(uf.begin(), uf.end(), 0);
  for (const Line& line : lines_) {
    if (line.from_bus < 0 || line.from_bus >= n || line.to_bus < 0 || line.to_bus >= n ||
        line.from_bus == line.to_bus) {
      throw TopologyError("line endpoints out of range");
    }
    if (!(line.r >= 0.0) || !(line.x >= 0.0) || (line.r == 0.0 && line.x == 0.0) ||
        !std::isfinite(line.r) || !std::isfinite(line.x)) {
      throw TopologyError("line " + std::to_string(line.from_bus) + "-" + std::to_string(line.to_bus) +
                          " needs r >= 0, x >= 0, not both zero");
    }
    const int a = find_root(uf, line.from_bus);
    const int b = find_root(uf, line.to_bus);
    if (a == b) {
      throw TopologyError("cycle detected at line " + std::to_string(line.from_bus) + "-" +
                          std::to_string(line.to_bus));
    }
    uf[static_cast<std::size_t>(a)] = b;
  }
  if (static_cast<int>(lines_.size()) != n - 1) {
    throw TopologyError("radial network with " + std::to_string(n) + " buses needs " + std::to_string(n - 1) +
                        " lines, got " + std::to_string(lines_.size()));
  }
  for (const Line& line : lines_) {
    const Bus& child = buses_[static_cast<std::size_t>(line.to_bus)];
    if (!child.parent || *child.parent != line.from_bus) {
      throw TopologyError("line " + std::to_string(line.from_bus) + "-" + std::to_string(line.to_bus) +
                          " disagrees with the parent of bus " + std::to_string(line.to_bus));
    }
  }
  std::sort(lines_.begin(), lines_.end(), [](const Line& a, const Line& b) { return a.to_bus < b.to_bus; });

  std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
  for (const Bus& bus : buses_) {
    if (bus.parent) children[static_cast<std::size_t>(*bus.parent)].push_back(bus.id);
  }
  std::queue<int> frontier;
  frontier.push(0);
  while (!frontier.empty()) {
    const int bus = frontier.front();
    frontier.pop();
    order_.push_back(bus);
    for (int c : children[static_cast<std::size_t>(bus)]) frontier.push(c);
  }
  if (static_cast<int>(order_.size()) != n) throw TopologyError("not all buses reachable from slack");
}

Eigen::VectorXd RadialNetwork::base_load_p() const
{
  Eigen::VectorXd out(static_cast<Eigen::Index>(load_bus_count()));
  for (std::size_t j = 1; j < buses_.size(); ++j) out[static_cast<Eigen::Index>(j - 1)] = buses_[j].base_load_p;
  return out;
}

Eigen::VectorXd RadialNetwork::base_load_q() const
{
  Eigen::VectorXd out(static_cast<Eigen::Index>(load_bus_count()));
  for (std::size_t j = 1; j < buses_.size(); ++j) out[static_cast<Eigen::Index>(j - 1)] = buses_[j].base_load_q;
  return out;
}

namespace {

void check_injection_dims(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q)
{
  const auto m = static_cast<Eigen::Index>(net.load_bus_count());
  if (p.size() != m || q.size() != m) {
    throw ShapeError("injection vectors must have " + std::to_string(m) + " entries (non-slack buses)");
  }
}

}  // namespace

PowerFlowSolution solve_distflow(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                                 const SweepOptions& options)
{
  check_injection_dims(net, p, q);
  if (!(options.tol > 0.0)) throw InvalidArgument("tol must be positive");

  const auto n = static_cast<Eigen::Index>(net.bus_count());
  const Eigen::Index m = n - 1;
  const auto& order = net.sweep_order();

  PowerFlowSolution sol;
  sol.v = Eigen::VectorXd::Constant(n, net.slack_voltage_sq());
  sol.flow_p = Eigen::VectorXd::Zero(m);
  sol.flow_q = Eigen::VectorXd::Zero(m);
  sol.l = Eigen::VectorXd::Zero(m);

  Eigen::VectorXd v_prev = sol.v;
  Eigen::VectorXd l_next(m);
  for (int it = 1; it <= options.max_iter; ++it) {
    // Backward: own load plus losses, then children's flows added leaf-to-root.
    for (Eigen::Index k = 0; k < m; ++k) {
      const Line& line = net.lines()[static_cast<std::size_t>(k)];
      sol.flow_p[k] = p[k] + line.r * sol.l[k];
      sol.flow_q[k] = q[k] + line.x * sol.l[k];
    }
    for (auto it_bus = order.rbegin(); it_bus != order.rend(); ++it_bus) {
      const int j = *it_bus;
      if (j == 0) continue;
      const int i = net.parent_of(j);
      if (i == 0) continue;
      sol.flow_p[i - 1] += sol.flow_p[j - 1];
      sol.flow_q[i - 1] += sol.flow_q[j - 1];
    }

    // Forward: voltage drop root-to-leaf.
    v_prev = sol.v;
    for (int j : order) {
      if (j == 0) continue;
      const int i = net.parent_of(j);
      const Line& line = net.line_into(j);
      const Eigen::Index k = j - 1;
      sol.v[j] = sol.v[i] - 2.0 * (line.r * sol.flow_p[k] + line.x * sol.flow_q[k]) +
                 (line.r * line.r + line.x * line.x) * sol.l[k];
      if (!(sol.v[j] > 0.0)) {
        throw DivergenceError("squared voltage at bus " + std::to_string(j) + " became non-positive");
      }
    }

    for (Eigen::Index k = 0; k < m; ++k) {
      const int i = net.parent_of(static_cast<int>(k + 1));
      l_next[k] = (sol.flow_p[k] * sol.flow_p[k] + sol.flow_q[k] * sol.flow_q[k]) / sol.v[i];
    }
    const double dv = (sol.v - v_prev).cwiseAbs().maxCoeff();
    const double dl = m > 0 ? (l_next - sol.l).cwiseAbs().maxCoeff() : 0.0;
    sol.iterations = it;
    if (dv < options.tol && dl < options.tol) {
      sol.converged = true;
      break;
    }
    sol.l = l_next;
  }

  sol.max_residual = verify_solution(net, p, q, sol).max_violation();
  return sol;
}

double ResidualReport::max_violation() const
{
  return std::max({active_balance, reactive_balance, voltage_drop, current_def});
}

double ResidualReport::min_relaxation_slack() const
{
  return relaxation_slack.size() == 0 ? 0.0 : relaxation_slack.minCoeff();
}

ResidualReport verify_solution(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                               const PowerFlowSolution& sol)
{
  check_injection_dims(net, p, q);
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  const Eigen::Index m = n - 1;
  if (sol.v.size() != n || sol.flow_p.size() != m || sol.flow_q.size() != m || sol.l.size() != m) {
    throw ShapeError("solution dimensions do not match network");
  }

  Eigen::VectorXd child_p = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd child_q = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < m; ++k) {
    const int i = net.parent_of(static_cast<int>(k + 1));
    child_p[i] += sol.flow_p[k];
    child_q[i] += sol.flow_q[k];
  }

  ResidualReport report;
  report.relaxation_slack.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const int j = static_cast<int>(k + 1);
    const int i = net.parent_of(j);
    const Line& line = net.line_into(j);
    const double P = sol.flow_p[k];
    const double Q = sol.flow_q[k];
    const double l = sol.l[k];
    report.active_balance = std::max(report.active_balance, std::abs(P - (child_p[j] + line.r * l + p[k])));
    report.reactive_balance = std::max(report.reactive_balance, std::abs(Q - (child_q[j] + line.x * l + q[k])));
    const double v_j = sol.v[i] - 2.0 * (line.r * P + line.x * Q) + (line.r * line.r + line.x * line.x) * l;
    report.voltage_drop = std::max(report.voltage_drop, std::abs(sol.v[j] - v_j));
    const double cone = (P * P + Q * Q) / sol.v[i];
    report.current_def = std::max(report.current_def, std::abs(l - cone));
    report.relaxation_slack[k] = l - cone;
  }
  return report;
}

Eigen::VectorXd voltage_magnitudes(const Eigen::VectorXd& v)
{
  if ((v.array() < 0.0).any()) throw InvalidArgument("negative squared voltage");
  return v.cwiseSqrt();
}

Eigen::VectorXd voltage_magnitudes(const PowerFlowSolution& sol) { return voltage_magnitudes(sol.v); }

}  // namespace convexvolt
