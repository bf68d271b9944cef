#include "convexvolt/datagen.hpp"
#include "convexvolt/error.hpp"
#include "convexvolt/experiment.hpp"
#include "convexvolt/grid.hpp"
#include "convexvolt/icnn.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/regulate.hpp"
#include "convexvolt/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace convexvolt;

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Core of the convexvolt package";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  // grid
  py::class_<RadialNetwork>(m, "RadialNetwork")
      .def_property_readonly("bus_count", &RadialNetwork::bus_count)
      .def_property_readonly("load_bus_count", &RadialNetwork::load_bus_count)
      .def_property_readonly("slack_voltage_sq", &RadialNetwork::slack_voltage_sq)
      .def("base_load_p", &RadialNetwork::base_load_p)
      .def("base_load_q", &RadialNetwork::base_load_q)
      .def("format", [](const RadialNetwork& net, bool json) {
        return format_network(net, json ? NetworkEncoding::json : NetworkEncoding::text);
      }, py::arg("json") = false);

  py::class_<PowerFlowSolution>(m, "PowerFlowSolution")
      .def_readonly("v", &PowerFlowSolution::v)
      .def_readonly("flow_p", &PowerFlowSolution::flow_p)
      .def_readonly("flow_q", &PowerFlowSolution::flow_q)
      .def_readonly("l", &PowerFlowSolution::l)
      .def_readonly("converged", &PowerFlowSolution::converged)
      .def_readonly("iterations", &PowerFlowSolution::iterations);

  m.def("parse_network", [](const std::string& text) { return parse_network(text); });
  m.def("load_network", &load_network);
  m.def("solve_distflow", [](const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q, double tol,
                             int max_iter) { return solve_distflow(net, p, q, {tol, max_iter}); },
        py::arg("net"), py::arg("p"), py::arg("q"), py::arg("tol") = 1e-8, py::arg("max_iter") = 100);
  m.def("verify_solution", [](const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                              const PowerFlowSolution& sol) {
    const ResidualReport r = verify_solution(net, p, q, sol);
    py::dict out;
    out["active_balance"] = r.active_balance;
    out["reactive_balance"] = r.reactive_balance;
    out["voltage_drop"] = r.voltage_drop;
    out["current_def"] = r.current_def;
    out["relaxation_slack"] = r.relaxation_slack;
    out["max_violation"] = r.max_violation();
    return out;
  });
  m.def("voltage_magnitudes", py::overload_cast<const PowerFlowSolution&>(&voltage_magnitudes));

  // datagen
  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init([](std::size_t n, double smin, double smax, double pfmin, double pfmax, std::uint64_t seed,
                       double v_ref) { return ScenarioConfig{n, smin, smax, pfmin, pfmax, seed, v_ref}; }),
           py::arg("n_samples") = 500, py::arg("scale_min") = 0.5, py::arg("scale_max") = 1.5,
           py::arg("pf_min") = 0.85, py::arg("pf_max") = 0.95, py::arg("seed") = 0, py::arg("v_ref") = 1.0)
      .def_readwrite("n_samples", &ScenarioConfig::n_samples)
      .def_readwrite("seed", &ScenarioConfig::seed)
      .def_readwrite("v_ref", &ScenarioConfig::v_ref);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("network_id", &Dataset::network_id)
      .def_readonly("skipped", &Dataset::skipped)
      .def_readonly("config", &Dataset::config)
      .def_property_readonly("bus_count", &Dataset::bus_count)
      .def("inputs", [](const Dataset& ds) { return Eigen::MatrixXd(ds.input_matrix().transpose()); },
           "Inputs as rows (N x 2m)")
      .def("targets", [](const Dataset& ds) { return Eigen::MatrixXd(ds.target_matrix().transpose()); })
      .def("voltages", [](const Dataset& ds) {
        Eigen::MatrixXd v(ds.size(), ds.bus_count());
        for (std::size_t k = 0; k < ds.size(); ++k) v.row(static_cast<Eigen::Index>(k)) = ds.samples[k].v_true;
        return v;
      })
      .def("format", &format_dataset);

  m.def("generate_dataset", &generate_dataset, py::arg("net"), py::arg("config"), py::arg("network_id") = "network");
  m.def("split_dataset", &split_dataset);
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);

  // icnn
  py::class_<Activation>(m, "Activation")
      .def(py::init(&Activation::from_name), py::arg("name") = "relu", py::arg("alpha") = 0.0)
      .def("name", &Activation::name)
      .def_readonly("alpha", &Activation::alpha);

  py::class_<GateMode>(m, "GateMode")
      .def_static("none", &GateMode::none)
      .def_static("hard_clamp", &GateMode::hard_clamp)
      .def_static("smooth", &GateMode::smooth)
      .def("name", &GateMode::name)
      .def_readonly("slope", &GateMode::slope);

  py::class_<IcnnModel>(m, "IcnnModel")
      .def(py::init<Eigen::Index, std::vector<Eigen::Index>, Eigen::Index, Activation, GateMode>(), py::arg("in_dim"),
           py::arg("hidden_dims"), py::arg("out_dim"), py::arg("activation") = Activation::relu(),
           py::arg("gate") = GateMode::none())
      .def_readonly("in_dim", &IcnnModel::in_dim)
      .def_readonly("out_dim", &IcnnModel::out_dim)
      .def_readonly("hidden_dims", &IcnnModel::hidden_dims)
      .def_readwrite("W", &IcnnModel::W)
      .def_readwrite("U", &IcnnModel::U)
      .def_readwrite("b", &IcnnModel::b)
      .def_readwrite("gate", &IcnnModel::gate)
      .def_property_readonly("parameter_count", &IcnnModel::parameter_count)
      .def("format", &format_model);

  m.def("initialize", [](IcnnModel& model, std::uint64_t seed) { initialize(model, seed); });
  m.def("forward", [](const IcnnModel& model, const Eigen::MatrixXd& rows) {
    return Eigen::MatrixXd(forward_batch(model, rows.transpose()).output.transpose());
  }, "Outputs for inputs given as rows");
  m.def("is_convex_admissible", &is_convex_admissible);
  m.def("build_duplicated", &build_duplicated);
  m.def("collapse_duplicated", &collapse_duplicated);
  m.def("save_model", &save_model);
  m.def("load_model", &load_model);

  py::class_<ConvexityReport>(m, "ConvexityReport")
      .def_readonly("passed", &ConvexityReport::passed)
      .def_readonly("worst_violation", &ConvexityReport::worst_violation)
      .def_readonly("x", &ConvexityReport::x)
      .def_readonly("y", &ConvexityReport::y)
      .def_readonly("lam", &ConvexityReport::lambda)
      .def_readonly("output_index", &ConvexityReport::output_index);
  m.def("check_convexity", [](const IcnnModel& model, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                              std::uint64_t seed, std::size_t n_pairs, std::size_t n_lambdas, double tol) {
    return check_convexity(model, InputBox{lo, hi}, seed, n_pairs, n_lambdas, tol);
  }, py::arg("model"), py::arg("lo"), py::arg("hi"), py::arg("seed") = 0, py::arg("n_pairs") = 200,
        py::arg("n_lambdas") = 9, py::arg("tol") = 1e-9);

  // train
  py::class_<TrainStrategy>(m, "TrainStrategy")
      .def(py::init(&TrainStrategy::from_name), py::arg("name"), py::arg("slope") = -0.01)
      .def("name", &TrainStrategy::name)
      .def_readonly("slope", &TrainStrategy::slope);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed,
                       const TrainStrategy& strategy) {
             TrainConfig cfg;
             cfg.epochs = epochs;
             cfg.batch_size = batch_size;
             cfg.learning_rate = lr;
             cfg.seed = seed;
             cfg.strategy = strategy;
             return cfg;
           }),
           py::arg("epochs") = 200, py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-3, py::arg("seed") = 0,
           py::arg("strategy") = TrainStrategy::smooth_gate())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("loss_history", &TrainReport::loss_history)
      .def_readonly("initial_loss", &TrainReport::initial_loss)
      .def_readonly("final_loss", &TrainReport::final_loss)
      .def_readonly("iterations", &TrainReport::iterations)
      .def_readonly("wall_time", &TrainReport::wall_time)
      .def_readonly("total_clamped", &TrainReport::total_clamped)
      .def_readonly("diverged", &TrainReport::diverged);

  m.def("fit_normalization", &fit_normalization);
  m.def("train", [](IcnnModel model, const Dataset& ds, const TrainConfig& cfg) {
    TrainReport report = train(model, ds, cfg);
    return py::make_tuple(model, report);
  }, "Returns (trained model, report); the argument is left untouched");

  py::class_<MapeReport>(m, "MapeReport")
      .def_readonly("per_bus", &MapeReport::per_bus)
      .def_readonly("mean", &MapeReport::mean)
      .def_readonly("max", &MapeReport::max)
      .def_readonly("mean_deviation", &MapeReport::mean_deviation);
  m.def("evaluate_mape", &evaluate_mape, py::arg("model"), py::arg("test_set"), py::arg("v_ref") = 1.0);

  // regulate
  py::class_<RegulationProblem>(m, "RegulationProblem")
      .def(py::init<IcnnModel, Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd, double>(),
           py::arg("model"), py::arg("p"), py::arg("q_min"), py::arg("q_max"), py::arg("a"), py::arg("v_ref") = 1.0)
      .def("objective", [](const RegulationProblem& p, const Eigen::VectorXd& q) { return objective(p, q); })
      .def("gradient", [](const RegulationProblem& p, const Eigen::VectorXd& q) {
        return objective_and_q_gradient(p, q).gradient;
      })
      .def("midpoint", &RegulationProblem::midpoint);

  py::class_<RegulationResult>(m, "RegulationResult")
      .def_readonly("q_star", &RegulationResult::q_star)
      .def_readonly("objective", &RegulationResult::objective)
      .def_readonly("trace", &RegulationResult::trace)
      .def_readonly("converged", &RegulationResult::converged)
      .def_readonly("iterations", &RegulationResult::iterations);

  m.def("solve", [](const RegulationProblem& problem, int max_iter, double tol) {
    SolveOptions options;
    options.max_iter = max_iter;
    options.tol = tol;
    return solve(problem, options);
  }, py::arg("problem"), py::arg("max_iter") = 5000, py::arg("tol") = 1e-9);
}
