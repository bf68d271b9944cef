#include "convexvolt/icnn.hpp"

#include "convexvolt/error.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace convexvolt {

// ---------------------------------------------------------------------------
// Activation and gating

double Activation::value(double a) const
{
  switch (kind) {
    case Kind::relu: return a > 0.0 ? a : 0.0;
    case Kind::leaky_relu: return a > 0.0 ? a : alpha * a;
    case Kind::elu: return a > 0.0 ? a : alpha * std::expm1(a);
  }
  return a;
}

double Activation::slope(double a) const
{
  switch (kind) {
    case Kind::relu: return a > 0.0 ? 1.0 : 0.0;
    case Kind::leaky_relu: return a > 0.0 ? 1.0 : alpha;
    case Kind::elu: return a > 0.0 ? 1.0 : alpha * std::exp(a);
  }
  return 1.0;
}

bool Activation::admissible() const
{
  switch (kind) {
    case Kind::relu: return true;
    case Kind::leaky_relu: return alpha > 0.0 && alpha < 1.0;
    // Left derivative at 0 is alpha; convexity needs it <= the right derivative 1.
    case Kind::elu: return alpha > 0.0 && alpha <= 1.0;
  }
  return false;
}

std::string Activation::name() const
{
  switch (kind) {
    case Kind::relu: return "relu";
    case Kind::leaky_relu: return "leaky_relu";
    case Kind::elu: return "elu";
  }
  return "?";
}

Activation Activation::from_name(const std::string& name, double alpha)
{
  if (name == "relu") return relu();
  if (name == "leaky_relu") return leaky_relu(alpha);
  if (name == "elu") return elu(alpha);
  throw InvalidArgument("unknown activation '" + name + "'");
}

GateMode GateMode::smooth(double s)
{
  if (!(s <= 0.0)) throw InvalidArgument("smooth gate slope must be <= 0");
  return {Kind::smooth, s};
}

std::string GateMode::name() const
{
  switch (kind) {
    case Kind::none: return "none";
    case Kind::hard_clamp: return "hard_clamp";
    case Kind::smooth: return "smooth";
  }
  return "?";
}

double gate_weight(double w, const GateMode& mode)
{
  switch (mode.kind) {
    case GateMode::Kind::none: return w;
    case GateMode::Kind::hard_clamp: return std::max(0.0, w);
    case GateMode::Kind::smooth: return std::max(0.0, w) + mode.slope * std::min(0.0, w);
  }
  return w;
}

double gate_weight_derivative(double w, const GateMode& mode)
{
  if (w >= 0.0) return 1.0;
  switch (mode.kind) {
    case GateMode::Kind::none: return 1.0;
    case GateMode::Kind::hard_clamp: return 0.0;
    case GateMode::Kind::smooth: return mode.slope;
  }
  return 1.0;
}

Eigen::MatrixXd gate_weights(const Eigen::MatrixXd& w, const GateMode& mode)
{
  if (mode.kind == GateMode::Kind::none) return w;
  return w.unaryExpr([&](double v) { return gate_weight(v, mode); });
}

// ---------------------------------------------------------------------------
// Model

Normalization Normalization::identity(Eigen::Index in_dim, Eigen::Index out_dim)
{
  return {Eigen::VectorXd::Zero(in_dim), Eigen::VectorXd::Ones(in_dim), Eigen::VectorXd::Zero(out_dim),
          Eigen::VectorXd::Ones(out_dim)};
}

bool Normalization::is_identity() const
{
  return (input_shift.array() == 0.0).all() && (input_scale.array() == 1.0).all() &&
         (output_shift.array() == 0.0).all() && (output_scale.array() == 1.0).all();
}

IcnnModel::IcnnModel(Eigen::Index in, std::vector<Eigen::Index> hidden, Eigen::Index out, Activation act,
                     GateMode g)
    : in_dim(in), hidden_dims(std::move(hidden)), out_dim(out), activation(act), gate(g),
      norm(Normalization::identity(in, out))
{
  if (in_dim < 1 || out_dim < 1) throw ShapeError("input and output dimensions must be positive");
  for (auto h : hidden_dims) {
    if (h < 1) throw ShapeError("hidden widths must be positive");
  }
  const std::size_t k = layer_count();
  for (std::size_t l = 0; l < k; ++l) {
    U.push_back(Eigen::MatrixXd::Zero(layer_width(l), in_dim));
    b.push_back(Eigen::VectorXd::Zero(layer_width(l)));
    if (l > 0) W.push_back(Eigen::MatrixXd::Zero(layer_width(l), layer_width(l - 1)));
  }
}

std::size_t IcnnModel::parameter_count() const
{
  std::size_t n = 0;
  for (const auto& m : W) n += static_cast<std::size_t>(m.size());
  for (const auto& m : U) n += static_cast<std::size_t>(m.size());
  for (const auto& v : b) n += static_cast<std::size_t>(v.size());
  return n;
}

void IcnnModel::check_shapes() const
{
  const std::size_t k = layer_count();
  if (U.size() != k || b.size() != k || W.size() != k - 1) throw ShapeError("model has wrong layer count");
  for (std::size_t l = 0; l < k; ++l) {
    if (U[l].rows() != layer_width(l) || U[l].cols() != in_dim) throw ShapeError("U has wrong shape");
    if (b[l].size() != layer_width(l)) throw ShapeError("b has wrong shape");
    if (l > 0 && (W[l - 1].rows() != layer_width(l) || W[l - 1].cols() != layer_width(l - 1))) {
      throw ShapeError("W has wrong shape");
    }
  }
  if (norm.input_shift.size() != in_dim || norm.input_scale.size() != in_dim ||
      norm.output_shift.size() != out_dim || norm.output_scale.size() != out_dim) {
    throw ShapeError("normalization has wrong shape");
  }
}

void initialize(IcnnModel& model, std::uint64_t seed, WeightInit init)
{
  RandomStream rng(seed, kStreamInit);
  auto fill = [&](auto& m, double c) {
    // Row-major fill so the draw order does not depend on storage order.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index col = 0; col < m.cols(); ++col) m(r, col) = rng.uniform(-c, c);
    }
  };
  const double c_in = std::sqrt(1.0 / static_cast<double>(model.in_dim));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    fill(model.U[l], c_in);
    fill(model.b[l], c_in);
    if (l > 0) {
      auto& w = model.W[l - 1];
      fill(w, std::sqrt(1.0 / static_cast<double>(w.cols())));
      if (init == WeightInit::all_positive) w = w.cwiseAbs();
      if (init == WeightInit::all_negative) w = -w.cwiseAbs();
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

void run_layers(const IcnnModel& model, ForwardTrace& t)
{
  const std::size_t k = model.layer_count();
  t.normalized_input =
      (t.input.colwise() - model.norm.input_shift).array().colwise() / model.norm.input_scale.array();
  t.pre.assign(k, {});
  t.post.assign(k - 1, {});
  for (std::size_t l = 0; l < k; ++l) {
    Eigen::MatrixXd a = model.U[l] * t.normalized_input;
    a.colwise() += model.b[l];
    if (l > 0) a.noalias() += t.effective_W[l - 1] * t.post[l - 1];
    if (l + 1 < k) t.post[l] = a.unaryExpr([&](double v) { return model.activation.value(v); });
    t.pre[l] = std::move(a);
  }
  t.output = (t.pre.back().array().colwise() * model.norm.output_scale.array()).colwise() +
             model.norm.output_shift.array();
}

}  // namespace

ForwardTrace forward_batch(const IcnnModel& model, const Eigen::MatrixXd& inputs)
{
  if (inputs.rows() != model.in_dim) {
    throw ShapeError("input has " + std::to_string(inputs.rows()) + " rows, model expects " +
                     std::to_string(model.in_dim));
  }
  ForwardTrace t;
  t.input = inputs;
  t.effective_W.reserve(model.W.size());
  for (const auto& w : model.W) t.effective_W.push_back(gate_weights(w, model.gate));
  run_layers(model, t);
  return t;
}

std::pair<Eigen::VectorXd, ForwardTrace> forward(const IcnnModel& model, const Eigen::VectorXd& x)
{
  ForwardTrace t = forward_batch(model, Eigen::MatrixXd(x));
  Eigen::VectorXd y = t.output.col(0);
  return {std::move(y), std::move(t)};
}

Eigen::MatrixXd replay(const IcnnModel& model, const ForwardTrace& trace)
{
  ForwardTrace t;
  t.input = trace.input;
  t.effective_W = trace.effective_W;
  run_layers(model, t);
  return t.output;
}

IcnnGradients IcnnGradients::zeros_like(const IcnnModel& model)
{
  IcnnGradients g;
  for (const auto& m : model.W) g.W.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  for (const auto& m : model.U) g.U.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  for (const auto& v : model.b) g.b.push_back(Eigen::VectorXd::Zero(v.size()));
  return g;
}

double IcnnGradients::max_abs() const
{
  double m = 0.0;
  for (const auto& x : W) m = std::max(m, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
  for (const auto& x : U) m = std::max(m, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
  for (const auto& x : b) m = std::max(m, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
  return m;
}

IcnnGradients backward(const IcnnModel& model, const ForwardTrace& trace, const Eigen::MatrixXd& output_grad,
                       Eigen::MatrixXd* input_grad)
{
  if (output_grad.rows() != model.out_dim || output_grad.cols() != trace.output.cols()) {
    throw ShapeError("output gradient does not match traced batch");
  }
  const std::size_t k = model.layer_count();
  IcnnGradients g;
  g.W.resize(k - 1);
  g.U.resize(k);
  g.b.resize(k);

  Eigen::MatrixXd delta = output_grad.array().colwise() * model.norm.output_scale.array();
  Eigen::MatrixXd dx;
  if (input_grad) dx = Eigen::MatrixXd::Zero(model.in_dim, trace.input.cols());

  for (std::size_t l = k; l-- > 0;) {
    if (l + 1 < k) {
      delta.array() *= trace.pre[l].unaryExpr([&](double v) { return model.activation.slope(v); }).array();
    }
    g.U[l].noalias() = delta * trace.normalized_input.transpose();
    g.b[l] = delta.rowwise().sum();
    if (input_grad) dx.noalias() += model.U[l].transpose() * delta;
    if (l > 0) {
      const Eigen::MatrixXd d_effective = delta * trace.post[l - 1].transpose();
      const auto& raw = model.W[l - 1];
      g.W[l - 1] = d_effective.binaryExpr(raw, [&](double d, double w) {
        return d * gate_weight_derivative(w, model.gate);
      });
      Eigen::MatrixXd next = trace.effective_W[l - 1].transpose() * delta;
      delta = std::move(next);
    }
  }
  if (input_grad) *input_grad = dx.array().colwise() / model.norm.input_scale.array();
  return g;
}

// ---------------------------------------------------------------------------
// Convexity

bool is_convex_admissible(const IcnnModel& model)
{
  if (!model.activation.admissible()) return false;
  if (model.gate.kind == GateMode::Kind::smooth && model.gate.slope > 0.0) return false;
  for (const auto& w : model.W) {
    if (w.size() > 0 && gate_weights(w, model.gate).minCoeff() < 0.0) return false;
  }
  return true;
}

InputBox InputBox::unit(Eigen::Index dim)
{
  return {Eigen::VectorXd::Constant(dim, -1.0), Eigen::VectorXd::Constant(dim, 1.0)};
}

InputBox InputBox::from_samples(const Eigen::MatrixXd& inputs, double inflate)
{
  if (inputs.cols() == 0) throw InvalidArgument("cannot derive a box from zero samples");
  Eigen::VectorXd lo = inputs.rowwise().minCoeff();
  Eigen::VectorXd hi = inputs.rowwise().maxCoeff();
  const Eigen::VectorXd pad = inflate * (hi - lo);
  return {lo - pad, hi + pad};
}

ConvexityReport check_convexity(const IcnnModel& model, const InputBox& box, std::uint64_t seed,
                                std::size_t n_pairs, std::size_t n_lambdas, double tol)
{
  if (n_pairs < 1) throw InvalidArgument("n_pairs must be >= 1");
  if (!(tol >= 0.0)) throw InvalidArgument("tol must be >= 0");
  if (box.lo.size() != model.in_dim || box.hi.size() != model.in_dim) throw ShapeError("box dimension mismatch");

  RandomStream rng(seed, kStreamConvexity);
  const auto d = model.in_dim;
  const auto stride = static_cast<Eigen::Index>(2 + n_lambdas);
  Eigen::MatrixXd points(d, static_cast<Eigen::Index>(n_pairs) * stride);
  for (std::size_t pair = 0; pair < n_pairs; ++pair) {
    const Eigen::Index base = static_cast<Eigen::Index>(pair) * stride;
    for (Eigen::Index i = 0; i < d; ++i) points(i, base) = rng.uniform(box.lo[i], box.hi[i]);
    for (Eigen::Index i = 0; i < d; ++i) points(i, base + 1) = rng.uniform(box.lo[i], box.hi[i]);
    for (std::size_t j = 1; j <= n_lambdas; ++j) {
      const double lambda = static_cast<double>(j) / static_cast<double>(n_lambdas + 1);
      points.col(base + 1 + static_cast<Eigen::Index>(j)) =
          lambda * points.col(base) + (1.0 - lambda) * points.col(base + 1);
    }
  }
  const Eigen::MatrixXd f = forward_batch(model, points).output;

  ConvexityReport report;
  report.worst_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t pair = 0; pair < n_pairs; ++pair) {
    const Eigen::Index base = static_cast<Eigen::Index>(pair) * stride;
    for (std::size_t j = 1; j <= n_lambdas; ++j) {
      const double lambda = static_cast<double>(j) / static_cast<double>(n_lambdas + 1);
      const Eigen::VectorXd chord = lambda * f.col(base) + (1.0 - lambda) * f.col(base + 1);
      const Eigen::VectorXd gap = f.col(base + 1 + static_cast<Eigen::Index>(j)) - chord;
      Eigen::Index idx = 0;
      const double worst = gap.maxCoeff(&idx);
      if (worst > report.worst_violation) {
        report.worst_violation = worst;
        report.x = points.col(base);
        report.y = points.col(base + 1);
        report.lambda = lambda;
        report.output_index = idx;
      }
    }
  }
  report.passed = report.worst_violation <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Duplication

IcnnModel build_duplicated(const IcnnModel& model)
{
  model.check_shapes();
  const Eigen::Index m = model.in_dim;
  IcnnModel dup = model;
  dup.in_dim = 2 * m;
  for (std::size_t l = 0; l < model.U.size(); ++l) {
    const auto& u = model.U[l];
    dup.U[l].resize(u.rows(), 2 * m);
    dup.U[l].leftCols(m) = u.cwiseMax(0.0);
    dup.U[l].rightCols(m) = (-u).cwiseMax(0.0);
  }
  dup.norm.input_shift.resize(2 * m);
  dup.norm.input_shift << model.norm.input_shift, -model.norm.input_shift;
  dup.norm.input_scale.resize(2 * m);
  dup.norm.input_scale << model.norm.input_scale, model.norm.input_scale;
  return dup;
}

void resplit_mirrored_passthrough(IcnnModel& model)
{
  if (model.in_dim % 2 != 0) throw ShapeError("mirrored model needs an even input dimension");
  const Eigen::Index m = model.in_dim / 2;
  for (auto& u : model.U) {
    const Eigen::MatrixXd trained = u.leftCols(m);
    u.rightCols(m) = (-trained).cwiseMax(0.0);
    u.leftCols(m) = trained.cwiseMax(0.0);
  }
}

IcnnModel collapse_duplicated(const IcnnModel& model)
{
  if (model.in_dim % 2 != 0) throw ShapeError("mirrored model needs an even input dimension");
  const Eigen::Index m = model.in_dim / 2;
  IcnnModel out = model;
  out.in_dim = m;
  for (std::size_t l = 0; l < model.U.size(); ++l) out.U[l] = model.U[l].leftCols(m) - model.U[l].rightCols(m);
  out.norm.input_shift = model.norm.input_shift.head(m);
  out.norm.input_scale = model.norm.input_scale.head(m);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using nlohmann::json;

constexpr const char* kModelSchema = "convexvolt-icnn";
constexpr int kModelVersion = 1;

json to_json(const Eigen::MatrixXd& m)
{
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what)
{
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw SchemaError(std::string("model: ") + what + " has wrong row count");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw SchemaError(std::string("model: ") + what + " has wrong column count");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j, Eigen::Index size, const char* what)
{
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw SchemaError(std::string("model: ") + what + " has wrong length");
  }
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

const json& require(const json& doc, const char* key)
{
  if (!doc.contains(key)) throw SchemaError(std::string("model: missing field '") + key + "'");
  return doc.at(key);
}

}  // namespace

std::string format_model(const IcnnModel& model)
{
  model.check_shapes();
  json doc;
  doc["schema"] = kModelSchema;
  doc["version"] = kModelVersion;
  doc["in_dim"] = model.in_dim;
  doc["hidden_dims"] = model.hidden_dims;
  doc["out_dim"] = model.out_dim;
  doc["activation"] = {{"kind", model.activation.name()}, {"alpha", model.activation.alpha}};
  doc["gate"] = {{"kind", model.gate.name()}, {"slope", model.gate.slope}};
  doc["normalization"] = {{"input_shift", to_json(model.norm.input_shift)},
                          {"input_scale", to_json(model.norm.input_scale)},
                          {"output_shift", to_json(model.norm.output_shift)},
                          {"output_scale", to_json(model.norm.output_scale)}};
  json layers = json::array();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    json layer;
    layer["U"] = to_json(model.U[l]);
    layer["b"] = to_json(model.b[l]);
    if (l > 0) layer["W"] = to_json(model.W[l - 1]);
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

IcnnModel parse_model(const std::string& content)
{
  json doc;
  try {
    doc = json::parse(content);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("model: not valid JSON: ") + e.what());
  }
  try {
    if (require(doc, "schema").get<std::string>() != kModelSchema) throw SchemaError("model: wrong schema tag");
    const int version = require(doc, "version").get<int>();
    if (version != kModelVersion) {
      throw SchemaError("model: schema version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kModelVersion) + ")");
    }
    const auto& act = require(doc, "activation");
    const auto& gate = require(doc, "gate");
    const Activation activation =
        Activation::from_name(require(act, "kind").get<std::string>(), require(act, "alpha").get<double>());
    const std::string gate_kind = require(gate, "kind").get<std::string>();
    const double slope = require(gate, "slope").get<double>();
    GateMode mode;
    if (gate_kind == "none") {
      mode = GateMode::none();
    } else if (gate_kind == "hard_clamp") {
      mode = GateMode::hard_clamp();
    } else if (gate_kind == "smooth") {
      mode = GateMode::smooth(slope);
    } else {
      throw SchemaError("model: unknown gate kind '" + gate_kind + "'");
    }

    IcnnModel model(require(doc, "in_dim").get<Eigen::Index>(),
                    require(doc, "hidden_dims").get<std::vector<Eigen::Index>>(),
                    require(doc, "out_dim").get<Eigen::Index>(), activation, mode);
    const auto& nrm = require(doc, "normalization");
    model.norm.input_shift = vector_from(require(nrm, "input_shift"), model.in_dim, "input_shift");
    model.norm.input_scale = vector_from(require(nrm, "input_scale"), model.in_dim, "input_scale");
    model.norm.output_shift = vector_from(require(nrm, "output_shift"), model.out_dim, "output_shift");
    model.norm.output_scale = vector_from(require(nrm, "output_scale"), model.out_dim, "output_scale");

    const auto& layers = require(doc, "layers");
    if (!layers.is_array() || layers.size() != model.layer_count()) throw SchemaError("model: wrong layer count");
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      const auto& layer = layers[l];
      model.U[l] = matrix_from(require(layer, "U"), model.layer_width(l), model.in_dim, "U");
      model.b[l] = vector_from(require(layer, "b"), model.layer_width(l), "b");
      if (l > 0) {
        model.W[l - 1] = matrix_from(require(layer, "W"), model.layer_width(l), model.layer_width(l - 1), "W");
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model: ") + e.what());
  } catch (const ShapeError& e) {
    throw SchemaError(std::string("model: ") + e.what());
  }
}

void save_model(const IcnnModel& model, const std::filesystem::path& path) { write_file(path, format_model(model)); }

IcnnModel load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

}  // namespace convexvolt
