#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace convexvolt {

/// Hidden-layer activation. The output layer is always affine.
struct Activation {
  enum class Kind { relu, leaky_relu, elu };

  Kind kind = Kind::relu;
  double alpha = 0.0;  // negative-side slope (leaky_relu) or scale (elu)

  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double alpha) { return {Kind::leaky_relu, alpha}; }
  static Activation elu(double alpha) { return {Kind::elu, alpha}; }

  double value(double a) const;
  /// Derivative; the negative-side branch is used at a == 0.
  double slope(double a) const;
  /// Convex and non-decreasing: relu; leaky_relu with 0 < alpha < 1; elu with 0 < alpha <= 1.
  bool admissible() const;

  std::string name() const;
  static Activation from_name(const std::string& name, double alpha);
};

/// Maps raw stored hidden weights to the effective weights used in the forward pass.
struct GateMode {
  enum class Kind { none, hard_clamp, smooth };

  Kind kind = Kind::none;
  double slope = 0.0;  // s <= 0, smooth only

  static GateMode none() { return {Kind::none, 0.0}; }
  static GateMode hard_clamp() { return {Kind::hard_clamp, 0.0}; }
  /// Throws InvalidArgument for s > 0.
  static GateMode smooth(double s);

  std::string name() const;
};

/// none: w.  hard_clamp: max(0, w).  smooth(s): max(0, w) + s * min(0, w).
double gate_weight(double w, const GateMode& mode);
/// d(gate)/dw; 1 at w == 0 in every mode.
double gate_weight_derivative(double w, const GateMode& mode);
Eigen::MatrixXd gate_weights(const Eigen::MatrixXd& w, const GateMode& mode);

/**
 * Fixed affine maps around the network core:
 *
 *     x_n = (x - input_shift) ./ input_scale
 *     y   = output_shift + output_scale .* core(x_n)
 *
 * Both scales are positive, so the maps preserve convexity in x.
 */
struct Normalization {
  Eigen::VectorXd input_shift;
  Eigen::VectorXd input_scale;
  Eigen::VectorXd output_shift;
  Eigen::VectorXd output_scale;

  static Normalization identity(Eigen::Index in_dim, Eigen::Index out_dim);
  bool is_identity() const;
};

/**
 * Input-convex network with k = hidden_dims.size() + 1 layers:
 *
 *     z_1     = act(U_0 x + b_0)
 *     z_{i+1} = act(gate(W_i) z_i + U_i x + b_i)      i = 1 .. k-2
 *     y       = gate(W_{k-1}) z_{k-1} + U_{k-1} x + b_{k-1}
 *
 * W is stored raw; gating happens in the forward pass. U and b are
 * sign-unconstrained. `W[i]` here holds the hidden-to-layer-(i+1) matrix,
 * i.e. W[0] is W_1.
 */
struct IcnnModel {
  IcnnModel() = default;
  IcnnModel(Eigen::Index in_dim, std::vector<Eigen::Index> hidden_dims, Eigen::Index out_dim,
            Activation activation = Activation::relu(), GateMode gate = GateMode::none());

  Eigen::Index in_dim = 0;
  std::vector<Eigen::Index> hidden_dims;
  Eigen::Index out_dim = 0;

  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::MatrixXd> U;
  std::vector<Eigen::VectorXd> b;
  Activation activation;
  GateMode gate;
  Normalization norm;

  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  Eigen::Index layer_width(std::size_t layer) const
  {
    return layer < hidden_dims.size() ? hidden_dims[layer] : out_dim;
  }
  /// Total number of W, U and b entries.
  std::size_t parameter_count() const;
  /// Throws ShapeError if any matrix disagrees with the shape metadata.
  void check_shapes() const;
};

enum class WeightInit { sign_mixed, all_positive, all_negative };

/**
 * Uniform(-c, c) with c = sqrt(1 / fan_in) for every W, U and b entry,
 * where fan_in is the width feeding that matrix (in_dim for U and b).
 * all_positive / all_negative replace W entries by |w| / -|w|.
 */
void initialize(IcnnModel& model, std::uint64_t seed, WeightInit init = WeightInit::sign_mixed);

/// Everything the reverse sweep needs. Matrices hold one column per input.
struct ForwardTrace {
  Eigen::MatrixXd input;             // raw x
  Eigen::MatrixXd normalized_input;  // x_n
  std::vector<Eigen::MatrixXd> pre;  // per layer pre-activation
  std::vector<Eigen::MatrixXd> post; // per hidden layer activation output z_1 .. z_{k-1}
  std::vector<Eigen::MatrixXd> effective_W;
  Eigen::MatrixXd output;            // y
};

ForwardTrace forward_batch(const IcnnModel& model, const Eigen::MatrixXd& inputs);
std::pair<Eigen::VectorXd, ForwardTrace> forward(const IcnnModel& model, const Eigen::VectorXd& x);
/// Recomputes the output from the trace's input and effective weights.
Eigen::MatrixXd replay(const IcnnModel& model, const ForwardTrace& trace);

/// Gradients with the same layout as the model parameters (raw W).
struct IcnnGradients {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::MatrixXd> U;
  std::vector<Eigen::VectorXd> b;

  static IcnnGradients zeros_like(const IcnnModel& model);
  double max_abs() const;
};

/**
 * Reverse sweep. output_grad is dL/dy with one column per traced input.
 * Raw-W gradients include the gate derivative of the model's gate mode.
 * When input_grad is non-null it receives dL/dx (raw x).
 */
IcnnGradients backward(const IcnnModel& model, const ForwardTrace& trace, const Eigen::MatrixXd& output_grad,
                       Eigen::MatrixXd* input_grad = nullptr);

/// Every effective W entry is >= 0 and the activation is admissible.
bool is_convex_admissible(const IcnnModel& model);

/// Axis-aligned sampling box for convexity checks.
struct InputBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static InputBox unit(Eigen::Index dim);
  /// Column-wise min/max of inputs widened by inflate * range on each side.
  static InputBox from_samples(const Eigen::MatrixXd& inputs, double inflate = 0.1);
};

struct ConvexityReport {
  bool passed = true;
  double worst_violation = 0.0;
  // Witness of the worst violation.
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  double lambda = 0.0;
  Eigen::Index output_index = -1;
};

/**
 * Midpoint-convexity audit: for n_pairs random (x, y) in the box and
 * lambda = j / (n_lambdas + 1), j = 1..n_lambdas, checks
 *     f(lambda x + (1 - lambda) y) <= lambda f(x) + (1 - lambda) f(y) + tol
 * per output coordinate.
 */
ConvexityReport check_convexity(const IcnnModel& model, const InputBox& box, std::uint64_t seed,
                                std::size_t n_pairs = 200, std::size_t n_lambdas = 9, double tol = 1e-9);

/**
 * Equivalent model over the mirrored input [x; -x]. Each passthrough row
 * is split by sign: u >= 0 stays on x, u < 0 moves to -x as -u. W, b and
 * the activation are copied unchanged.
 */
IcnnModel build_duplicated(const IcnnModel& model);

/**
 * Re-derives the mirrored half of every passthrough matrix of a duplicated
 * model from its trained (first) half: mirrored = max(0, -trained), then
 * trained = max(0, trained). The function computed on [x; -x] depends only
 * on the pre-split trained half.
 */
void resplit_mirrored_passthrough(IcnnModel& model);

/// Inverse of build_duplicated: a model over x with U = U_x - U_mirror.
IcnnModel collapse_duplicated(const IcnnModel& model);

/**
 * Model file: JSON with "schema": "convexvolt-icnn" and "version": 1.
 * Doubles are written in shortest round-trip form, so save/load is exact.
 */
std::string format_model(const IcnnModel& model);
IcnnModel parse_model(const std::string& content);
void save_model(const IcnnModel& model, const std::filesystem::path& path);
IcnnModel load_model(const std::filesystem::path& path);

}  // namespace convexvolt
