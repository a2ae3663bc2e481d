#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "acpgn/types.hpp"

namespace acpgn {

class GgnState;

/// Fully-connected regression network with GeLU hidden units and a linear
/// output layer.
///
/// Parameters are flattened layer by layer; each layer stores its weight
/// matrix row-major (out x in) followed by its bias vector, so the final
/// `(hidden + 1) * O` entries are the output layer.
struct MlpModel {
  std::vector<Index> layer_sizes;  // [I, hidden..., O]
  Vector theta;

  static Index param_count(const std::vector<Index>& layer_sizes);
  /// Fan-in scaled uniform initialization.
  static MlpModel init(std::vector<Index> layer_sizes, std::uint64_t seed);

  Index num_params() const { return theta.size(); }
  Index input_dim() const { return layer_sizes.front(); }
  Index output_dim() const { return layer_sizes.back(); }
  /// Offset of the output-layer block inside theta.
  Index last_layer_offset() const;
  Index last_layer_width() const { return num_params() - last_layer_offset(); }
  void validate() const;
};

double gelu(double x);
double gelu_derivative(double x);

Vector forward(const MlpModel& model, const Eigen::Ref<const Vector>& x);
/// Row-wise predictions for an N x I input matrix; returns N x O.
Matrix forward_batch(const MlpModel& model, const Matrix& inputs);
/// O x D Jacobian of the outputs with respect to theta.
Matrix jacobian(const MlpModel& model, const Eigen::Ref<const Vector>& x);
/// Jacobians of all rows stacked point-major: row i*O + o is d f_o(x_i) / d theta.
Matrix stacked_jacobians(const MlpModel& model, const Matrix& inputs);

struct TrainConfig {
  double delta = 1.0;  // weight on 0.5 * ||theta||^2 in the summed objective
  int epochs = 500;
  Index batch_size = 256;  // capped at N
  double lr_initial = 1e-2;
  double lr_final = 1e-5;
  bool cosine = true;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;  // objective after each epoch
};

/// sum_i 0.5 ||y_i - f(x_i)||^2 + 0.5 * delta * ||theta||^2
double objective(const MlpModel& model, const Matrix& inputs, const Matrix& targets, double delta);

/// Adam on the regularized squared-error objective.
TrainResult train(const Matrix& inputs, const Matrix& targets, const std::vector<Index>& layer_sizes,
                  const TrainConfig& cfg);
/// Same as train() but starts from `start` instead of a fresh initialization.
TrainResult train_from(const MlpModel& start, const Matrix& inputs, const Matrix& targets,
                       const TrainConfig& cfg);

/// f_x + J_x (theta - theta_star)
Vector linear_predict(const Matrix& jac_x, const Vector& f_x, const Vector& theta_star,
                      const Vector& theta);

/// Minimizer of the linearized ridge objective with pseudo-targets
/// J theta_star + residuals, solved through the factorization in `ggn`.
/// In last-layer mode only the output-layer block of theta moves.
Vector refine(const GgnState& ggn, const Matrix& jac_rows, const Vector& theta_star,
              const Vector& residuals);

nlohmann::json model_to_json(const MlpModel& model);
MlpModel model_from_json(const nlohmann::json& j);

}  // namespace acpgn
