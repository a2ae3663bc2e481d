#include "acpgn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "acpgn/ggn.hpp"

namespace acpgn {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerView {
  Eigen::Map<const RowMajor> w;
  Eigen::Map<const Vector> b;
  Index offset;
};

LayerView layer(const MlpModel& m, std::size_t l, Index offset) {
  const Index in = m.layer_sizes[l];
  const Index out = m.layer_sizes[l + 1];
  return {Eigen::Map<const RowMajor>(m.theta.data() + offset, out, in),
          Eigen::Map<const Vector>(m.theta.data() + offset + out * in, out), offset};
}

// Forward pass over a batch stored column-per-example. Keeps pre-activations
// and activations for backprop.
struct Tape {
  std::vector<Matrix> pre;   // z_l, one per layer
  std::vector<Matrix> post;  // a_0 = input, a_l = gelu(z_l); the last is the output
};

Tape run_forward(const MlpModel& m, const Matrix& cols) {
  Tape t;
  const std::size_t layers = m.layer_sizes.size() - 1;
  t.post.reserve(layers + 1);
  t.pre.reserve(layers);
  t.post.push_back(cols);
  Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto lv = layer(m, l, off);
    Matrix z = lv.w * t.post.back();
    z.colwise() += lv.b;
    off += lv.w.size() + lv.b.size();
    if (l + 1 < layers) {
      t.post.push_back(z.unaryExpr([](double v) { return gelu(v); }));
    } else {
      t.post.push_back(z);
    }
    t.pre.push_back(std::move(z));
  }
  return t;
}

// Accumulates d(sum_j <seed_j, f(x_j)>)/d theta into grad.
void backprop(const MlpModel& m, const Tape& t, Matrix seed, Vector& grad) {
  const std::size_t layers = m.layer_sizes.size() - 1;
  std::vector<Index> offsets(layers);
  Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += (m.layer_sizes[l] + 1) * m.layer_sizes[l + 1];
  }
  for (std::size_t l = layers; l-- > 0;) {
    const auto lv = layer(m, l, offsets[l]);
    const Index in = m.layer_sizes[l];
    const Index out = m.layer_sizes[l + 1];
    Eigen::Map<RowMajor> gw(grad.data() + offsets[l], out, in);
    Eigen::Map<Vector> gb(grad.data() + offsets[l] + out * in, out);
    gw.noalias() += seed * t.post[l].transpose();
    gb += seed.rowwise().sum();
    if (l > 0) {
      Matrix back = lv.w.transpose() * seed;
      seed = back.cwiseProduct(t.pre[l - 1].unaryExpr([](double v) { return gelu_derivative(v); }));
    }
  }
}

void check_input(const MlpModel& m, Index dim) {
  if (dim != m.input_dim())
    throw Error("input dimension mismatch: model expects " + std::to_string(m.input_dim()) +
                ", got " + std::to_string(dim));
}

}  // namespace

Index MlpModel::param_count(const std::vector<Index>& sizes) {
  Index d = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) d += (sizes[l] + 1) * sizes[l + 1];
  return d;
}

MlpModel MlpModel::init(std::vector<Index> sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw Error("architecture needs at least input and output sizes");
  for (auto s : sizes)
    if (s < 1) throw Error("layer sizes must be positive");
  MlpModel m;
  m.layer_sizes = std::move(sizes);
  m.theta.resize(param_count(m.layer_sizes));
  std::mt19937_64 rng(seed);
  Index off = 0;
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const Index in = m.layer_sizes[l];
    const Index out = m.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index k = 0; k < (in + 1) * out; ++k) m.theta(off + k) = u(rng);
    off += (in + 1) * out;
  }
  return m;
}

Index MlpModel::last_layer_offset() const {
  const std::size_t l = layer_sizes.size() - 2;
  return num_params() - (layer_sizes[l] + 1) * layer_sizes[l + 1];
}

void MlpModel::validate() const {
  if (layer_sizes.size() < 2) throw Error("architecture needs at least input and output sizes");
  if (theta.size() != param_count(layer_sizes))
    throw Error("parameter vector has " + std::to_string(theta.size()) + " entries, architecture needs " +
                std::to_string(param_count(layer_sizes)));
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Vector forward(const MlpModel& model, const Eigen::Ref<const Vector>& x) {
  check_input(model, x.size());
  Matrix col = x;
  return run_forward(model, col).post.back().col(0);
}

Matrix forward_batch(const MlpModel& model, const Matrix& inputs) {
  check_input(model, inputs.cols());
  return run_forward(model, inputs.transpose()).post.back().transpose();
}

Matrix jacobian(const MlpModel& model, const Eigen::Ref<const Vector>& x) {
  check_input(model, x.size());
  const Matrix col = x;
  const Tape t = run_forward(model, col);
  const Index out = model.output_dim();
  Matrix jac(out, model.num_params());
  // One backward pass per output; the batch axis of the tape has width 1.
  for (Index o = 0; o < out; ++o) {
    Vector g = Vector::Zero(model.num_params());
    Matrix seed = Matrix::Zero(out, 1);
    seed(o, 0) = 1.0;
    backprop(model, t, std::move(seed), g);
    jac.row(o) = g.transpose();
  }
  return jac;
}

Matrix stacked_jacobians(const MlpModel& model, const Matrix& inputs) {
  const Index out = model.output_dim();
  Matrix rows(inputs.rows() * out, model.num_params());
  for (Index i = 0; i < inputs.rows(); ++i)
    rows.middleRows(i * out, out) = jacobian(model, inputs.row(i).transpose());
  return rows;
}

double objective(const MlpModel& model, const Matrix& inputs, const Matrix& targets, double delta) {
  const Matrix pred = forward_batch(model, inputs);
  return 0.5 * (targets - pred).squaredNorm() + 0.5 * delta * model.theta.squaredNorm();
}

TrainResult train_from(const MlpModel& start, const Matrix& inputs, const Matrix& targets,
                       const TrainConfig& cfg) {
  start.validate();
  check_input(start, inputs.cols());
  if (targets.rows() != inputs.rows() || targets.cols() != start.output_dim())
    throw Error("target shape does not match inputs/model");
  if (cfg.delta < 0.0) throw Error("delta must be non-negative");
  if (cfg.epochs < 1) throw Error("epochs must be >= 1");
  const Index n = inputs.rows();
  if (n < 1) throw Error("no training rows");

  TrainResult res{start, {}};
  MlpModel& m = res.model;
  const Index batch = std::clamp<Index>(cfg.batch_size, 1, n);
  const double n_d = static_cast<double>(n);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vector m1 = Vector::Zero(m.num_params());
  Vector m2 = Vector::Zero(m.num_params());
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const Matrix inputs_t = inputs.transpose();
  const Matrix targets_t = targets.transpose();
  long step = 0;
  res.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr_initial;
    if (cfg.cosine && cfg.epochs > 1) {
      const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
      lr = cfg.lr_final + 0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
    }
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    for (Index start_row = 0; start_row < n; start_row += batch) {
      const Index b = std::min(batch, n - start_row);
      Matrix xb(inputs.cols(), b), yb(targets.cols(), b);
      for (Index j = 0; j < b; ++j) {
        xb.col(j) = inputs_t.col(order[static_cast<std::size_t>(start_row + j)]);
        yb.col(j) = targets_t.col(order[static_cast<std::size_t>(start_row + j)]);
      }
      const Tape t = run_forward(m, xb);
      // Gradient of the objective divided by N, estimated on the batch.
      Vector g = (cfg.delta / n_d) * m.theta;
      Matrix seed = (t.post.back() - yb) / static_cast<double>(b);
      backprop(m, t, std::move(seed), g);
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      m.theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    const double loss = objective(m, inputs, targets, cfg.delta);
    if (!std::isfinite(loss)) throw Error("training diverged at epoch " + std::to_string(epoch + 1));
    res.loss_history.push_back(loss);
  }
  return res;
}

TrainResult train(const Matrix& inputs, const Matrix& targets, const std::vector<Index>& layer_sizes,
                  const TrainConfig& cfg) {
  return train_from(MlpModel::init(layer_sizes, cfg.seed), inputs, targets, cfg);
}

Vector linear_predict(const Matrix& jac_x, const Vector& f_x, const Vector& theta_star,
                      const Vector& theta) {
  if (jac_x.cols() != theta.size() || theta.size() != theta_star.size() || jac_x.rows() != f_x.size())
    throw Error("linear_predict: dimension mismatch");
  return f_x + jac_x * (theta - theta_star);
}

Vector refine(const GgnState& ggn, const Matrix& jac_rows, const Vector& theta_star,
              const Vector& residuals) {
  if (jac_rows.rows() != residuals.size()) throw Error("refine: one residual per Jacobian row required");
  if (theta_star.size() != ggn.full_dim()) throw Error("refine: parameter dimension mismatch");
  const Matrix phi = ggn.restrict_cols(jac_rows);
  const Vector theta_eff = ggn.restrict(theta_star);
  const Vector pseudo = phi * theta_eff + residuals;
  Vector out = theta_star;
  out.segment(ggn.param_offset(), ggn.effective_dim()) = ggn.solve(Vector(phi.transpose() * pseudo));
  return out;
}

nlohmann::json model_to_json(const MlpModel& model) {
  return {{"format", "acpgn-mlp"},
          {"version", 1},
          {"activation", "gelu"},
          {"layer_sizes", model.layer_sizes},
          {"theta", std::vector<double>(model.theta.data(), model.theta.data() + model.theta.size())}};
}

MlpModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "acpgn-mlp") throw Error("not an acpgn model file");
  if (j.value("version", 0) != 1) throw Error("unsupported model version");
  MlpModel m;
  m.layer_sizes = j.at("layer_sizes").get<std::vector<Index>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  m.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Index>(theta.size()));
  m.validate();
  return m;
}

}  // namespace acpgn
