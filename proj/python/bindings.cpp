#include <memory>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "acpgn/crr.hpp"
#include "acpgn/data.hpp"
#include "acpgn/eval.hpp"
#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "acpgn/multioutput.hpp"
#include "acpgn/oracles.hpp"
#include "acpgn/split_cp.hpp"

namespace py = pybind11;
using namespace acpgn;

namespace {

using IntervalList = std::vector<std::pair<double, double>>;

// Per-output list of (lo, hi) pieces.
std::vector<IntervalList> to_py(const PredictionSet& ps) {
  std::vector<IntervalList> out;
  for (const auto& pieces : ps.per_output) {
    IntervalList l;
    for (const auto& iv : pieces) l.emplace_back(iv.lo, iv.hi);
    out.push_back(std::move(l));
  }
  return out;
}

GgnMode parse_mode(const std::string& s) {
  if (s == "full") return GgnMode::full;
  if (s == "last_layer") return GgnMode::last_layer;
  throw Error("unknown GGN mode '" + s + "' (expected full or last_layer)");
}

SetPipeline parse_pipeline(const std::string& s) {
  if (s == "automatic") return SetPipeline::automatic;
  if (s == "absolute") return SetPipeline::absolute;
  if (s == "signed") return SetPipeline::signed_residual;
  throw Error("unknown pipeline '" + s + "' (expected automatic, absolute or signed)");
}

// ACP-GN predictor owning its GGN factorization.
class AcpGn {
 public:
  AcpGn(MlpModel model, const Matrix& x, const Matrix& y, double delta, const std::string& score,
        const std::string& ggn_mode, bool refined, const std::string& pipeline)
      : model_(std::move(model)),
        score_(parse_score_variant(score)),
        pipeline_(parse_pipeline(pipeline)),
        ggn_(std::make_unique<GgnState>(build_ggn(model_, x, delta, parse_mode(ggn_mode)))) {
    if (y.rows() != x.rows() || y.cols() != model_.output_dim())
      throw Error("targets must be N x O for the model's output count");
    if (model_.output_dim() == 1) {
      ctx_ = std::make_unique<AcpGnContext>(make_acp_gn_context(model_, *ggn_, x, Vector(y.col(0)), refined));
    } else {
      if (refined) throw Error("refinement is only available for scalar outputs");
      multi_ = std::make_unique<AcpGnMultiContext>(make_acp_gn_multi_context(model_, *ggn_, x, y));
    }
  }

  std::vector<IntervalList> predict_set(const Vector& x, double alpha) const {
    if (multi_) return to_py(multioutput_coeffs_and_set(*multi_, model_, x, alpha, true, score_));
    const Matrix jac = jacobian(model_, x);
    const Vector phi = jac.row(0).transpose();
    CrrCoefficients c = acp_gn_coeffs(*ctx_, phi, context_prediction(*ctx_, model_, x, jac));
    if (score_ != ScoreVariant::standard) c = transform_scores(c, score_, augmented_leverages(*ctx_, phi));
    return to_py(conformal_set(c, alpha, pipeline_));
  }

  Index n_train() const { return multi_ ? multi_->size() : ctx_->size(); }

 private:
  MlpModel model_;
  ScoreVariant score_;
  SetPipeline pipeline_;
  std::unique_ptr<GgnState> ggn_;
  std::unique_ptr<AcpGnContext> ctx_;
  std::unique_ptr<AcpGnMultiContext> multi_;
};

class SplitConformal {
 public:
  SplitConformal(MlpModel model, const Matrix& x_train, const Matrix& x_cal, const Vector& y_cal, double delta,
                 bool normalized)
      : model_(std::move(model)), variant_(normalized ? ScpVariant::gn_normalized : ScpVariant::absolute) {
    if (normalized) ggn_ = std::make_unique<GgnState>(build_ggn(model_, x_train, delta, GgnMode::full));
    scores_ = scp_calibrate(model_, x_cal, y_cal, variant_, ggn_.get());
  }

  std::pair<double, double> interval(const Vector& x, double alpha) const {
    const PredictionSet ps = scp_interval(model_, x, scp_quantile(scores_, alpha), variant_, ggn_.get(), alpha);
    return {ps.per_output[0][0].lo, ps.per_output[0][0].hi};
  }

  double quantile(double alpha) const { return scp_quantile(scores_, alpha); }

 private:
  MlpModel model_;
  ScpVariant variant_;
  std::unique_ptr<GgnState> ggn_;
  CalibratedScores scores_;
};

class Laplace {
 public:
  Laplace(MlpModel model, const Matrix& x, const Matrix& y, double delta)
      : model_(std::move(model)),
        ggn_(std::make_unique<GgnState>(build_ggn(model_, x, delta, GgnMode::full))),
        sigma2_(la_fit_sigma2(model_, x, y)) {}

  std::pair<double, double> interval(const Vector& x, double alpha) const {
    const PredictionSet ps = la_interval(model_, *ggn_, x, sigma2_, alpha);
    return {ps.per_output[0][0].lo, ps.per_output[0][0].hi};
  }

  py::dict predictive(const Vector& x, double alpha) const {
    const LaplacePredictive lp = la_predictive(model_, *ggn_, x, sigma2_);
    py::dict d;
    d["mean"] = lp.mean;
    d["covariance"] = lp.covariance;
    d["ellipsoid_volume"] = ellipsoid_volume(lp, alpha);
    return d;
  }

  double sigma2() const { return sigma2_; }

 private:
  MlpModel model_;
  std::unique_ptr<GgnState> ggn_;
  double sigma2_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Conformal prediction sets for neural-network regression via Gauss-Newton influence";
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<MlpModel>(m, "Model")
      .def_static("init", &MlpModel::init, py::arg("layer_sizes"), py::arg("seed") = 0)
      .def_readonly("layer_sizes", &MlpModel::layer_sizes)
      .def_property_readonly("theta", [](const MlpModel& mm) { return mm.theta; })
      .def_property_readonly("num_params", &MlpModel::num_params)
      .def("predict", [](const MlpModel& mm, const Matrix& x) { return forward_batch(mm, x); }, py::arg("x"))
      .def("jacobian", [](const MlpModel& mm, const Vector& x) { return jacobian(mm, x); }, py::arg("x"))
      .def("to_json", [](const MlpModel& mm) { return model_to_json(mm).dump(); })
      .def_static("from_json", [](const std::string& s) { return model_from_json(nlohmann::json::parse(s)); });

  m.def(
      "train",
      [](const Matrix& x, const Matrix& y, const std::vector<Index>& hidden, double delta, int epochs,
         Index batch_size, double lr_initial, double lr_final, std::uint64_t seed) {
        std::vector<Index> sizes{x.cols()};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(y.cols());
        TrainConfig cfg;
        cfg.delta = delta;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr_initial = lr_initial;
        cfg.lr_final = lr_final;
        cfg.seed = seed;
        const TrainResult r = train(x, y, sizes, cfg);
        return py::make_tuple(r.model, r.loss_history);
      },
      py::arg("x"), py::arg("y"), py::arg("hidden") = std::vector<Index>{50}, py::arg("delta") = 1.0,
      py::arg("epochs") = 500, py::arg("batch_size") = 256, py::arg("lr_initial") = 1e-2,
      py::arg("lr_final") = 1e-5, py::arg("seed") = 0,
      "Train an MLP; y must be N x O. Returns (model, loss_history).");

  py::class_<AcpGn>(m, "AcpGn")
      .def(py::init<MlpModel, const Matrix&, const Matrix&, double, const std::string&, const std::string&, bool,
                    const std::string&>(),
           py::arg("model"), py::arg("x"), py::arg("y"), py::arg("delta"), py::arg("score") = "studentized",
           py::arg("ggn_mode") = "full", py::arg("refined") = false, py::arg("pipeline") = "automatic")
      .def("predict_set", &AcpGn::predict_set, py::arg("x"), py::arg("alpha"),
           "Per-output list of closed (lo, hi) intervals; infinite endpoints are +-inf.")
      .def_property_readonly("n_train", &AcpGn::n_train);

  py::class_<SplitConformal>(m, "SplitConformal")
      .def(py::init<MlpModel, const Matrix&, const Matrix&, const Vector&, double, bool>(), py::arg("model"),
           py::arg("x_train"), py::arg("x_cal"), py::arg("y_cal"), py::arg("delta") = 1.0,
           py::arg("normalized") = false)
      .def("interval", &SplitConformal::interval, py::arg("x"), py::arg("alpha"))
      .def("quantile", &SplitConformal::quantile, py::arg("alpha"));

  py::class_<Laplace>(m, "Laplace")
      .def(py::init<MlpModel, const Matrix&, const Matrix&, double>(), py::arg("model"), py::arg("x"), py::arg("y"),
           py::arg("delta"))
      .def("interval", &Laplace::interval, py::arg("x"), py::arg("alpha"))
      .def("predictive", &Laplace::predictive, py::arg("x"), py::arg("alpha") = 0.1)
      .def_property_readonly("sigma2", &Laplace::sigma2);

  m.def(
      "ridge_conformal_set",
      [](const Matrix& x, const Vector& y, const Vector& x_new, double delta, double alpha, const std::string& score,
         const std::string& pipeline) {
        CrrCoefficients c = exact_ridge_coeffs(x, y, x_new, delta);
        const ScoreVariant v = parse_score_variant(score);
        if (v != ScoreVariant::standard) c = transform_scores(c, v, augmented_leverages_ridge(x, x_new, delta));
        return to_py(conformal_set(c, alpha, parse_pipeline(pipeline)))[0];
      },
      py::arg("x"), py::arg("y"), py::arg("x_new"), py::arg("delta"), py::arg("alpha"), py::arg("score") = "standard",
      py::arg("pipeline") = "absolute", "Exact conformalized ridge regression set for one test input.");

  m.def(
      "full_cp_ridge_grid",
      [](const Matrix& x, const Vector& y, const Vector& x_new, double delta, const std::vector<double>& grid,
         double alpha) { return full_cp_grid(RidgeRetrainer(delta), x, y, x_new, grid, alpha).accepted; },
      py::arg("x"), py::arg("y"), py::arg("x_new"), py::arg("delta"), py::arg("grid"), py::arg("alpha"),
      "Brute-force full conformal prediction with ridge retraining; one flag per grid label.");

  m.def(
      "synth_gp_outliers",
      [](Index n_train, Index n_test, std::uint64_t seed) {
        const SyntheticData s = synth_gp_outliers(n_train, n_test, seed);
        py::dict d;
        d["x"] = s.data.features;
        d["y"] = s.data.targets;
        d["outlier"] = s.outlier;
        d["train_idx"] = s.split.train_idx;
        d["test_idx"] = s.split.test_idx;
        return d;
      },
      py::arg("n_train"), py::arg("n_test"), py::arg("seed") = 0);

  m.def(
      "validity_check",
      [](double coverage, Index n_eff, double alpha) {
        const ValidityResult r = validity_check(coverage, n_eff, alpha);
        py::dict d;
        d["pass"] = r.pass;
        d["lo"] = r.lo;
        d["hi"] = r.hi;
        d["k"] = r.k;
        return d;
      },
      py::arg("coverage"), py::arg("n_eff"), py::arg("alpha"));

  m.def("conformal_rank_threshold", &conformal_rank_threshold, py::arg("alpha"), py::arg("n"));
}
