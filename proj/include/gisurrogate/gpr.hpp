#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gisurrogate/numerics.hpp"
#include "gisurrogate/params.hpp"

namespace gisur {

enum class GpMode { GradientFree, GradientEnhanced };

std::string to_string(GpMode mode);  // "gf" / "ge"
GpMode gp_mode_from_string(const std::string& s);

inline constexpr double kNoiseFloor = 1e-12;

/// Squared-exponential kernel sigma_f^2 exp(-|x - x'|^2 / (2 lambda^2)).
/// A single length scale is isotropic; one per input dimension gives ARD.
struct KernelParams {
  double signal_variance = 1.0;
  Vector length_scales = Vector::Constant(1, 0.5);
  double noise_variance = 1e-6;

  bool isotropic() const { return length_scales.size() == 1; }
  double length_scale(Eigen::Index i) const { return isotropic() ? length_scales[0] : length_scales[i]; }
  /// Throws InvalidArgument for non-positive values; clamps the noise to kNoiseFloor.
  void validate(Eigen::Index dim);
};

double kernel(const Vector& x, const Vector& xp, const KernelParams& params);

struct KernelJet {
  double value = 0.0;
  Vector grad_x;   // dk/dx
  Vector grad_xp;  // dk/dx'
  Matrix hess_xxp; // d^2k / dx_i dx'_j
};

KernelJet kernel_jet(const Vector& x, const Vector& xp, const KernelParams& params);

/// Rows of Xa and Xb are points. GE layout is sample-major: each point
/// contributes its value followed by its d partial derivatives.
Matrix build_covariance(const Matrix& Xa, const Matrix& Xb, const KernelParams& params, GpMode mode);

/// Raw (unnormalized) observations. Inputs are mapped to [0,1]^d with
/// `bounds`; targets are standardized before fitting.
struct TrainingSet {
  Matrix inputs;                  // n_s x d
  Vector targets;                 // n_s
  std::optional<Matrix> gradients;// n_s x d, df/dx in raw input units
  ParamBounds bounds;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
  void validate(GpMode mode) const;
};

struct Normalization {
  Vector lower;
  Vector scale;         // input range; 1 for frozen dimensions
  double y_mean = 0.0;
  double y_scale = 1.0;

  Vector input(const Vector& x) const;
};

struct FitOptions {
  int iterations = 800;
  int restarts = 3;
  std::uint64_t seed = 0;
  bool ard = false;
};

struct FitLog {
  double log_marginal_likelihood = 0.0;  // retained model, normalized units
  double default_start_initial = 0.0;    // objective at the default start point
  std::vector<double> start_results;     // final objective of every start (-inf if it failed)
  int restarts_run = 0;
  int failed_starts = 0;
  int iterations = 0;                    // summed over starts
};

struct GpPrediction {
  double mean = 0.0;
  Vector gradient;  // GE mode only; raw input units
};

class GpModel {
 public:
  /// Condition on data at fixed hyperparameters given in normalized units.
  static GpModel condition(const TrainingSet& data, GpMode mode, KernelParams params);

  GpMode mode() const { return mode_; }
  const KernelParams& params() const { return params_; }
  const Normalization& normalization() const { return norm_; }
  const TrainingSet& data() const { return data_; }
  const FitLog& fit_log() const { return log_; }
  /// Diagonal shift added by the jitter policy on top of the noise.
  double jitter() const { return factor_.jitter(); }
  double log_marginal_likelihood() const { return lml_; }

  GpPrediction predict(const Vector& x) const;
  double variance(const Vector& x) const;
  /// Value prediction without the GE gradient rows.
  double mean(const Vector& x) const;
  /// {mean, variance} sharing one cross-covariance row.
  std::pair<double, double> mean_and_variance(const Vector& x) const;

 private:
  // Covariance of the value at x (normalized) with every training observation.
  Vector value_row(const Vector& xn) const;
  double variance_from_row(Vector row) const;

  friend GpModel fit(const TrainingSet& data, GpMode mode, const FitOptions& options);
  friend GpModel model_from_json(const std::string& text);

  GpMode mode_ = GpMode::GradientFree;
  KernelParams params_;
  Normalization norm_;
  TrainingSet data_;
  Matrix x_norm_;
  Vector y_norm_;
  SpdFactorization factor_;
  Vector alpha_;
  double lml_ = 0.0;
  FitLog log_;
};

/// sigma_f^2 = 1, lambda = 0.5, sigma_eps^2 = 1e-6: the first optimizer start.
KernelParams default_kernel_params(Eigen::Index n_scales = 1);

/// Maximizes the log marginal likelihood over log(sigma_f^2, lambda, sigma_eps^2)
/// with L-BFGS from one default start plus `restarts` seeded random starts.
GpModel fit(const TrainingSet& data, GpMode mode, const FitOptions& options = {});

GpPrediction predict_mean(const GpModel& model, const Vector& x);
/// Throws NegativeVariance if the posterior variance is below -1e-10.
double predict_variance(const GpModel& model, const Vector& x);

/// Hyperparameters, normalization and training data; the covariance is
/// refactorized on load.
std::string model_to_json(const GpModel& model);
GpModel model_from_json(const std::string& text);

/// Log marginal likelihood of the standardized data under fixed normalized
/// hyperparameters; -inf when the covariance cannot be factorized.
double log_marginal_likelihood(const TrainingSet& data, GpMode mode, const KernelParams& params);

}  // namespace gisur
