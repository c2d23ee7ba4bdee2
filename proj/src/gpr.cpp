#include "gisurrogate/gpr.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

namespace gisur {

std::string to_string(GpMode mode) { return mode == GpMode::GradientFree ? "gf" : "ge"; }

GpMode gp_mode_from_string(const std::string& s) {
  if (s == "gf") return GpMode::GradientFree;
  if (s == "ge") return GpMode::GradientEnhanced;
  throw Error(ErrorKind::InvalidArgument, "unknown GP mode '" + s + "'");
}

void KernelParams::validate(Eigen::Index dim) {
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
    throw Error(ErrorKind::InvalidArgument, "signal variance must be positive");
  }
  if (length_scales.size() != 1 && length_scales.size() != dim) {
    throw Error(ErrorKind::DimensionMismatch, "length scale count must be 1 or the input dimension");
  }
  for (Eigen::Index i = 0; i < length_scales.size(); ++i) {
    if (!(length_scales[i] > 0.0) || !std::isfinite(length_scales[i])) {
      throw Error(ErrorKind::InvalidArgument, "length scales must be positive");
    }
  }
  if (!(noise_variance >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise variance must be >= 0");
  noise_variance = std::max(noise_variance, kNoiseFloor);
}

namespace {

// Inverse squared length scales, one per dimension.
Vector inverse_sq_scales(const KernelParams& p, Eigen::Index dim) {
  Vector w(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double l = p.length_scale(i);
    w[i] = 1.0 / (l * l);
  }
  return w;
}

template <class A, class B>
double kernel_value(const A& x, const B& xp, const Vector& w, double sf2) {
  double q = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double r = x[i] - xp[i];
    q += r * r * w[i];
  }
  return sf2 * std::exp(-0.5 * q);
}

void check_dims(const Vector& x, const Vector& xp) {
  if (x.size() != xp.size() || x.size() == 0) {
    throw Error(ErrorKind::DimensionMismatch, "kernel arguments differ in dimension");
  }
}

}  // namespace

double kernel(const Vector& x, const Vector& xp, const KernelParams& params) {
  check_dims(x, xp);
  return kernel_value(x, xp, inverse_sq_scales(params, x.size()), params.signal_variance);
}

KernelJet kernel_jet(const Vector& x, const Vector& xp, const KernelParams& params) {
  check_dims(x, xp);
  const Eigen::Index d = x.size();
  const Vector w = inverse_sq_scales(params, d);
  KernelJet jet;
  jet.value = kernel_value(x, xp, w, params.signal_variance);
  const Vector wr = w.cwiseProduct(x - xp);  // r_i / lambda_i^2
  jet.grad_x = -jet.value * wr;
  jet.grad_xp = jet.value * wr;
  jet.hess_xxp = jet.value * (Matrix(w.asDiagonal()) - wr * wr.transpose());
  return jet;
}

Matrix build_covariance(const Matrix& Xa, const Matrix& Xb, const KernelParams& params, GpMode mode) {
  if (Xa.cols() != Xb.cols() || Xa.cols() == 0) {
    throw Error(ErrorKind::DimensionMismatch, "covariance inputs differ in dimension");
  }
  const Eigen::Index d = Xa.cols();
  const Eigen::Index na = Xa.rows();
  const Eigen::Index nb = Xb.rows();
  const Vector w = inverse_sq_scales(params, d);
  const double sf2 = params.signal_variance;
  if (mode == GpMode::GradientFree) {
    Matrix K(na, nb);
    for (Eigen::Index j = 0; j < nb; ++j) {
      for (Eigen::Index i = 0; i < na; ++i) K(i, j) = kernel_value(Xa.row(i), Xb.row(j), w, sf2);
    }
    return K;
  }
  const Eigen::Index block = d + 1;
  Matrix K(na * block, nb * block);
  Vector wr(d);
  for (Eigen::Index b = 0; b < nb; ++b) {
    for (Eigen::Index a = 0; a < na; ++a) {
      const double k = kernel_value(Xa.row(a), Xb.row(b), w, sf2);
      for (Eigen::Index i = 0; i < d; ++i) wr[i] = w[i] * (Xa(a, i) - Xb(b, i));
      const Eigen::Index r0 = a * block;
      const Eigen::Index c0 = b * block;
      K(r0, c0) = k;
      for (Eigen::Index j = 0; j < d; ++j) {
        K(r0, c0 + 1 + j) = k * wr[j];      // dk/dx'_j
        K(r0 + 1 + j, c0) = -k * wr[j];     // dk/dx_j
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
          K(r0 + 1 + i, c0 + 1 + j) = k * ((i == j ? w[i] : 0.0) - wr[i] * wr[j]);
        }
      }
    }
  }
  return K;
}

void TrainingSet::validate(GpMode mode) const {
  if (inputs.rows() < 1 || inputs.cols() < 1) throw Error(ErrorKind::InvalidArgument, "empty training inputs");
  if (targets.size() != inputs.rows()) throw Error(ErrorKind::DimensionMismatch, "target count != input count");
  if (bounds.size() != dim()) throw Error(ErrorKind::DimensionMismatch, "bounds dimension != input dimension");
  bounds.validate();
  require_finite(inputs, "training inputs");
  require_finite(targets, "training targets");
  if (mode == GpMode::GradientEnhanced) {
    if (!gradients) throw Error(ErrorKind::InvalidArgument, "gradient-enhanced mode needs gradients");
    if (gradients->rows() != inputs.rows() || gradients->cols() != inputs.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "gradient shape does not match inputs");
    }
    require_finite(*gradients, "training gradients");
  }
}

Vector Normalization::input(const Vector& x) const {
  if (x.size() != lower.size()) throw Error(ErrorKind::DimensionMismatch, "input dimension mismatch");
  return (x - lower).cwiseQuotient(scale);
}

namespace {

Normalization make_normalization(const TrainingSet& data) {
  Normalization n;
  n.lower = data.bounds.lower;
  n.scale = data.bounds.upper - data.bounds.lower;
  for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
    if (n.scale[i] == 0.0) n.scale[i] = 1.0;
  }
  const double count = static_cast<double>(data.targets.size());
  n.y_mean = data.targets.mean();
  const double var = (data.targets.array() - n.y_mean).square().sum() / count;
  n.y_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  return n;
}

struct NormalizedData {
  Matrix x;
  Vector y;  // GF: n_s values; GE: sample-major values and gradients
};

NormalizedData normalize(const TrainingSet& data, GpMode mode, const Normalization& norm) {
  NormalizedData out;
  const Eigen::Index ns = data.inputs.rows();
  const Eigen::Index d = data.inputs.cols();
  out.x.resize(ns, d);
  for (Eigen::Index j = 0; j < ns; ++j) out.x.row(j) = norm.input(data.inputs.row(j).transpose()).transpose();
  for (Eigen::Index a = 0; a < ns; ++a) {
    for (Eigen::Index b = a + 1; b < ns; ++b) {
      if ((out.x.row(a) - out.x.row(b)).norm() < 1e-10) {
        throw Error(ErrorKind::InvalidArgument, "training inputs " + std::to_string(a) + " and " +
                                                    std::to_string(b) + " coincide");
      }
    }
  }
  if (mode == GpMode::GradientFree) {
    out.y = (data.targets.array() - norm.y_mean) / norm.y_scale;
    return out;
  }
  out.y.resize(ns * (d + 1));
  for (Eigen::Index j = 0; j < ns; ++j) {
    out.y[j * (d + 1)] = (data.targets[j] - norm.y_mean) / norm.y_scale;
    for (Eigen::Index i = 0; i < d; ++i) {
      // Chain rule through x_norm = (x - lower) / scale.
      out.y[j * (d + 1) + 1 + i] = (*data.gradients)(j, i) * norm.scale[i] / norm.y_scale;
    }
  }
  return out;
}

struct Conditioned {
  SpdFactorization factor;
  Vector alpha;
  double lml = -std::numeric_limits<double>::infinity();
};

// Throws NotPositiveDefinite when the jitter policy is exhausted.
Conditioned condition_normalized(const NormalizedData& nd, GpMode mode, const KernelParams& params) {
  Matrix K = build_covariance(nd.x, nd.x, params, mode);
  K.diagonal().array() += params.noise_variance;
  Conditioned c;
  c.factor = spd_factorize_jittered(K);
  c.alpha = c.factor.solve(nd.y);
  const double n = static_cast<double>(nd.y.size());
  c.lml = -0.5 * nd.y.dot(c.alpha) - 0.5 * c.factor.log_det() - 0.5 * n * std::log(2.0 * std::numbers::pi);
  return c;
}

double lml_or_neg_inf(const NormalizedData& nd, GpMode mode, const KernelParams& params) {
  try {
    const double v = condition_normalized(nd, mode, params).lml;
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotPositiveDefinite) return -std::numeric_limits<double>::infinity();
    throw;
  }
}

// Search box in log space: [log sigma_f^2, log lambda..., log sigma_eps^2].
struct LogBox {
  Vector lo;
  Vector hi;
};

LogBox make_box(Eigen::Index n_scales) {
  LogBox box;
  box.lo.resize(n_scales + 2);
  box.hi.resize(n_scales + 2);
  box.lo[0] = std::log(1e-4);
  box.hi[0] = std::log(1e4);
  for (Eigen::Index i = 0; i < n_scales; ++i) {
    box.lo[1 + i] = std::log(1e-3);
    box.hi[1 + i] = std::log(1e2);
  }
  box.lo[n_scales + 1] = std::log(kNoiseFloor);
  box.hi[n_scales + 1] = std::log(1.0);
  return box;
}

KernelParams params_from_log(const Vector& z) {
  KernelParams p;
  const Eigen::Index ns = z.size() - 2;
  p.signal_variance = std::exp(z[0]);
  p.length_scales = z.segment(1, ns).array().exp();
  p.noise_variance = std::max(std::exp(z[ns + 1]), kNoiseFloor);
  return p;
}

Vector log_from_params(const KernelParams& p) {
  const Eigen::Index ns = p.length_scales.size();
  Vector z(ns + 2);
  z[0] = std::log(p.signal_variance);
  z.segment(1, ns) = p.length_scales.array().log();
  z[ns + 1] = std::log(p.noise_variance);
  return z;
}

Vector clamp(const Vector& z, const LogBox& box) { return z.cwiseMax(box.lo).cwiseMin(box.hi); }

struct MinimizeResult {
  Vector z;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

// L-BFGS with central-difference gradients and Armijo backtracking, iterates
// projected onto the box. f returns +inf where the objective is undefined.
template <class F>
MinimizeResult lbfgs_minimize(const F& f, Vector z, const LogBox& box, int max_iterations) {
  constexpr int kMemory = 8;
  constexpr double kFdStep = 1e-5;
  constexpr double kGradTol = 1e-5;
  constexpr double kRelTol = 1e-10;

  auto gradient = [&](const Vector& at, double f_at) {
    Vector g(at.size());
    for (Eigen::Index i = 0; i < at.size(); ++i) {
      Vector zp = at;
      Vector zm = at;
      zp[i] += kFdStep;
      zm[i] -= kFdStep;
      const double fp = f(zp);
      const double fm = f(zm);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g[i] = (fp - fm) / (2.0 * kFdStep);
      } else if (std::isfinite(fp)) {
        g[i] = (fp - f_at) / kFdStep;
      } else if (std::isfinite(fm)) {
        g[i] = (f_at - fm) / kFdStep;
      } else {
        g[i] = 0.0;
      }
    }
    // Components pushing out of the box are inactive.
    for (Eigen::Index i = 0; i < at.size(); ++i) {
      if ((at[i] <= box.lo[i] && g[i] > 0.0) || (at[i] >= box.hi[i] && g[i] < 0.0)) g[i] = 0.0;
    }
    return g;
  };

  MinimizeResult res;
  z = clamp(z, box);
  double fz = f(z);
  res.z = z;
  res.f = fz;
  if (!std::isfinite(fz)) return res;
  Vector g = gradient(z, fz);
  std::deque<Vector> s_hist;
  std::deque<Vector> y_hist;

  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    if (g.lpNorm<Eigen::Infinity>() < kGradTol) break;

    // Two-loop recursion.
    Vector q = g;
    std::vector<double> alphas(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      alphas[k] = rho * s_hist[k].dot(q);
      q -= alphas[k] * y_hist[k];
    }
    if (!s_hist.empty()) {
      q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      const double beta = rho * y_hist[k].dot(q);
      q += s_hist[k] * (alphas[k] - beta);
    }
    Vector dir = -q;
    if (dir.dot(g) >= 0.0) {
      dir = -g;
      s_hist.clear();
      y_hist.clear();
    }

    double step = 1.0;
    bool accepted = false;
    Vector z_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 40; ++ls) {
      z_new = clamp(z + step * dir, box);
      f_new = f(z_new);
      if (std::isfinite(f_new) && f_new <= fz + 1e-4 * g.dot(z_new - z)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Vector g_new = gradient(z_new, f_new);
    const Vector s = z_new - z;
    const Vector y = g_new - g;
    const double f_change = fz - f_new;
    z = z_new;
    fz = f_new;
    g = g_new;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    if (f_change <= kRelTol * std::max(1.0, std::abs(fz))) break;
  }
  res.z = z;
  res.f = fz;
  return res;
}

// Portable uniform draw in [0, 1).
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo));
}

}  // namespace

GpModel GpModel::condition(const TrainingSet& data, GpMode mode, KernelParams params) {
  data.validate(mode);
  params.validate(static_cast<Eigen::Index>(data.dim()));
  GpModel m;
  m.mode_ = mode;
  m.params_ = params;
  m.data_ = data;
  if (mode == GpMode::GradientFree) m.data_.gradients.reset();
  m.norm_ = make_normalization(data);
  const NormalizedData nd = normalize(data, mode, m.norm_);
  m.x_norm_ = nd.x;
  m.y_norm_ = nd.y;
  Conditioned c = condition_normalized(nd, mode, params);
  m.factor_ = std::move(c.factor);
  m.alpha_ = std::move(c.alpha);
  m.lml_ = c.lml;
  m.log_.log_marginal_likelihood = c.lml;
  return m;
}

GpPrediction GpModel::predict(const Vector& x) const {
  const Vector xn = norm_.input(x);
  const Eigen::Index d = xn.size();
  const Matrix star = xn.transpose();
  GpPrediction out;
  if (mode_ == GpMode::GradientFree) {
    const Matrix ks = build_covariance(star, x_norm_, params_, mode_);
    out.mean = norm_.y_mean + norm_.y_scale * ks.row(0).dot(alpha_);
    return out;
  }
  // Rows: value, then d derivatives at x*.
  const Matrix ks = build_covariance(star, x_norm_, params_, mode_);
  const Vector m = ks * alpha_;
  out.mean = norm_.y_mean + norm_.y_scale * m[0];
  out.gradient.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) out.gradient[i] = m[1 + i] * norm_.y_scale / norm_.scale[i];
  return out;
}

Vector GpModel::value_row(const Vector& xn) const {
  const Eigen::Index n = x_norm_.rows();
  const Eigen::Index d = x_norm_.cols();
  const Vector w = inverse_sq_scales(params_, d);
  const double sf2 = params_.signal_variance;
  if (mode_ == GpMode::GradientFree) {
    Vector row(n);
    for (Eigen::Index j = 0; j < n; ++j) row[j] = kernel_value(xn.transpose(), x_norm_.row(j), w, sf2);
    return row;
  }
  const Eigen::Index block = d + 1;
  Vector row(n * block);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double k = kernel_value(xn.transpose(), x_norm_.row(j), w, sf2);
    row[j * block] = k;
    for (Eigen::Index i = 0; i < d; ++i) row[j * block + 1 + i] = k * w[i] * (xn[i] - x_norm_(j, i));
  }
  return row;
}

double GpModel::variance_from_row(Vector row) const {
  factor_.solve_lower_in_place(row);
  double var = params_.signal_variance - row.squaredNorm();
  if (var < 0.0) {
    if (var < -1e-10 * params_.signal_variance) {
      throw Error(ErrorKind::NegativeVariance, "posterior variance " + std::to_string(var));
    }
    var = 0.0;
  }
  return var * norm_.y_scale * norm_.y_scale;
}

double GpModel::variance(const Vector& x) const { return variance_from_row(value_row(norm_.input(x))); }

double GpModel::mean(const Vector& x) const {
  return norm_.y_mean + norm_.y_scale * value_row(norm_.input(x)).dot(alpha_);
}

std::pair<double, double> GpModel::mean_and_variance(const Vector& x) const {
  Vector row = value_row(norm_.input(x));
  const double m = norm_.y_mean + norm_.y_scale * row.dot(alpha_);
  return {m, variance_from_row(std::move(row))};
}

KernelParams default_kernel_params(Eigen::Index n_scales) {
  KernelParams p;
  p.signal_variance = 1.0;
  p.length_scales = Vector::Constant(n_scales, 0.5);
  p.noise_variance = 1e-6;
  return p;
}

GpModel fit(const TrainingSet& data, GpMode mode, const FitOptions& options) {
  data.validate(mode);
  if (data.size() < 2) throw Error(ErrorKind::InvalidArgument, "fit needs at least two samples");
  const Normalization norm = make_normalization(data);
  const NormalizedData nd = normalize(data, mode, norm);
  const Eigen::Index d = static_cast<Eigen::Index>(data.dim());
  const Eigen::Index n_scales = options.ard ? d : 1;
  const LogBox box = make_box(n_scales);

  auto objective = [&](const Vector& z) {
    const double lml = lml_or_neg_inf(nd, mode, params_from_log(z));
    return std::isfinite(lml) ? -lml : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> starts;
  starts.push_back(log_from_params(default_kernel_params(n_scales)));
  std::mt19937_64 rng(options.seed);
  for (int r = 0; r < options.restarts; ++r) {
    Vector z(n_scales + 2);
    z[0] = log_uniform(rng, 0.1, 10.0);
    for (Eigen::Index i = 0; i < n_scales; ++i) z[1 + i] = log_uniform(rng, 0.05, 2.0);
    z[n_scales + 1] = log_uniform(rng, 1e-8, 1e-2);
    starts.push_back(z);
  }

  FitLog log;
  log.default_start_initial = -objective(starts.front());
  Vector best_z;
  double best_f = std::numeric_limits<double>::infinity();
  for (const Vector& z0 : starts) {
    const MinimizeResult r = lbfgs_minimize(objective, z0, box, options.iterations);
    ++log.restarts_run;
    log.iterations += r.iterations;
    if (!std::isfinite(r.f)) {
      ++log.failed_starts;
      log.start_results.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    log.start_results.push_back(-r.f);
    if (r.f < best_f) {
      best_f = r.f;
      best_z = r.z;
    }
  }
  if (!std::isfinite(best_f)) {
    throw Error(ErrorKind::AllRestartsFailed, "every optimizer start failed to factorize the covariance");
  }
  log.restarts_run -= 1;  // the default start is not a restart
  GpModel model = GpModel::condition(data, mode, params_from_log(best_z));
  log.log_marginal_likelihood = model.lml_;
  model.log_ = log;
  return model;
}

GpPrediction predict_mean(const GpModel& model, const Vector& x) { return model.predict(x); }

double predict_variance(const GpModel& model, const Vector& x) { return model.variance(x); }

namespace {

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

Matrix json_matrix(const nlohmann::json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Vector row = json_vector(j.at(static_cast<std::size_t>(i)));
    if (row.size() != cols) throw Error(ErrorKind::DimensionMismatch, "ragged matrix in model file");
    m.row(i) = row.transpose();
  }
  return m;
}

}  // namespace

std::string model_to_json(const GpModel& model) {
  nlohmann::json j;
  j["mode"] = to_string(model.mode());
  j["signal_variance"] = model.params().signal_variance;
  j["length_scales"] = vector_json(model.params().length_scales);
  j["noise_variance"] = model.params().noise_variance;
  j["lower"] = vector_json(model.data().bounds.lower);
  j["upper"] = vector_json(model.data().bounds.upper);
  j["inputs"] = matrix_json(model.data().inputs);
  j["targets"] = vector_json(model.data().targets);
  if (model.data().gradients) j["gradients"] = matrix_json(*model.data().gradients);
  const FitLog& log = model.fit_log();
  j["fit_log"] = {{"log_marginal_likelihood", log.log_marginal_likelihood},
                  {"default_start_initial", log.default_start_initial},
                  {"start_results", log.start_results},
                  {"restarts_run", log.restarts_run},
                  {"failed_starts", log.failed_starts},
                  {"iterations", log.iterations}};
  return j.dump(1);
}

GpModel model_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    TrainingSet data;
    data.bounds.lower = json_vector(j.at("lower"));
    data.bounds.upper = json_vector(j.at("upper"));
    const Eigen::Index d = data.bounds.lower.size();
    data.inputs = json_matrix(j.at("inputs"), d);
    data.targets = json_vector(j.at("targets"));
    if (j.contains("gradients")) data.gradients = json_matrix(j.at("gradients"), d);
    KernelParams params;
    params.signal_variance = j.at("signal_variance").get<double>();
    params.length_scales = json_vector(j.at("length_scales"));
    params.noise_variance = j.at("noise_variance").get<double>();
    GpModel model = GpModel::condition(data, gp_mode_from_string(j.at("mode").get<std::string>()), params);
    if (j.contains("fit_log")) {
      const auto& l = j.at("fit_log");
      model.log_.default_start_initial = l.at("default_start_initial").get<double>();
      model.log_.start_results = l.at("start_results").get<std::vector<double>>();
      model.log_.restarts_run = l.at("restarts_run").get<int>();
      model.log_.failed_starts = l.at("failed_starts").get<int>();
      model.log_.iterations = l.at("iterations").get<int>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed model file: ") + e.what());
  }
}

double log_marginal_likelihood(const TrainingSet& data, GpMode mode, const KernelParams& params) {
  data.validate(mode);
  KernelParams p = params;
  p.validate(static_cast<Eigen::Index>(data.dim()));
  const Normalization norm = make_normalization(data);
  return lml_or_neg_inf(normalize(data, mode, norm), mode, p);
}

}  // namespace gisur
