#include "gisurrogate/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dual.hpp"

namespace gisur {

namespace {

using detail::Dual;
using detail::deriv_of;
using detail::value_of;

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kMmToM = 1e-3;
constexpr double kGauss = 0.57735026918962576451;

// Feasible geometries keep det J above this fraction of its reference value.
constexpr double kMinJacobianRatio = 0.05;

constexpr std::array<double, 4> kCornerXi{-1.0, 1.0, 1.0, -1.0};
constexpr std::array<double, 4> kCornerEta{-1.0, -1.0, 1.0, 1.0};

// 2x2 Gauss points first, then the four corners (used for Jacobian checks only).
constexpr std::array<std::array<double, 2>, 8> kSamplePoints{{
    {-kGauss, -kGauss}, {kGauss, -kGauss}, {kGauss, kGauss}, {-kGauss, kGauss},
    {-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0},
}};
constexpr std::size_t kGaussCount = 4;
constexpr std::size_t kSampleCount = kSamplePoints.size();

template <class S>
struct ShapeEval {
  std::array<double, 4> n{};
  std::array<S, 4> dx{};
  std::array<S, 4> dy{};
  S det{};
};

template <class S>
ShapeEval<S> shape_at(const std::array<S, 4>& x, const std::array<S, 4>& y, double xi, double eta) {
  ShapeEval<S> out;
  std::array<double, 4> dxi{};
  std::array<double, 4> deta{};
  for (int a = 0; a < 4; ++a) {
    out.n[a] = 0.25 * (1.0 + kCornerXi[a] * xi) * (1.0 + kCornerEta[a] * eta);
    dxi[a] = 0.25 * kCornerXi[a] * (1.0 + kCornerEta[a] * eta);
    deta[a] = 0.25 * kCornerEta[a] * (1.0 + kCornerXi[a] * xi);
  }
  S j11(0.0), j12(0.0), j21(0.0), j22(0.0);
  for (int a = 0; a < 4; ++a) {
    j11 += x[a] * dxi[a];
    j12 += x[a] * deta[a];
    j21 += y[a] * dxi[a];
    j22 += y[a] * deta[a];
  }
  out.det = j11 * j22 - j12 * j21;
  for (int a = 0; a < 4; ++a) {
    out.dx[a] = (j22 * dxi[a] - j21 * deta[a]) / out.det;
    out.dy[a] = (j11 * deta[a] - j12 * dxi[a]) / out.det;
  }
  return out;
}

template <class S>
S det_at(const std::array<S, 4>& x, const std::array<S, 4>& y, double xi, double eta) {
  return shape_at(x, y, xi, eta).det;
}

// Reluctivity model evaluated on s = |B|^2 = |grad A_z|^2.
struct Reluctivity {
  bool nonlinear = false;
  double linear = kNu0;
  BrauerConstants k;

  template <class S>
  S nu(const S& s) const {
    using std::exp;
    if (!nonlinear) return S(linear);
    return k.k1 * exp(k.k2 * s) + k.k3;
  }
  double dnu(double s) const { return nonlinear ? k.k1 * k.k2 * std::exp(k.k2 * s) : 0.0; }
  // Psi(s) = int_0^s nu.
  template <class S>
  S psi(const S& s) const {
    using std::exp;
    if (!nonlinear) return linear * s;
    return (k.k1 / k.k2) * (exp(k.k2 * s) - 1.0) + k.k3 * s;
  }
};

struct ElementSources {
  bool magnet = false;
  double nu_magnet = kNu0;
  double current = 0.0;  // A/m^2
};

template <class S>
std::array<S, 4> element_residual(const std::array<S, 4>& x, const std::array<S, 4>& y,
                                  const std::array<double, 4>& ue, const Reluctivity& mat,
                                  const ElementSources& src, const S& brem_x, const S& brem_y) {
  std::array<S, 4> r{};
  for (std::size_t g = 0; g < kGaussCount; ++g) {
    const auto sh = shape_at(x, y, kSamplePoints[g][0], kSamplePoints[g][1]);
    S gx(0.0), gy(0.0);
    for (int b = 0; b < 4; ++b) {
      gx += ue[b] * sh.dx[b];
      gy += ue[b] * sh.dy[b];
    }
    const S nu = mat.nu(gx * gx + gy * gy);
    for (int a = 0; a < 4; ++a) {
      S term = nu * (gx * sh.dx[a] + gy * sh.dy[a]);
      if (src.magnet) {
        // B_rem^perp = (-B_y, B_x)
        term -= src.nu_magnet * (-brem_y * sh.dx[a] + brem_x * sh.dy[a]);
      }
      if (src.current != 0.0) term -= S(src.current * sh.n[a]);
      r[a] += sh.det * term;
    }
  }
  return r;
}

template <class S>
S element_energy(const std::array<S, 4>& x, const std::array<S, 4>& y, const std::array<double, 4>& ue,
                 const Reluctivity& mat) {
  S w(0.0);
  for (std::size_t g = 0; g < kGaussCount; ++g) {
    const auto sh = shape_at(x, y, kSamplePoints[g][0], kSamplePoints[g][1]);
    S gx(0.0), gy(0.0);
    for (int b = 0; b < 4; ++b) {
      gx += ue[b] * sh.dx[b];
      gy += ue[b] * sh.dy[b];
    }
    w += sh.det * 0.5 * mat.psi(gx * gx + gy * gy);
  }
  return w;
}

// Secant stiffness and Newton tangent for one element.
void element_matrices(const std::array<double, 4>& x, const std::array<double, 4>& y,
                      const std::array<double, 4>& ue, const Reluctivity& mat, double k[4][4],
                      double t[4][4]) {
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) k[a][b] = t[a][b] = 0.0;
  for (std::size_t g = 0; g < kGaussCount; ++g) {
    const auto sh = shape_at(x, y, kSamplePoints[g][0], kSamplePoints[g][1]);
    double gx = 0.0, gy = 0.0;
    for (int b = 0; b < 4; ++b) {
      gx += ue[b] * sh.dx[b];
      gy += ue[b] * sh.dy[b];
    }
    const double s = gx * gx + gy * gy;
    const double nu = mat.nu(s);
    const double dnu2 = 2.0 * mat.dnu(s);
    std::array<double, 4> gu{};
    for (int a = 0; a < 4; ++a) gu[a] = gx * sh.dx[a] + gy * sh.dy[a];
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const double kab = sh.det * nu * (sh.dx[a] * sh.dx[b] + sh.dy[a] * sh.dy[b]);
        k[a][b] += kab;
        t[a][b] += kab + sh.det * dnu2 * gu[a] * gu[b];
      }
    }
  }
}

double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

// Even/odd element count closest to target with the same parity as the grid
// so the block stays symmetric about the domain center.
int block_elements(double target_mm, double h_mm, int resolution) {
  const int parity = resolution % 2;
  int best = parity == 0 ? 2 : 1;
  double best_err = std::abs(best * h_mm - target_mm);
  for (int n = best; n <= resolution - 2; n += 2) {
    const double err = std::abs(n * h_mm - target_mm);
    if (err < best_err) {
      best = n;
      best_err = err;
    }
  }
  return best;
}

}  // namespace

std::array<std::string, kParamCount> param_names() { return {"MH", "MW", "MAG", "Theta1"}; }

void ParamBounds::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw Error(ErrorKind::InvalidArgument, "bounds must have matching non-zero length");
  }
  require_finite(lower, "lower bounds");
  require_finite(upper, "upper bounds");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (upper[i] < lower[i]) {
      throw Error(ErrorKind::InvalidArgument, "upper bound below lower bound at index " + std::to_string(i));
    }
  }
}

ParamBounds default_bounds() {
  ParamBounds b;
  b.lower = Vector{{2.0, 8.0, 5.0, 15.0}};
  b.upper = Vector{{12.0, 22.0, 15.0, 23.0}};
  return b;
}

bool ParamPoint::in_bounds() const {
  if (values.size() != bounds.lower.size()) return false;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values[i] >= bounds.lower[i] && values[i] <= bounds.upper[i])) return false;
  }
  return true;
}

ParamPoint make_point(const ParamBounds& bounds, const Vector& values) {
  if (values.size() != bounds.lower.size()) {
    throw Error(ErrorKind::DimensionMismatch, "point length does not match bounds");
  }
  return ParamPoint{values, bounds};
}

ParamPoint midpoint(const ParamBounds& bounds) { return ParamPoint{bounds.midpoint(), bounds}; }

std::string to_string(MaterialLaw law) { return law == MaterialLaw::Linear ? "linear" : "brauer"; }

MaterialLaw material_from_string(const std::string& s) {
  if (s == "linear") return MaterialLaw::Linear;
  if (s == "brauer") return MaterialLaw::Brauer;
  throw Error(ErrorKind::InvalidArgument, "unknown material law '" + s + "'");
}

void TestbedConfig::validate() const {
  if (resolution < 4) throw Error(ErrorKind::InvalidArgument, "resolution must be >= 4");
  if (!(half_width_mm > 0.0)) throw Error(ErrorKind::InvalidArgument, "half width must be positive");
  if (brauer.k1 < 0.0 || brauer.k2 < 0.0 || brauer.k3 < 0.0) {
    throw Error(ErrorKind::InvalidArgument, "Brauer constants must be non-negative");
  }
  if (material == MaterialLaw::Brauer && brauer.k2 == 0.0) {
    throw Error(ErrorKind::InvalidArgument, "Brauer k2 must be positive");
  }
  bounds.validate();
  if (bounds.size() != kParamCount) {
    throw Error(ErrorKind::DimensionUnsupported, "the magnet testbed has exactly 4 design parameters");
  }
  if (!(newton_tolerance > 0.0) || newton_max_iterations < 1) {
    throw Error(ErrorKind::InvalidArgument, "bad Newton settings");
  }
}

Testbed::Testbed(TestbedConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int ne = cfg_.resolution;
  const int nn = ne + 1;
  const double L = cfg_.half_width_mm;
  h_mm_ = 2.0 * L / ne;

  const Vector mid = cfg_.bounds.midpoint();
  box_half_x_ = 0.5 * h_mm_ * block_elements(mid[kMagnetWidth], h_mm_, ne);
  box_half_y_ = 0.5 * h_mm_ * block_elements(mid[kMagnetHeight], h_mm_, ne);
  annulus_width_ = L - std::max(box_half_x_, box_half_y_) - h_mm_;

  ref_nodes_.resize(static_cast<std::size_t>(nn) * nn);
  free_of_node_.assign(ref_nodes_.size(), -1);
  blend_.assign(ref_nodes_.size(), 0.0);
  for (int j = 0; j < nn; ++j) {
    for (int i = 0; i < nn; ++i) {
      const std::size_t k = static_cast<std::size_t>(j) * nn + i;
      // Symmetric construction keeps x -> -x mirroring exact in floating point.
      const double X = (i - 0.5 * ne) * h_mm_;
      const double Y = (j - 0.5 * ne) * h_mm_;
      ref_nodes_[k] = {X, Y};
      if (i > 0 && j > 0 && i < ne && j < ne) {
        free_of_node_[k] = static_cast<long>(free_nodes_.size());
        free_nodes_.push_back(static_cast<int>(k));
      }
      const double dist = std::max(std::abs(X) - box_half_x_, std::abs(Y) - box_half_y_);
      if (dist <= 0.0) {
        blend_[k] = 1.0;
      } else if (annulus_width_ > 0.0 && free_of_node_[k] >= 0) {
        blend_[k] = 1.0 - smoothstep(dist / annulus_width_);
      }
    }
  }

  for (int j = 0; j < ne; ++j) {
    for (int i = 0; i < ne; ++i) {
      const int n0 = j * nn + i;
      elements_.push_back(Element{{n0, n0 + 1, n0 + nn + 1, n0 + nn}});
      const double xc = (i + 0.5 - 0.5 * ne) * h_mm_;
      const double yc = (j + 0.5 - 0.5 * ne) * h_mm_;
      const double dist = std::max(std::abs(xc) - box_half_x_, std::abs(yc) - box_half_y_);
      Region r = Region::Air;
      if (dist < 0.0) {
        r = Region::Magnet;
      } else if (dist < 2.0 * h_mm_) {
        r = Region::Core;
      } else if (std::abs(xc) < 0.5 * L && yc > L - 3.0 * h_mm_) {
        r = Region::Coil;
      }
      regions_.push_back(r);
    }
  }

  ref_det_.resize(elements_.size() * kSampleCount);
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> x{}, y{};
    for (int a = 0; a < 4; ++a) {
      x[a] = ref_nodes_[elements_[e].nodes[a]][0];
      y[a] = ref_nodes_[elements_[e].nodes[a]][1];
    }
    for (std::size_t s = 0; s < kSampleCount; ++s) {
      ref_det_[e * kSampleCount + s] = det_at(x, y, kSamplePoints[s][0], kSamplePoints[s][1]);
    }
  }
}

std::pair<int, int> Testbed::free_node_grid(std::size_t free_index) const {
  const int k = free_nodes_.at(free_index);
  const int nn = nodes_per_side();
  return {k % nn, k / nn};
}

long Testbed::free_index(int i, int j) const {
  const int nn = nodes_per_side();
  if (i < 0 || j < 0 || i >= nn || j >= nn) return -1;
  return free_of_node_[static_cast<std::size_t>(j) * nn + i];
}

void Testbed::check_point(const ParamPoint& p) const {
  if (p.size() != kParamCount) {
    throw Error(ErrorKind::DimensionMismatch, "expected 4 parameters, got " + std::to_string(p.size()));
  }
  require_finite(p.values, "parameter point");
}

namespace {

struct MagnetTransform {
  double cx, sx, sy, c, s;
};

MagnetTransform transform_of(const Vector& v, double ax, double ay) {
  const double theta = (v[kMagnetTilt] - 19.0) * kDegToRad;
  return {v[kMagnetOffset] - 10.0, v[kMagnetWidth] / (2.0 * ax), v[kMagnetHeight] / (2.0 * ay),
          std::cos(theta), std::sin(theta)};
}

}  // namespace

std::vector<std::array<double, 2>> Testbed::node_positions(const ParamPoint& p) const {
  check_point(p);
  const auto t = transform_of(p.values, box_half_x_, box_half_y_);
  std::vector<std::array<double, 2>> out(ref_nodes_.size());
  for (std::size_t k = 0; k < ref_nodes_.size(); ++k) {
    const double X = ref_nodes_[k][0];
    const double Y = ref_nodes_[k][1];
    const double w = blend_[k];
    if (w == 0.0) {
      out[k] = ref_nodes_[k];
      continue;
    }
    const double px = t.sx * X;
    const double py = t.sy * Y;
    const double tx = t.cx + t.c * px - t.s * py;
    const double ty = t.s * px + t.c * py;
    out[k] = {X + w * (tx - X), Y + w * (ty - Y)};
  }
  return out;
}

std::vector<std::array<double, 2>> Testbed::node_position_derivative(const ParamPoint& p,
                                                                     std::size_t i) const {
  check_point(p);
  const auto t = transform_of(p.values, box_half_x_, box_half_y_);
  std::vector<std::array<double, 2>> out(ref_nodes_.size(), {0.0, 0.0});
  if (p.bounds.frozen(i)) return out;
  for (std::size_t k = 0; k < ref_nodes_.size(); ++k) {
    const double w = blend_[k];
    if (w == 0.0) continue;
    const double X = ref_nodes_[k][0];
    const double Y = ref_nodes_[k][1];
    double dx = 0.0;
    double dy = 0.0;
    switch (i) {
      case kMagnetHeight: {
        const double dpy = Y / (2.0 * box_half_y_);
        dx = -t.s * dpy;
        dy = t.c * dpy;
        break;
      }
      case kMagnetWidth: {
        const double dpx = X / (2.0 * box_half_x_);
        dx = t.c * dpx;
        dy = t.s * dpx;
        break;
      }
      case kMagnetOffset:
        dx = 1.0;
        break;
      case kMagnetTilt: {
        const double px = t.sx * X;
        const double py = t.sy * Y;
        dx = kDegToRad * (-t.s * px - t.c * py);
        dy = kDegToRad * (t.c * px - t.s * py);
        break;
      }
      default:
        throw Error(ErrorKind::DimensionMismatch, "parameter index out of range");
    }
    out[k] = {w * dx, w * dy};
  }
  return out;
}

Vector Testbed::remanence(const ParamPoint& p) const {
  const double theta = (p.values[kMagnetTilt] - 19.0) * kDegToRad;
  // Magnetized along the magnet's local height axis.
  return Vector{{-cfg_.remanence_T * std::sin(theta), cfg_.remanence_T * std::cos(theta)}};
}

Vector Testbed::remanence_derivative(const ParamPoint& p, std::size_t i) const {
  if (i != kMagnetTilt || p.bounds.frozen(i)) return Vector::Zero(2);
  const double theta = (p.values[kMagnetTilt] - 19.0) * kDegToRad;
  return Vector{{-cfg_.remanence_T * std::cos(theta) * kDegToRad,
                 -cfg_.remanence_T * std::sin(theta) * kDegToRad}};
}

double Testbed::min_jacobian_ratio(const ParamPoint& p) const {
  const auto x = node_positions(p);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = x[elements_[e].nodes[a]][0];
      ey[a] = x[elements_[e].nodes[a]][1];
    }
    for (std::size_t s = 0; s < kSampleCount; ++s) {
      const double d = det_at(ex, ey, kSamplePoints[s][0], kSamplePoints[s][1]);
      worst = std::min(worst, d / ref_det_[e * kSampleCount + s]);
    }
  }
  return worst;
}

bool Testbed::is_feasible(const ParamPoint& p) const {
  if (p.size() != kParamCount || !p.values.allFinite()) return false;
  const auto t = transform_of(p.values, box_half_x_, box_half_y_);
  const double limit = cfg_.half_width_mm - h_mm_;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      const double px = t.sx * sx * box_half_x_;
      const double py = t.sy * sy * box_half_y_;
      const double cx = t.cx + t.c * px - t.s * py;
      const double cy = t.s * px + t.c * py;
      if (std::abs(cx) > limit || std::abs(cy) > limit) return false;
    }
  }
  return min_jacobian_ratio(p) > kMinJacobianRatio;
}

void Testbed::require_nondegenerate(const ParamPoint& p, const std::vector<std::array<double, 2>>& x) const {
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = x[elements_[e].nodes[a]][0];
      ey[a] = x[elements_[e].nodes[a]][1];
    }
    for (std::size_t s = 0; s < kSampleCount; ++s) {
      if (!(det_at(ex, ey, kSamplePoints[s][0], kSamplePoints[s][1]) > 0.0)) {
        std::string where;
        for (Eigen::Index i = 0; i < p.values.size(); ++i) where += " " + std::to_string(p.values[i]);
        throw Error(ErrorKind::DegenerateElement,
                    "element " + std::to_string(e) + " inverted at p =" + where);
      }
    }
  }
}

std::array<double, 4> Testbed::element_state(std::size_t e, const Vector& u) const {
  std::array<double, 4> ue{};
  for (int a = 0; a < 4; ++a) {
    const long f = free_of_node_[elements_[e].nodes[a]];
    ue[a] = f >= 0 ? u[f] : 0.0;
  }
  return ue;
}

namespace {

Reluctivity reluctivity_for(const TestbedConfig& cfg, Region r) {
  Reluctivity m;
  m.linear = kNu0;
  if (r == Region::Core && cfg.material == MaterialLaw::Brauer) {
    m.nonlinear = true;
    m.k = cfg.brauer;
  }
  return m;
}

ElementSources sources_for(const TestbedConfig& cfg, Region r) {
  ElementSources s;
  s.magnet = r == Region::Magnet;
  if (r == Region::Coil) s.current = cfg.source_current_A_per_mm2 * 1e6;
  return s;
}

}  // namespace

AssembledSystem Testbed::assemble(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  if (static_cast<std::size_t>(u.size()) != free_count()) {
    throw Error(ErrorKind::DimensionMismatch, "state length does not match free node count");
  }
  const auto x = node_positions(p);
  require_nondegenerate(p, x);
  const Vector brem = remanence(p);
  const std::size_t n = free_count();
  AssembledSystem sys{Matrix::Zero(n, n), Vector::Zero(n)};
  const std::array<double, 4> zero{};
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = kMmToM * x[elements_[e].nodes[a]][0];
      ey[a] = kMmToM * x[elements_[e].nodes[a]][1];
    }
    const auto ue = element_state(e, u);
    const Reluctivity mat = reluctivity_for(cfg_, regions_[e]);
    const ElementSources src = sources_for(cfg_, regions_[e]);
    double k[4][4];
    double t[4][4];
    element_matrices(ex, ey, ue, mat, k, t);
    // Load vector = -R(u = 0).
    const auto load = element_residual<double>(ex, ey, zero, mat, src, brem[0], brem[1]);
    for (int a = 0; a < 4; ++a) {
      const long fa = free_of_node_[elements_[e].nodes[a]];
      if (fa < 0) continue;
      sys.rhs[fa] -= load[a];
      for (int b = 0; b < 4; ++b) {
        const long fb = free_of_node_[elements_[e].nodes[b]];
        if (fb >= 0) sys.matrix(fa, fb) += k[a][b];
      }
    }
  }
  return sys;
}

Matrix Testbed::unit_stiffness(const ParamPoint& p) const {
  check_point(p);
  const auto x = node_positions(p);
  require_nondegenerate(p, x);
  const std::size_t n = free_count();
  Matrix A = Matrix::Zero(n, n);
  Reluctivity unit;
  unit.linear = 1.0;
  const std::array<double, 4> zero{};
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = kMmToM * x[elements_[e].nodes[a]][0];
      ey[a] = kMmToM * x[elements_[e].nodes[a]][1];
    }
    double k[4][4];
    double t[4][4];
    element_matrices(ex, ey, zero, unit, k, t);
    for (int a = 0; a < 4; ++a) {
      const long fa = free_of_node_[elements_[e].nodes[a]];
      if (fa < 0) continue;
      for (int b = 0; b < 4; ++b) {
        const long fb = free_of_node_[elements_[e].nodes[b]];
        if (fb >= 0) A(fa, fb) += k[a][b];
      }
    }
  }
  return A;
}

Vector Testbed::residual(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  const auto x = node_positions(p);
  const Vector brem = remanence(p);
  Vector r = Vector::Zero(static_cast<Eigen::Index>(free_count()));
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = kMmToM * x[elements_[e].nodes[a]][0];
      ey[a] = kMmToM * x[elements_[e].nodes[a]][1];
    }
    const auto re = element_residual<double>(ex, ey, element_state(e, u), reluctivity_for(cfg_, regions_[e]),
                                             sources_for(cfg_, regions_[e]), brem[0], brem[1]);
    for (int a = 0; a < 4; ++a) {
      const long fa = free_of_node_[elements_[e].nodes[a]];
      if (fa >= 0) r[fa] += re[a];
    }
  }
  return r;
}

Matrix Testbed::tangent(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  const auto x = node_positions(p);
  require_nondegenerate(p, x);
  const std::size_t n = free_count();
  Matrix T = Matrix::Zero(n, n);
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = kMmToM * x[elements_[e].nodes[a]][0];
      ey[a] = kMmToM * x[elements_[e].nodes[a]][1];
    }
    double k[4][4];
    double t[4][4];
    element_matrices(ex, ey, element_state(e, u), reluctivity_for(cfg_, regions_[e]), k, t);
    for (int a = 0; a < 4; ++a) {
      const long fa = free_of_node_[elements_[e].nodes[a]];
      if (fa < 0) continue;
      for (int b = 0; b < 4; ++b) {
        const long fb = free_of_node_[elements_[e].nodes[b]];
        if (fb >= 0) T(fa, fb) += t[a][b];
      }
    }
  }
  return T;
}

Matrix Testbed::residual_parameter_derivative(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  if (cfg_.finite_difference_geometry) return residual_parameter_derivative_fd(p, u);
  const auto x = node_positions(p);
  const Vector brem = remanence(p);
  const std::size_t np = p.size();
  Matrix dR = Matrix::Zero(static_cast<Eigen::Index>(free_count()), static_cast<Eigen::Index>(np));
  for (std::size_t i = 0; i < np; ++i) {
    if (p.bounds.frozen(i)) continue;
    const auto dx = node_position_derivative(p, i);
    const Vector dbrem = remanence_derivative(p, i);
    const Dual bx(brem[0], dbrem[0]);
    const Dual by(brem[1], dbrem[1]);
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      std::array<Dual, 4> ex{}, ey{};
      for (int a = 0; a < 4; ++a) {
        const int k = elements_[e].nodes[a];
        ex[a] = Dual(kMmToM * x[k][0], kMmToM * dx[k][0]);
        ey[a] = Dual(kMmToM * x[k][1], kMmToM * dx[k][1]);
      }
      const auto re = element_residual<Dual>(ex, ey, element_state(e, u), reluctivity_for(cfg_, regions_[e]),
                                             sources_for(cfg_, regions_[e]), bx, by);
      for (int a = 0; a < 4; ++a) {
        const long fa = free_of_node_[elements_[e].nodes[a]];
        if (fa >= 0) dR(fa, static_cast<Eigen::Index>(i)) += re[a].d;
      }
    }
  }
  return dR;
}

Matrix Testbed::residual_parameter_derivative_fd(const ParamPoint& p, const Vector& u) const {
  const std::size_t np = p.size();
  Matrix dR = Matrix::Zero(static_cast<Eigen::Index>(free_count()), static_cast<Eigen::Index>(np));
  for (std::size_t i = 0; i < np; ++i) {
    if (p.bounds.frozen(i)) continue;
    const double step = 1e-7 * p.bounds.range(i);
    ParamPoint plus = p;
    ParamPoint minus = p;
    plus.values[i] += step;
    minus.values[i] -= step;
    dR.col(static_cast<Eigen::Index>(i)) = (residual(plus, u) - residual(minus, u)) / (2.0 * step);
  }
  return dR;
}

FieldSolution Testbed::solve(const ParamPoint& p) const {
  check_point(p);
  if (!p.in_bounds()) throw Error(ErrorKind::InvalidArgument, "parameter point outside its bounds");
  const std::size_t n = free_count();
  FieldSolution sol;
  sol.u = Vector::Zero(static_cast<Eigen::Index>(n));
  const AssembledSystem initial = assemble(p, sol.u);
  const double bnorm = initial.rhs.norm();
  if (bnorm == 0.0) {
    sol.sensitivities = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p.size()));
    sol.residual_history.push_back(0.0);
    return sol;
  }

  Vector r = residual(p, sol.u);
  double rel = r.norm() / bnorm;
  sol.residual_history.push_back(rel);
  while (rel > cfg_.newton_tolerance) {
    if (sol.newton_iterations >= cfg_.newton_max_iterations) {
      throw Error(ErrorKind::NewtonDivergence,
                  "no convergence after " + std::to_string(sol.newton_iterations) + " iterations, residual " +
                      std::to_string(rel));
    }
    SpdFactorization f;
    try {
      f = spd_factorize_jittered(tangent(p, sol.u));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NotPositiveDefinite) throw Error(ErrorKind::SingularTangent, e.what());
      throw;
    }
    const Vector du = -f.solve(r);
    // Full step, halved while the residual does not decrease.
    double alpha = 1.0;
    int failures = 0;
    for (;;) {
      Vector trial = sol.u + alpha * du;
      Vector r_trial = residual(p, trial);
      const double rel_trial = r_trial.norm() / bnorm;
      if (rel_trial < rel) {
        sol.u = std::move(trial);
        r = std::move(r_trial);
        rel = rel_trial;
        break;
      }
      if (++failures >= 5) {
        throw Error(ErrorKind::NewtonDivergence, "residual did not decrease over 5 damped steps");
      }
      alpha *= 0.5;
    }
    ++sol.newton_iterations;
    sol.residual_history.push_back(rel);
  }
  sol.residual_norm = rel;
  sol.sensitivities = solve_sensitivities(p, sol.u);
  return sol;
}

Matrix Testbed::solve_sensitivities(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  const Matrix dR = residual_parameter_derivative(p, u);
  if (dR.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(dR.rows(), dR.cols());
  SpdFactorization f;
  try {
    f = spd_factorize_jittered(tangent(p, u));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotPositiveDefinite) throw Error(ErrorKind::SingularTangent, e.what());
    throw;
  }
  return -f.solve(dR);
}

double Testbed::energy(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  const auto x = node_positions(p);
  double w = 0.0;
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    std::array<double, 4> ex{}, ey{};
    for (int a = 0; a < 4; ++a) {
      ex[a] = kMmToM * x[elements_[e].nodes[a]][0];
      ey[a] = kMmToM * x[elements_[e].nodes[a]][1];
    }
    w += element_energy<double>(ex, ey, element_state(e, u), reluctivity_for(cfg_, regions_[e]));
  }
  return w;
}

Vector Testbed::energy_parameter_derivative_fd(const ParamPoint& p, const Vector& u) const {
  Vector g = Vector::Zero(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.bounds.frozen(i)) continue;
    const double step = 1e-7 * p.bounds.range(i);
    ParamPoint plus = p;
    ParamPoint minus = p;
    plus.values[i] += step;
    minus.values[i] -= step;
    g[static_cast<Eigen::Index>(i)] = (energy(plus, u) - energy(minus, u)) / (2.0 * step);
  }
  return g;
}

std::pair<Vector, Vector> Testbed::energy_partials(const ParamPoint& p, const Vector& u) const {
  check_point(p);
  // dW/du = A(p, u) u since d/du 1/2 Psi(|grad u|^2) = nu grad u . grad N.
  Vector dWdu = assemble(p, u).matrix * u;
  if (cfg_.finite_difference_geometry) return {energy_parameter_derivative_fd(p, u), dWdu};

  const auto x = node_positions(p);
  Vector dWdp = Vector::Zero(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.bounds.frozen(i)) continue;
    const auto dx = node_position_derivative(p, i);
    double acc = 0.0;
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      std::array<Dual, 4> ex{}, ey{};
      for (int a = 0; a < 4; ++a) {
        const int k = elements_[e].nodes[a];
        ex[a] = Dual(kMmToM * x[k][0], kMmToM * dx[k][0]);
        ey[a] = Dual(kMmToM * x[k][1], kMmToM * dx[k][1]);
      }
      acc += element_energy<Dual>(ex, ey, element_state(e, u), reluctivity_for(cfg_, regions_[e])).d;
    }
    dWdp[static_cast<Eigen::Index>(i)] = acc;
  }
  return {dWdp, dWdu};
}

KpiSample Testbed::compute_kpi(const ParamPoint& p, const FieldSolution& sol) const {
  check_point(p);
  KpiSample kpi;
  kpi.value = energy(p, sol.u);
  auto [dWdp, dWdu] = energy_partials(p, sol.u);
  kpi.gradient = dWdp;
  if (dWdu.cwiseAbs().maxCoeff() == 0.0) return kpi;
  SpdFactorization f;
  try {
    f = spd_factorize_jittered(tangent(p, sol.u));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotPositiveDefinite) throw Error(ErrorKind::SingularTangent, e.what());
    throw;
  }
  // Adjoint: J^T lambda = dW/du, J symmetric.
  const Vector adjoint = f.solve(dWdu);
  kpi.gradient -= residual_parameter_derivative(p, sol.u).transpose() * adjoint;
  return kpi;
}

AssembledSystem assemble(const ParamPoint& p, const Vector& u, const TestbedConfig& cfg) {
  return Testbed(cfg).assemble(p, u);
}

FieldSolution solve(const ParamPoint& p, const TestbedConfig& cfg) { return Testbed(cfg).solve(p); }

Matrix solve_sensitivities(const ParamPoint& p, const Vector& u, const TestbedConfig& cfg) {
  return Testbed(cfg).solve_sensitivities(p, u);
}

KpiSample compute_kpi(const ParamPoint& p, const FieldSolution& sol, const TestbedConfig& cfg) {
  return Testbed(cfg).compute_kpi(p, sol);
}

bool is_feasible(const ParamPoint& p, const TestbedConfig& cfg) { return Testbed(cfg).is_feasible(p); }

}  // namespace gisur
