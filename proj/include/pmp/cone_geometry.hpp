#pragma once

// Finitely generated convex cones: membership, polar, supporting and
// separating hyperplanes, and the covered-point root finder used to realise
// interior directions of perturbation cones.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pmp/core.hpp"
#include "pmp/linprog.hpp"

namespace pmp {

/// The cone { sum_i l_i g_i : l_i >= 0 }. Zero generators and repeated
/// directions are dropped on construction; `origin[i]` is the index, in the
/// list handed to `from`, of the i-th kept generator.
struct GeneratedCone {
  Eigen::Index dim = 0;
  std::vector<Vector> generators;
  std::vector<std::size_t> origin;

  GeneratedCone() = default;
  explicit GeneratedCone(Eigen::Index n) : dim(n) {}

  static GeneratedCone from(Eigen::Index n, const std::vector<Vector>& raw, double zero_tol = 1e-14) {
    if (n < 1) throw InputError("cone dimension must be at least 1");
    GeneratedCone c(n);
    std::vector<Vector> units;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      require_dim(raw[i].size(), n, "cone generator");
      if (!raw[i].allFinite()) throw InputError("cone generator has non-finite entries");
      const double norm = raw[i].norm();
      if (norm <= zero_tol) continue;
      Vector u = raw[i] / norm;
      const bool dup = std::any_of(units.begin(), units.end(),
                                   [&](const Vector& w) { return (w - u).lpNorm<Eigen::Infinity>() <= 1e-12; });
      if (dup) continue;
      units.push_back(u);
      c.generators.push_back(raw[i]);
      c.origin.push_back(i);
    }
    return c;
  }

  static GeneratedCone from(const std::vector<Vector>& raw) {
    if (raw.empty()) throw InputError("cannot infer cone dimension from an empty generator list");
    return from(raw.front().size(), raw);
  }

  std::size_t size() const { return generators.size(); }
  bool empty() const { return generators.empty(); }

  /// n x N matrix of unit-normalised generators.
  Matrix unit_matrix() const {
    Matrix g(dim, static_cast<Eigen::Index>(generators.size()));
    for (std::size_t i = 0; i < generators.size(); ++i)
      g.col(static_cast<Eigen::Index>(i)) = generators[i] / generators[i].norm();
    return g;
  }

  Matrix matrix() const {
    Matrix g(dim, static_cast<Eigen::Index>(generators.size()));
    for (std::size_t i = 0; i < generators.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = generators[i];
    return g;
  }

  GeneratedCone negated() const {
    GeneratedCone c = *this;
    for (auto& g : c.generators) g = -g;
    return c;
  }
};

enum class Membership { outside, boundary, interior };

inline const char* to_string(Membership m) {
  switch (m) {
    case Membership::outside: return "outside";
    case Membership::boundary: return "boundary";
    case Membership::interior: return "interior";
  }
  return "?";
}

struct MembershipReport {
  Membership verdict = Membership::outside;
  /// L1 distance from v/|v| to the cone.
  double distance = kInf;
  /// Largest t such that v/|v| = sum l_i u_i with every l_i >= t (u_i unit generators), capped at 1.
  double depth = 0.0;
  /// Nonnegative coefficients on the original generators reproducing v (empty when outside).
  Vector coefficients;
};

inline MembershipReport membership_report(const GeneratedCone& cone, const Vector& v, double tol = 1e-9) {
  require_dim(v.size(), cone.dim, "conic_membership vector");
  if (!(tol > 0.0)) throw InputError("conic_membership: tol must be positive");
  MembershipReport rep;
  const double vn = v.norm();
  const Eigen::Index n = cone.dim;
  const auto N = static_cast<Eigen::Index>(cone.size());
  if (N == 0) {
    rep.distance = vn > 0.0 ? 1.0 : 0.0;
    rep.verdict = vn > 0.0 ? Membership::outside : Membership::interior;
    rep.depth = vn > 0.0 ? 0.0 : 1.0;
    if (vn == 0.0) rep.coefficients = Vector::Zero(0);
    return rep;
  }
  const Matrix g = cone.unit_matrix();
  const Vector target = vn > 0.0 ? Vector(v / vn) : Vector::Zero(n);

  // Distance: min |r|_1  s.t.  G l + r+ - r- = target.
  {
    lp::LinearProgram prog;
    prog.cost = Vector::Zero(N + 2 * n);
    prog.cost.tail(2 * n).setOnes();
    prog.eq = Matrix::Zero(n, N + 2 * n);
    prog.eq.leftCols(N) = g;
    prog.eq.block(0, N, n, n) = Matrix::Identity(n, n);
    prog.eq.block(0, N + n, n, n) = -Matrix::Identity(n, n);
    prog.eq_rhs = target;
    const auto sol = lp::solve(prog);
    if (sol.status != lp::Status::optimal) throw NumericalError("conic_membership: distance program failed");
    rep.distance = std::max(0.0, sol.objective);
  }
  if (rep.distance > tol) {
    rep.verdict = Membership::outside;
    return rep;
  }

  // Depth: max t  s.t.  t * sum(u_i) + G mu = target,  mu >= 0,  0 <= t <= 1.
  lp::LinearProgram prog;
  prog.cost = Vector::Zero(N + 1);
  prog.cost(0) = -1.0;
  prog.eq = Matrix(n, N + 1);
  prog.eq.col(0) = g.rowwise().sum();
  prog.eq.rightCols(N) = g;
  prog.eq_rhs = target;
  prog.lower = Vector::Zero(N + 1);
  prog.upper = Vector::Constant(N + 1, kInf);
  prog.upper(0) = 1.0;
  const auto sol = lp::solve(prog);
  Vector unit_coeffs;
  if (sol.status == lp::Status::optimal) {
    rep.depth = std::max(0.0, sol.x(0));
    unit_coeffs = sol.x.tail(N).array() + rep.depth;
  } else {
    rep.depth = 0.0;
    // Representable only within tolerance; recover coefficients by nonnegative fit.
    lp::LinearProgram fit;
    fit.cost = Vector::Zero(N + 2 * n);
    fit.cost.tail(2 * n).setOnes();
    fit.eq = Matrix::Zero(n, N + 2 * n);
    fit.eq.leftCols(N) = g;
    fit.eq.block(0, N, n, n) = Matrix::Identity(n, n);
    fit.eq.block(0, N + n, n, n) = -Matrix::Identity(n, n);
    fit.eq_rhs = target;
    const auto f = lp::solve(fit);
    unit_coeffs = f.status == lp::Status::optimal ? Vector(f.x.head(N)) : Vector::Zero(N);
  }
  rep.verdict = rep.depth > tol ? Membership::interior : Membership::boundary;
  rep.coefficients = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i)
    rep.coefficients(i) = unit_coeffs(i) * vn / cone.generators[static_cast<std::size_t>(i)].norm();
  return rep;
}

inline Membership conic_membership(const GeneratedCone& cone, const Vector& v, double tol = 1e-9) {
  return membership_report(cone, v, tol).verdict;
}

/// alpha lies in the polar cone: alpha·g <= tol for every generator.
inline bool polar_contains(const GeneratedCone& cone, const Vector& alpha, double tol = 0.0) {
  require_dim(alpha.size(), cone.dim, "polar_contains covector");
  return std::all_of(cone.generators.begin(), cone.generators.end(),
                     [&](const Vector& g) { return alpha.dot(g) <= tol * g.norm(); });
}

/// A unit covector alpha != 0 with alpha·g <= 0 on every generator, or
/// nullopt when the cone is the whole space (its polar is {0}).
inline std::optional<Vector> supporting_hyperplane(const GeneratedCone& cone, double tol = 1e-9) {
  const Eigen::Index n = cone.dim;
  const auto N = static_cast<Eigen::Index>(cone.size());
  if (N == 0) {
    Vector a = Vector::Zero(n);
    a(0) = -1.0;
    return a;
  }
  const Matrix g = cone.unit_matrix();

  // Deepest polar direction: max s  s.t.  u_i·alpha + s <= 0,  |alpha|_inf <= 1,  0 <= s <= 1.
  {
    lp::LinearProgram prog;
    prog.cost = Vector::Zero(n + 1);
    prog.cost(n) = -1.0;
    prog.ub = Matrix(N, n + 1);
    prog.ub.leftCols(n) = g.transpose();
    prog.ub.col(n).setOnes();
    prog.ub_rhs = Vector::Zero(N);
    prog.lower = Vector::Constant(n + 1, -1.0);
    prog.upper = Vector::Constant(n + 1, 1.0);
    prog.lower(n) = 0.0;
    const auto sol = lp::solve(prog);
    if (sol.status == lp::Status::optimal && sol.x(n) > tol) {
      Vector a = sol.x.head(n);
      return Vector(a / a.norm());
    }
  }
  // The polar may still be a nonzero face (cone contains a line): probe each axis.
  for (Eigen::Index j = 0; j < n; ++j) {
    for (double sign : {1.0, -1.0}) {
      lp::LinearProgram prog;
      prog.cost = Vector::Zero(n);
      prog.cost(j) = -sign;
      prog.ub = g.transpose();
      prog.ub_rhs = Vector::Zero(N);
      prog.lower = Vector::Constant(n, -1.0);
      prog.upper = Vector::Constant(n, 1.0);
      const auto sol = lp::solve(prog);
      if (sol.status != lp::Status::optimal) continue;
      if (-sol.objective > tol) {
        Vector a = sol.x;
        a /= a.norm();
        if ((g.transpose() * a).maxCoeff() <= tol) return a;
      }
    }
  }
  return std::nullopt;
}

struct SeparationResult {
  bool separated = false;
  /// alpha(C1) <= 0 <= alpha(C2).
  std::optional<Vector> hyperplane;
  /// A point in the relative interior of both cones.
  std::optional<Vector> witness;
};

namespace detail {

inline GeneratedCone difference_cone(const GeneratedCone& c1, const GeneratedCone& c2) {
  require_dim(c2.dim, c1.dim, "cone pair");
  std::vector<Vector> gens = c1.generators;
  for (const auto& g : c2.generators) gens.push_back(-g);
  return GeneratedCone::from(c1.dim, gens);
}

}  // namespace detail

inline SeparationResult separate(const GeneratedCone& c1, const GeneratedCone& c2, double tol = 1e-9) {
  const GeneratedCone diff = detail::difference_cone(c1, c2);
  SeparationResult res;
  if (auto alpha = supporting_hyperplane(diff, tol)) {
    res.separated = true;
    res.hyperplane = *alpha;
    return res;
  }
  // C1 - C2 = E: relative interiors meet. Find sum l_i u_i = sum m_j w_j with all l, m >= 1.
  const Eigen::Index n = c1.dim;
  const auto n1 = static_cast<Eigen::Index>(c1.size());
  const auto n2 = static_cast<Eigen::Index>(c2.size());
  const Matrix g1 = c1.empty() ? Matrix(n, 0) : c1.unit_matrix();
  const Matrix g2 = c2.empty() ? Matrix(n, 0) : c2.unit_matrix();
  lp::LinearProgram prog;
  prog.cost = Vector::Ones(n1 + n2);
  prog.eq = Matrix(n, n1 + n2);
  prog.eq.leftCols(n1) = g1;
  prog.eq.rightCols(n2) = -g2;
  prog.eq_rhs = Vector::Zero(n);
  prog.lower = Vector::Ones(n1 + n2);
  prog.upper = Vector::Constant(n1 + n2, kInf);
  const auto sol = lp::solve(prog);
  res.separated = false;
  if (sol.status == lp::Status::optimal) {
    res.witness = Vector(g1 * sol.x.head(n1));
  } else {
    throw NumericalError("separate: no separating hyperplane, yet no common relative-interior point was found");
  }
  return res;
}

/// Whether C1 - C2 is the whole space. Decided by expressing every +-e_i in
/// the cone generated by C1 and -C2, then cross-checked against `separate`.
inline bool difference_spans(const GeneratedCone& c1, const GeneratedCone& c2, double tol = 1e-9) {
  const GeneratedCone diff = detail::difference_cone(c1, c2);
  bool spans = true;
  for (Eigen::Index i = 0; i < diff.dim && spans; ++i) {
    for (double sign : {1.0, -1.0}) {
      Vector e = Vector::Zero(diff.dim);
      e(i) = sign;
      if (conic_membership(diff, e, tol) == Membership::outside) {
        spans = false;
        break;
      }
    }
  }
  const bool separated = separate(c1, c2, tol).separated;
  if (spans == separated) {
    throw NumericalError("difference_spans: membership route and separation route disagree");
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Covered-point root finding on a closed ball.

struct CoveredPointOptions {
  int boundary_samples = 0;  // 0: 64 * n
  double tol = 1e-10;
  int max_iterations = 60;
  int grid_per_dim = 5;
  double fd_step = 1e-7;
};

struct CoveredPointResult {
  Vector x;
  double residual = kInf;
  /// min over sampled boundary points of |x - p| - |g(x) - x|; positive when the hypothesis holds.
  double boundary_margin = kInf;
  int iterations = 0;
};

class BoundaryConditionViolation : public NumericalError {
 public:
  BoundaryConditionViolation(Vector at, double margin)
      : NumericalError("covered_point_root: boundary condition |g(x) - x| < |x - p| fails at a sampled point"),
        point(std::move(at)),
        margin(margin) {}
  Vector point;
  double margin;
};

class RootSearchExhausted : public NumericalError {
 public:
  RootSearchExhausted(Vector best, double residual)
      : NumericalError("covered_point_root: iteration budget exhausted (best residual " +
                       std::to_string(residual) + ")"),
        best_point(std::move(best)),
        best_residual(residual) {}
  Vector best_point;
  double best_residual;
};

/// Deterministic, roughly uniform unit directions in R^n.
inline std::vector<Vector> sphere_directions(Eigen::Index n, int count) {
  std::vector<Vector> dirs;
  if (n <= 0) return dirs;
  if (n == 1) {
    dirs.push_back(Vector::Constant(1, 1.0));
    dirs.push_back(Vector::Constant(1, -1.0));
    return dirs;
  }
  if (n == 2) {
    for (int k = 0; k < count; ++k) {
      const double th = 2.0 * std::numbers::pi * k / count;
      dirs.push_back(make_vector({std::cos(th), std::sin(th)}));
    }
    return dirs;
  }
  static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79};
  const Eigen::Index pairs = (n + 1) / 2;
  if (2 * pairs > static_cast<Eigen::Index>(std::size(primes)))
    throw InputError("sphere_directions: dimension too large");
  auto halton = [](int index, int base) {
    double f = 1.0, r = 0.0;
    for (int i = index; i > 0; i /= base) {
      f /= base;
      r += f * (i % base);
    }
    return r;
  };
  for (int k = 1; static_cast<int>(dirs.size()) < count; ++k) {
    Vector z(2 * pairs);
    for (Eigen::Index p = 0; p < pairs; ++p) {
      const double u1 = std::max(halton(k, primes[2 * p]), 1e-12);
      const double u2 = halton(k, primes[2 * p + 1]);
      const double rad = std::sqrt(-2.0 * std::log(u1));
      z(2 * p) = rad * std::cos(2.0 * std::numbers::pi * u2);
      z(2 * p + 1) = rad * std::sin(2.0 * std::numbers::pi * u2);
    }
    Vector d = z.head(n);
    const double nrm = d.norm();
    if (nrm < 1e-12) continue;
    dirs.push_back(d / nrm);
  }
  return dirs;
}

using BallMap = std::function<Vector(const Vector&)>;

/// Finds x in the closed ball B(center, radius) with g(x) = p, after
/// checking |g(x) - x| < |x - p| on a boundary sample (the hypothesis under
/// which g(ball) covers p).
inline CoveredPointResult covered_point_root(const BallMap& g, const Vector& center, double radius, const Vector& p,
                                             const CoveredPointOptions& opts = {}) {
  const Eigen::Index n = center.size();
  require_dim(p.size(), n, "covered_point_root target");
  if (!(radius > 0.0)) throw InputError("covered_point_root: radius must be positive");
  if ((p - center).norm() >= radius) throw InputError("covered_point_root: target must lie strictly inside the ball");

  CoveredPointResult out;
  if (n == 0) {
    out.x = center;
    out.residual = (g(center) - p).norm();
    out.boundary_margin = 0.0;
    return out;
  }

  const int samples = opts.boundary_samples > 0 ? opts.boundary_samples : static_cast<int>(64 * n);
  for (const Vector& d : sphere_directions(n, samples)) {
    const Vector x = center + radius * d;
    const Vector gx = g(x);
    require_dim(gx.size(), n, "covered_point_root map value");
    const double margin = (x - p).norm() - (gx - x).norm();
    out.boundary_margin = std::min(out.boundary_margin, margin);
    if (!(margin > 0.0)) throw BoundaryConditionViolation(x, margin);
  }

  auto project = [&](Vector x) {
    const Vector d = x - center;
    const double r = d.norm();
    return r > radius ? Vector(center + d * (radius / r)) : x;
  };

  Vector best_x = center;
  double best_res = kInf;
  int total_iter = 0;

  auto newton_from = [&](Vector x) -> bool {
    Vector r = g(x) - p;
    double res = r.norm();
    for (int it = 0; it < opts.max_iterations; ++it) {
      ++total_iter;
      if (res < best_res) {
        best_res = res;
        best_x = x;
      }
      if (res <= opts.tol) return true;
      Matrix jac(n, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const double h = opts.fd_step * (1.0 + std::abs(x(j)));
        Vector xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        jac.col(j) = (g(xp) - g(xm)) / (2.0 * h);
      }
      Vector step = jac.colPivHouseholderQr().solve(-r);
      if (!step.allFinite()) return false;
      double lambda = 1.0;
      bool improved = false;
      for (int ls = 0; ls < 30; ++ls) {
        const Vector trial = project(x + lambda * step);
        const Vector rt = g(trial) - p;
        if (rt.norm() < (1.0 - 1e-4 * lambda) * res) {
          x = trial;
          r = rt;
          res = rt.norm();
          improved = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!improved) break;
    }
    if (res < best_res) {
      best_res = res;
      best_x = x;
    }
    return res <= opts.tol;
  };

  bool ok = newton_from(center);
  if (!ok) {
    // Grid multistart over the ball.
    const int per = std::max(2, opts.grid_per_dim);
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (!ok) {
      Vector x(n);
      for (Eigen::Index j = 0; j < n; ++j)
        x(j) = center(j) + radius * (-1.0 + 2.0 * (idx[static_cast<std::size_t>(j)] + 0.5) / per);
      if ((x - center).norm() < radius) ok = newton_from(x);
      Eigen::Index j = 0;
      while (j < n && ++idx[static_cast<std::size_t>(j)] == per) idx[static_cast<std::size_t>(j++)] = 0;
      if (j == n) break;
    }
  }
  if (!ok) throw RootSearchExhausted(best_x, best_res);
  out.x = best_x;
  out.residual = best_res;
  out.iterations = total_iter;
  return out;
}

}  // namespace pmp
