#pragma once

// Brute-force separation oracle for cones in R^2 and R^3: a nonzero alpha with
// alpha . g <= 0 for every generator of C1 and alpha . g >= 0 for every
// generator of C2 exists iff one of finitely many candidate directions works.
// In R^2 the candidates are the generator normals and an angular sweep; in R^3
// the pairwise cross products, normals of single generators, and a sweep over
// the sphere.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = Eigen::VectorXd;

inline bool works(const Vec& alpha, const std::vector<Vec>& gens, double tol) {
  if (alpha.norm() < 1e-12) return false;
  const Vec a = alpha.normalized();
  for (const auto& g : gens)
    if (a.dot(g.normalized()) > tol) return false;
  return true;
}

inline bool separated(const std::vector<Vec>& c1, const std::vector<Vec>& c2, double tol = 1e-9) {
  std::vector<Vec> gens = c1;
  for (const auto& g : c2) gens.push_back(-g);
  if (gens.empty()) return true;
  const auto n = gens.front().size();
  std::vector<Vec> cand;
  if (n == 2) {
    for (const auto& g : gens) {
      cand.push_back((Vec(2) << -g(1), g(0)).finished());
      cand.push_back((Vec(2) << g(1), -g(0)).finished());
    }
    for (int k = 0; k < 3600; ++k) {
      const double th = 2.0 * M_PI * k / 3600.0;
      cand.push_back((Vec(2) << std::cos(th), std::sin(th)).finished());
    }
  } else {
    auto cross = [](const Vec& a, const Vec& b) {
      return (Vec(3) << a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0)).finished();
    };
    for (std::size_t i = 0; i < gens.size(); ++i) {
      for (std::size_t j = i + 1; j < gens.size(); ++j) {
        const Vec c = cross(gens[i], gens[j]);
        cand.push_back(c);
        cand.push_back(-c);
      }
      for (int e = 0; e < 3; ++e) {
        const Vec c = cross(gens[i], Vec::Unit(3, e));
        cand.push_back(c);
        cand.push_back(-c);
      }
      cand.push_back(-gens[i]);
    }
    for (int a = 0; a < 120; ++a) {
      for (int b = 0; b <= 60; ++b) {
        const double th = 2.0 * M_PI * a / 120.0, ph = M_PI * b / 60.0;
        cand.push_back((Vec(3) << std::sin(ph) * std::cos(th), std::sin(ph) * std::sin(th), std::cos(ph)).finished());
      }
    }
  }
  for (const auto& c : cand)
    if (works(c, gens, tol)) return true;
  return false;
}

}  // namespace oracle
