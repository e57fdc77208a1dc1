#pragma once

// Finite-difference and quadrature oracles shared by the test suites. These
// stay independent of the implementation paths they check: they only call
// the forward (value) routines.

#include <cmath>
#include <functional>

#include "nhmc/core.hpp"

namespace nhmc::test {

inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

inline double vec_rel_err(const Vector& got, const Vector& want,
                          double floor = 1e-12) {
  return (got - want).norm() / std::max(want.norm(), floor);
}

// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector xp = x;
  for (int j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    xp[j] = orig + h;
    const double up = f(xp);
    xp[j] = orig - h;
    const double dn = f(xp);
    xp[j] = orig;
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

// Central-difference Jacobian of a vector function, J(i, j) = df_i/dx_j.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f,
                          const Vector& x, double h = 1e-5) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  for (int j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    xp[j] = orig + h;
    const Vector up = f(xp);
    xp[j] = orig - h;
    const Vector dn = f(xp);
    xp[j] = orig;
    J.col(j) = (up - dn) / (2.0 * h);
  }
  return J;
}

// w^T J by finite differences; the oracle for VJP checks.
inline Vector fd_vjp(const std::function<Vector(const Vector&)>& f,
                     const Vector& x, const Vector& cotangent,
                     double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (int j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    xp[j] = orig + h;
    const double up = cotangent.dot(f(xp));
    xp[j] = orig - h;
    const double dn = cotangent.dot(f(xp));
    xp[j] = orig;
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace nhmc::test
