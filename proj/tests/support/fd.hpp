#pragma once

// Central finite-difference gradient oracle for tests. Kept independent of
// the graph engine's analytic path: it only needs a scalar-valued callable.

#include <cmath>
#include <functional>

#include "laspa/graph.hpp"

namespace laspa::testsupport {

// d f / d x at the current x, by central differences. f() must read x.
template <typename F>
Mat<double> fd_grad(Mat<double>& x, F f, double h = 1e-6) {
  Mat<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double fp = f();
      x(i, j) = saved - h;
      const double fm = f();
      x(i, j) = saved;
      g(i, j) = (fp - fm) / (2 * h);
    }
  return g;
}

// Max-norm relative error between two gradients.
inline double rel_err(const Mat<double>& a, const Mat<double>& b) {
  if (a.size() == 0 && b.size() == 0) return 0.0;
  double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(),
                           1e-10});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace laspa::testsupport
