#pragma once

// Reference computations that share no code with the library.

#include "convexvolt/grid.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>

namespace oracle {

/// Exact 2-bus DistFlow: l solves (r^2 + x^2) l^2 + (2pr + 2qx - v0) l + p^2 + q^2 = 0 (smaller root).
struct TwoBus {
  double v1, P, Q, l;
};

inline TwoBus two_bus(double v0, double r, double x, double p, double q)
{
  const double a = r * r + x * x;
  const double b = 2.0 * (p * r + q * x) - v0;
  const double c = p * p + q * q;
  // Numerically stable smaller root of a l^2 + b l + c with b < 0.
  const double l = 2.0 * c / (-b + std::sqrt(b * b - 4.0 * a * c));
  const double P = p + r * l;
  const double Q = q + x * l;
  return {v0 - 2.0 * (r * P + x * Q) + a * l, P, Q, l};
}

/**
 * Newton-Raphson on the full DistFlow system of a radial network, with a
 * finite-difference Jacobian. Unknowns per line k (feeding bus k+1):
 * P_k, Q_k, l_k, v_{k+1}. Returns squared voltages of all buses.
 */
inline Eigen::VectorXd newton_distflow(const convexvolt::RadialNetwork& net, const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& q)
{
  const auto n = static_cast<Eigen::Index>(net.bus_count()) - 1;
  const double v0 = net.slack_voltage_sq();
  auto residual = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd f(4 * n);
    auto v = [&](int bus) { return bus == 0 ? v0 : z[4 * (bus - 1) + 3]; };
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& line = net.lines()[static_cast<std::size_t>(k)];
      const int i = line.from_bus, j = line.to_bus;
      const double P = z[4 * (j - 1)], Q = z[4 * (j - 1) + 1], l = z[4 * (j - 1) + 2];
      double child_p = 0.0, child_q = 0.0;
      for (const auto& other : net.lines()) {
        if (other.from_bus == j) {
          child_p += z[4 * (other.to_bus - 1)];
          child_q += z[4 * (other.to_bus - 1) + 1];
        }
      }
      f[4 * k] = P - child_p - line.r * l - p[j - 1];
      f[4 * k + 1] = Q - child_q - line.x * l - q[j - 1];
      f[4 * k + 2] = v(j) - v(i) + 2.0 * (line.r * P + line.x * Q) - (line.r * line.r + line.x * line.x) * l;
      f[4 * k + 3] = l * v(i) - P * P - Q * Q;
    }
    return f;
  };

  Eigen::VectorXd z = Eigen::VectorXd::Zero(4 * n);
  for (Eigen::Index k = 0; k < n; ++k) z[4 * k + 3] = v0;
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd f = residual(z);
    if (f.cwiseAbs().maxCoeff() < 1e-15) break;
    Eigen::MatrixXd J(4 * n, 4 * n);
    for (Eigen::Index c = 0; c < 4 * n; ++c) {
      const double h = 1e-7 * std::max(1.0, std::abs(z[c]));
      Eigen::VectorXd zp = z, zm = z;
      zp[c] += h;
      zm[c] -= h;
      J.col(c) = (residual(zp) - residual(zm)) / (2.0 * h);
    }
    z -= J.fullPivLu().solve(f);
  }
  Eigen::VectorXd v(n + 1);
  v[0] = v0;
  for (Eigen::Index k = 0; k < n; ++k) v[k + 1] = z[4 * k + 3];
  return v;
}

/// Central finite difference of a scalar function along one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h)
{
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-10)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
