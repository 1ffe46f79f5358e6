#pragma once

// Bus admittance built as A^T Y_prim A: every branch is an ideal transformer
// (ratio tap:1) feeding a symmetric pi section, written as a 2x2 primitive.

#include <complex>

#include "tscopf/grid.hpp"

namespace oracle {

inline tscopf::ComplexMatrix ybus(const tscopf::GridCase& c) {
  using C = std::complex<double>;
  const auto n = static_cast<Eigen::Index>(c.n_buses());
  tscopf::ComplexMatrix y = tscopf::ComplexMatrix::Zero(n, n);
  for (const auto& br : c.branches) {
    const C ys = C(1.0, 0.0) / C(br.r, br.x);
    Eigen::Matrix2cd pi;
    pi << ys + C(0, br.b_sh / 2), -ys, -ys, ys + C(0, br.b_sh / 2);
    // Voltages seen by the pi section: (V_f / tap, V_t).
    Eigen::Matrix2cd t = Eigen::Matrix2cd::Zero();
    t(0, 0) = 1.0 / br.tap;
    t(1, 1) = 1.0;
    const Eigen::Matrix2cd prim = t.adjoint() * pi * t;
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(2, n);
    a(0, static_cast<Eigen::Index>(c.bus_index(br.from_bus))) = 1.0;
    a(1, static_cast<Eigen::Index>(c.bus_index(br.to_bus))) = 1.0;
    y += a.transpose() * prim * a;
  }
  for (std::size_t i = 0; i < c.n_buses(); ++i)
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += C(c.buses[i].g_sh, c.buses[i].b_sh);
  return y;
}

}  // namespace oracle
