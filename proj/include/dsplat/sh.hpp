#pragma once

#include "dsplat/common.hpp"

#include <vector>

namespace dsplat {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

inline int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real spherical-harmonic coefficients, channel-major: 3 * (degree+1)^2 values.
struct ShCoeffs {
  int degree = 0;
  std::vector<double> coeffs;

  ShCoeffs() = default;
  ShCoeffs(int degree_, std::vector<double> coeffs_);
  static ShCoeffs zeros(int degree);

  int basis() const { return sh_basis_count(degree); }
  double& at(int channel, int i) { return coeffs[static_cast<std::size_t>(channel) * basis() + i]; }
  double at(int channel, int i) const { return coeffs[static_cast<std::size_t>(channel) * basis() + i]; }
};

/// Real SH basis values Y_0..Y_{basis-1} at unit direction `dir`.
void sh_basis(int basis, const Vec3& dir, double* out);

/// Basis values plus their gradients w.r.t. the (unconstrained) direction
/// components. `dout[i]` is d Y_i / d dir.
void sh_basis_grad(int basis, const Vec3& dir, double* out, Vec3* dout);

/// Color from channel-major coefficients: sum_i c_i Y_i(dir) + 0.5, clamped to [0, inf).
Vec3 eval_sh_span(int basis, const double* coeffs, const Vec3& dir);

/// As eval_sh_span but without the final clamp.
Vec3 eval_sh_span_raw(int basis, const double* coeffs, const Vec3& dir);

Vec3 eval_sh(const ShCoeffs& c, const Vec3& dir);
Vec3 eval_sh_raw(const ShCoeffs& c, const Vec3& dir);

}  // namespace dsplat
