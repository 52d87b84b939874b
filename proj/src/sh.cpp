#include "dsplat/sh.hpp"

namespace dsplat {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
                           1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {0.5900435899266435, 2.890611442640554, 0.4570457994644658,
                           0.3731763325901154, 0.4570457994644658, 1.445305721320277,
                           0.5900435899266435};

void check_basis(int basis) {
  if (basis != 1 && basis != 4 && basis != 9 && basis != 16)
    throw std::invalid_argument("sh: unsupported degree (max " + std::to_string(kMaxShDegree) + ")");
}

}  // namespace

ShCoeffs::ShCoeffs(int degree_, std::vector<double> coeffs_) : degree(degree_), coeffs(std::move(coeffs_)) {
  if (degree < 0 || degree > kMaxShDegree)
    throw std::invalid_argument("ShCoeffs: unsupported degree " + std::to_string(degree));
  if (static_cast<int>(coeffs.size()) != 3 * basis())
    throw std::invalid_argument("ShCoeffs: expected 3*(L+1)^2 coefficients");
}

ShCoeffs ShCoeffs::zeros(int degree) {
  return ShCoeffs(degree, std::vector<double>(3 * sh_basis_count(degree), 0.0));
}

void sh_basis(int basis, const Vec3& dir, double* out) {
  check_basis(basis);
  const double x = dir.x(), y = dir.y(), z = dir.z();
  out[0] = kShC0;
  if (basis == 1) return;
  out[1] = kC1 * y;
  out[2] = kC1 * z;
  out[3] = kC1 * x;
  if (basis == 4) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kC2[0] * x * y;
  out[5] = kC2[1] * y * z;
  out[6] = kC2[2] * (2.0 * zz - xx - yy);
  out[7] = kC2[3] * x * z;
  out[8] = kC2[4] * (xx - yy);
  if (basis == 9) return;
  out[9] = kC3[0] * y * (3.0 * xx - yy);
  out[10] = kC3[1] * x * y * z;
  out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
  out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  out[14] = kC3[5] * z * (xx - yy);
  out[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_grad(int basis, const Vec3& dir, double* out, Vec3* dout) {
  sh_basis(basis, dir, out);
  const double x = dir.x(), y = dir.y(), z = dir.z();
  dout[0] = Vec3::Zero();
  if (basis == 1) return;
  dout[1] = Vec3(0, kC1, 0);
  dout[2] = Vec3(0, 0, kC1);
  dout[3] = Vec3(kC1, 0, 0);
  if (basis == 4) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  dout[4] = kC2[0] * Vec3(y, x, 0);
  dout[5] = kC2[1] * Vec3(0, z, y);
  dout[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
  dout[7] = kC2[3] * Vec3(z, 0, x);
  dout[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0);
  if (basis == 9) return;
  dout[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0);
  dout[10] = kC3[1] * Vec3(y * z, x * z, x * y);
  dout[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
  dout[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
  dout[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
  dout[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
  dout[15] = kC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0);
}

Vec3 eval_sh_span_raw(int basis, const double* coeffs, const Vec3& dir) {
  double y[16];
  sh_basis(basis, dir, y);
  Vec3 rgb(0.5, 0.5, 0.5);
  for (int ch = 0; ch < 3; ++ch) {
    const double* c = coeffs + static_cast<std::size_t>(ch) * basis;
    for (int i = 0; i < basis; ++i) rgb[ch] += c[i] * y[i];
  }
  return rgb;
}

Vec3 eval_sh_span(int basis, const double* coeffs, const Vec3& dir) {
  return eval_sh_span_raw(basis, coeffs, dir).cwiseMax(0.0);
}

Vec3 eval_sh_raw(const ShCoeffs& c, const Vec3& dir) {
  if (std::abs(dir.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("eval_sh: direction must be unit length");
  return eval_sh_span_raw(c.basis(), c.coeffs.data(), dir);
}

Vec3 eval_sh(const ShCoeffs& c, const Vec3& dir) { return eval_sh_raw(c, dir).cwiseMax(0.0); }

}  // namespace dsplat
