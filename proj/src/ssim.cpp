#include "dsplat/losses.hpp"

#include <array>
#include <cmath>

namespace dsplat {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> window() {
  std::array<double, kWin> k{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    k[i] = std::exp(-0.5 * sqr((i - kHalf) / 1.5));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// Symmetric (edge-inclusive) reflection.
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

Image filter_rows(const Image& in, const std::array<double, kWin>& k) {
  Image out(in.h, in.w, in.c);
#pragma omp parallel for schedule(static)
  for (long long y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int c = 0; c < in.c; ++c) {
        double s = 0.0;
        for (int o = 0; o < kWin; ++o) s += k[o] * in.at((int)y, reflect(x + o - kHalf, in.w), c);
        out.at((int)y, x, c) = s;
      }
  return out;
}

Image filter_cols(const Image& in, const std::array<double, kWin>& k) {
  Image out(in.h, in.w, in.c);
#pragma omp parallel for schedule(static)
  for (long long y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int c = 0; c < in.c; ++c) {
        double s = 0.0;
        for (int o = 0; o < kWin; ++o) s += k[o] * in.at(reflect((int)y + o - kHalf, in.h), x, c);
        out.at((int)y, x, c) = s;
      }
  return out;
}

Image gauss_filter(const Image& in, const std::array<double, kWin>& k) {
  return filter_cols(filter_rows(in, k), k);
}

// Adjoint scatter per axis; parallel over the independent axis only, so the
// result does not depend on the thread count.
Image adj_filter_rows(const Image& g, const std::array<double, kWin>& k) {
  Image out(g.h, g.w, g.c);
#pragma omp parallel for schedule(static)
  for (long long y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x)
      for (int c = 0; c < g.c; ++c) {
        const double v = g.at((int)y, x, c);
        for (int o = 0; o < kWin; ++o) out.at((int)y, reflect(x + o - kHalf, g.w), c) += k[o] * v;
      }
  return out;
}

Image adj_filter_cols(const Image& g, const std::array<double, kWin>& k) {
  Image out(g.h, g.w, g.c);
#pragma omp parallel for schedule(static)
  for (long long x = 0; x < g.w; ++x)
    for (int y = 0; y < g.h; ++y)
      for (int c = 0; c < g.c; ++c) {
        const double v = g.at(y, (int)x, c);
        for (int o = 0; o < kWin; ++o) out.at(reflect(y + o - kHalf, g.h), (int)x, c) += k[o] * v;
      }
  return out;
}

Image gauss_filter_adjoint(const Image& g, const std::array<double, kWin>& k) {
  return adj_filter_rows(adj_filter_cols(g, k), k);
}

Image hadamard(const Image& a, const Image& b) {
  Image out(a.h, a.w, a.c);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

}  // namespace

double ssim_with_grad(const Image& img, const Image& ref, double up, Image* d_img, Image* d_ref) {
  if (!img.same_shape(ref)) throw std::invalid_argument("ssim: shape mismatch");
  if (img.h < kWin || img.w < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const auto k = window();

  const Image mu_x = gauss_filter(img, k);
  const Image mu_y = gauss_filter(ref, k);
  const Image fxx = gauss_filter(hadamard(img, img), k);
  const Image fyy = gauss_filter(hadamard(ref, ref), k);
  const Image fxy = gauss_filter(hadamard(img, ref), k);

  const std::size_t n = img.data.size();
  double total = 0.0;
  Image wm, wp, wr, wn, wq, ws;
  const bool want_x = d_img != nullptr && up != 0.0;
  const bool want_y = d_ref != nullptr && up != 0.0;
  if (want_x) {
    wm = Image(img.h, img.w, img.c);
    wp = Image(img.h, img.w, img.c);
    wr = Image(img.h, img.w, img.c);
  }
  if (want_y) {
    wn = Image(img.h, img.w, img.c);
    wq = Image(img.h, img.w, img.c);
    ws = Image(img.h, img.w, img.c);
  }

  // Deterministic reduction: per-row partial sums added in row order.
  std::vector<double> row_sum(img.h, 0.0);
#pragma omp parallel for schedule(static)
  for (long long y = 0; y < img.h; ++y) {
    double rs = 0.0;
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        const double m = mu_x.at((int)y, x, c), mn = mu_y.at((int)y, x, c);
        const double p = fxx.at((int)y, x, c), q = fyy.at((int)y, x, c), r = fxy.at((int)y, x, c);
        const double a1 = 2.0 * m * mn + kC1;
        const double a2 = 2.0 * (r - m * mn) + kC2;
        const double b1 = m * m + mn * mn + kC1;
        const double b2 = (p - m * m) + (q - mn * mn) + kC2;
        const double s = (a1 * a2) / (b1 * b2);
        rs += s;
        if (want_x) {
          const double ds_dm =
              (2.0 * mn * a2 - 2.0 * mn * a1) / (b1 * b2) - s * (2.0 * m / b1 - 2.0 * m / b2);
          wm.at((int)y, x, c) = ds_dm;
          wp.at((int)y, x, c) = -s / b2;
          wr.at((int)y, x, c) = 2.0 * a1 / (b1 * b2);
        }
        if (want_y) {
          const double ds_dn =
              (2.0 * m * a2 - 2.0 * m * a1) / (b1 * b2) - s * (2.0 * mn / b1 - 2.0 * mn / b2);
          wn.at((int)y, x, c) = ds_dn;
          wq.at((int)y, x, c) = -s / b2;
          ws.at((int)y, x, c) = 2.0 * a1 / (b1 * b2);
        }
      }
    row_sum[y] = rs;
  }
  for (double rs : row_sum) total += rs;
  const double mean_ssim = total / static_cast<double>(n);

  const double scale = up / static_cast<double>(n);
  if (want_x) {
    const Image am = gauss_filter_adjoint(wm, k);
    const Image ap = gauss_filter_adjoint(wp, k);
    const Image ar = gauss_filter_adjoint(wr, k);
    for (std::size_t i = 0; i < n; ++i)
      d_img->data[i] += scale * (am.data[i] + 2.0 * img.data[i] * ap.data[i] + ref.data[i] * ar.data[i]);
  }
  if (want_y) {
    const Image an = gauss_filter_adjoint(wn, k);
    const Image aq = gauss_filter_adjoint(wq, k);
    const Image as = gauss_filter_adjoint(ws, k);
    for (std::size_t i = 0; i < n; ++i)
      d_ref->data[i] += scale * (an.data[i] + 2.0 * ref.data[i] * aq.data[i] + img.data[i] * as.data[i]);
  }
  return mean_ssim;
}

double ssim(const Image& img, const Image& ref) { return ssim_with_grad(img, ref, 0.0, nullptr); }

}  // namespace dsplat
