#pragma once

#include "dsplat/common.hpp"

#include <string>
#include <vector>

namespace dsplat {

/// Row-major, channel-interleaved image of doubles.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  double& at(int y, int x, int ch = 0) { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch = 0) const { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

  Vec3 rgb(int y, int x) const { return Vec3(at(y, x, 0), at(y, x, 1), at(y, x, 2)); }
  void set_rgb(int y, int x, const Vec3& v) {
    at(y, x, 0) = v[0];
    at(y, x, 1) = v[1];
    at(y, x, 2) = v[2];
  }
  void add_rgb(int y, int x, const Vec3& v) {
    at(y, x, 0) += v[0];
    at(y, x, 1) += v[1];
    at(y, x, 2) += v[2];
  }

  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
  std::size_t size() const { return data.size(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

double max_abs_diff(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
double mean_abs(const Image& a);

/// 8-bit PNG, values clamped to [0,1]. 1 or 3 channels.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

/// Flat float32 map with 16-byte header {"FMAP", u32 h, u32 w, u32 c}.
void write_fmap(const std::string& path, const Image& img);
Image read_fmap(const std::string& path);

}  // namespace dsplat
