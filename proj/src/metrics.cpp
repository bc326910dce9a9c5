#include "waveden/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace waveden {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_kernel_1d() {
  std::vector<double> k(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = double(i - kWin / 2);
    k[size_t(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[size_t(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> luminance(const Image& img) {
  auto y = std::vector<double>(size_t(img.height * img.width));
  const int64_t plane = img.height * img.width;
  for (int64_t i = 0; i < plane; ++i)
    y[size_t(i)] = (double(img.chw[size_t(i)]) + double(img.chw[size_t(plane + i)]) +
                    double(img.chw[size_t(2 * plane + i)])) /
                   3.0;
  return y;
}

// Separable valid-mode Gaussian filter: (H, W) -> (H-10, W-10).
std::vector<double> filter_valid(const std::vector<double>& src, int64_t h, int64_t w,
                                 const std::vector<double>& k) {
  const int64_t ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(size_t(h * ow), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * src[size_t(y * w + x + i)];
      tmp[size_t(y * ow + x)] = acc;
    }
  std::vector<double> out(size_t(oh * ow), 0.0);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * tmp[size_t((y + i) * ow + x)];
      out[size_t(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
  detail::check(a.height == b.height && a.width == b.width,
                "psnr: image sizes differ (" + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                    std::to_string(b.width) + ")");
  double sq = 0.0;
  for (size_t i = 0; i < a.chw.size(); ++i) {
    const double d = double(a.chw[i]) - double(b.chw[i]);
    sq += d * d;
  }
  const double mse = sq / double(a.chw.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& a, const Image& b) {
  detail::check(a.height == b.height && a.width == b.width, "ssim: image sizes differ");
  detail::check(a.height >= kWin && a.width >= kWin,
                "ssim: image smaller than the " + std::to_string(kWin) + "x" +
                    std::to_string(kWin) + " window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // (k*L)^2 with L = 1
  const auto k = gaussian_kernel_1d();
  const auto ya = luminance(a);
  const auto yb = luminance(b);
  const int64_t h = a.height, w = a.width;

  std::vector<double> aa(ya.size()), bb(ya.size()), ab(ya.size());
  for (size_t i = 0; i < ya.size(); ++i) {
    aa[i] = ya[i] * ya[i];
    bb[i] = yb[i] * yb[i];
    ab[i] = ya[i] * yb[i];
  }
  const auto mu_a = filter_valid(ya, h, w, k);
  const auto mu_b = filter_valid(yb, h, w, k);
  const auto m_aa = filter_valid(aa, h, w, k);
  const auto m_bb = filter_valid(bb, h, w, k);
  const auto m_ab = filter_valid(ab, h, w, k);

  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / double(mu_a.size());
}

}  // namespace waveden
