#pragma once

// Small independent helpers shared by the test binaries. Nothing here calls
// into the library's FFT so it can serve as an oracle.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "fpstain/image.hpp"

namespace testsupport {

using fpstain::ComplexPlane;
using fpstain::Plane;

constexpr double kPi = std::numbers::pi;

/// Direct O(N^4) DFT with zero frequency moved to (rows/2, cols/2).
inline ComplexPlane naive_centered_dft(const ComplexPlane& x) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  ComplexPlane out(h, w);
  for (int u = 0; u < h; ++u) {
    const int fu = u - h / 2;
    for (int v = 0; v < w; ++v) {
      const int fv = v - w / 2;
      std::complex<double> acc = 0.0;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          acc += x(r, c) * std::polar(1.0, -2.0 * kPi * (static_cast<double>(fu) * r / h + static_cast<double>(fv) * c / w));
      out(u, v) = acc;
    }
  }
  return out;
}

/// Same transform applied one axis at a time, O(N^3); `inverse` undoes it.
inline ComplexPlane separable_centered_dft(const ComplexPlane& x, bool inverse = false) {
  auto axis = [inverse](const ComplexPlane& in) {
    // Transforms along columns (each column is one 1-D signal).
    const int n = static_cast<int>(in.rows());
    ComplexPlane out(in.rows(), in.cols());
    for (int u = 0; u < n; ++u)
      for (int c = 0; c < in.cols(); ++c) {
        std::complex<double> acc = 0.0;
        for (int k = 0; k < n; ++k) {
          const double phase = inverse ? 2.0 * kPi * (k - n / 2) * static_cast<double>(u) / n
                                       : -2.0 * kPi * (u - n / 2) * static_cast<double>(k) / n;
          acc += in(k, c) * std::polar(1.0, phase);
        }
        out(u, c) = inverse ? acc / static_cast<double>(n) : acc;
      }
    return out;
  };
  const ComplexPlane once = axis(x);
  return axis(once.transpose().eval()).transpose();
}

inline double wrap(double phase) { return std::remainder(phase, 2.0 * kPi); }

inline double pearson(const Plane& a, const Plane& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  const double cov = ((a - ma) * (b - mb)).sum();
  return cov / std::sqrt((a - ma).square().sum() * (b - mb).square().sum());
}

inline Plane random_plane(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 255.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Plane p(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) p(r, c) = u(rng);
  return p;
}

inline ComplexPlane random_field(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexPlane p(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) p(r, c) = {n(rng), n(rng)};
  return p;
}

/// Reference SSIM statistics computed with an explicit 2-D Gaussian window,
/// one output pixel at a time.
struct RefSsim {
  double ssim;
  double cs;
};

inline RefSsim reference_ssim(const Plane& a, const Plane& b, int window, double sigma, double c1, double c2) {
  std::vector<double> w2(window * window);
  double total = 0.0;
  const double mid = (window - 1) / 2.0;
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < window; ++j) {
      w2[i * window + j] = std::exp(-((i - mid) * (i - mid) + (j - mid) * (j - mid)) / (2 * sigma * sigma));
      total += w2[i * window + j];
    }
  for (double& v : w2) v /= total;
  const int rows = static_cast<int>(a.rows()) - window + 1;
  const int cols = static_cast<int>(a.cols()) - window + 1;
  double s_sum = 0.0;
  double cs_sum = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double ma = 0, mb = 0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          ma += w2[i * window + j] * a(r + i, c + j);
          mb += w2[i * window + j] * b(r + i, c + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const double da = a(r + i, c + j) - ma;
          const double db = b(r + i, c + j) - mb;
          va += w2[i * window + j] * da * da;
          vb += w2[i * window + j] * db * db;
          cov += w2[i * window + j] * da * db;
        }
      const double cs = (2 * cov + c2) / (va + vb + c2);
      cs_sum += cs;
      s_sum += cs * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
  return {s_sum / (rows * cols), cs_sum / (rows * cols)};
}

/// Halves each axis (rounding up); edge blocks average what they contain.
inline Plane reference_halve(const Plane& x) {
  const int rows = (static_cast<int>(x.rows()) + 1) / 2;
  const int cols = (static_cast<int>(x.cols()) + 1) / 2;
  Plane out = Plane::Zero(rows, cols);
  Plane count = Plane::Zero(rows, cols);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) {
      out(r / 2, c / 2) += x(r, c);
      count(r / 2, c / 2) += 1.0;
    }
  return out / count;
}

/// Multiscale SSIM with the standard five exponents, truncated to the
/// feasible scale count and renormalized.
inline double reference_ms_ssim(Plane a, Plane b, double dynamic_range = 255.0) {
  const double weights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const double c1 = std::pow(0.01 * dynamic_range, 2);
  const double c2 = std::pow(0.03 * dynamic_range, 2);
  std::vector<Plane> xs{a};
  std::vector<Plane> ys{b};
  while (xs.size() < 5) {
    Plane nx = reference_halve(xs.back());
    if (nx.rows() < 11 || nx.cols() < 11) break;
    xs.push_back(nx);
    ys.push_back(reference_halve(ys.back()));
  }
  const std::size_t m = xs.size();
  double wsum = 0.0;
  for (std::size_t i = 0; i < m; ++i) wsum += weights[i];
  double acc = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const RefSsim s = reference_ssim(xs[i], ys[i], 11, 1.5, c1, c2);
    const double term = (i + 1 == m) ? s.ssim : s.cs;
    acc *= std::pow(std::max(term, 0.0), weights[i] / wsum);
  }
  return acc;
}

/// Band-limited random texture in [0, 255] built from a few cosines.
inline Plane smooth_texture(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Plane p = Plane::Zero(h, w);
  for (int k = 0; k < 12; ++k) {
    const double fx = u(rng) * 0.15;
    const double fy = u(rng) * 0.15;
    const double ph = u(rng) * 2 * kPi;
    const double amp = u(rng);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) p(r, c) += amp * std::cos(2 * kPi * (fx * c + fy * r) + ph);
  }
  p -= p.minCoeff();
  return p / p.maxCoeff() * 255.0;
}

inline Plane add_noise(const Plane& x, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Plane out = x;
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) out(r, c) += sigma * n(rng);
  return out;
}

/// Direct Gaussian blur with clamped borders.
inline Plane blur(const Plane& x, double sigma) {
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * rad + 1);
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) sum += k[i + rad] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  Plane tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * x(r, std::clamp(c + i, 0, w - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * tmp(std::clamp(r + i, 0, h - 1), c);
      out(r, c) = acc;
    }
  return out;
}

}  // namespace testsupport
