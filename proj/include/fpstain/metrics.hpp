#pragma once

#include <string>
#include <vector>

#include "fpstain/image.hpp"

namespace fpstain::metrics {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
  int scales = 5;
  std::vector<double> scale_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

  /// Same defaults with dynamic range 1 for unit-normalized images.
  static SsimParams unit() {
    SsimParams p;
    p.dynamic_range = 1.0;
    return p;
  }

  void validate() const;
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(int window, double sigma);

/// 'Valid' separable Gaussian filtering: output is (rows-window+1) x (cols-window+1).
Plane gaussian_filter_valid(const Plane& x, const std::vector<double>& taps);

/// 2x decimation by box averaging, ceil(n/2) per axis (partial blocks average
/// the pixels they contain).
Plane downsample2(const Plane& x);

struct SsimComponents {
  double ssim = 0.0;  ///< mean of the full SSIM map
  double cs = 0.0;    ///< mean of the contrast-structure map
};

SsimComponents ssim_components(const Plane& a, const Plane& b, const SsimParams& params);

/// Mean Gaussian-windowed SSIM.
double ssim(const Plane& a, const Plane& b, const SsimParams& params);

/// Number of dyadic scales whose smallest level still covers the window.
int feasible_scales(int height, int width, const SsimParams& params);

/// Leading `count` weights renormalized to sum to one.
std::vector<double> effective_weights(const SsimParams& params, int count);

/// Multiscale SSIM: prod_{j<M} cs_j^w_j * ssim_M^w_M, with each factor clamped
/// at zero.
double ms_ssim(const Plane& a, const Plane& b, const SsimParams& params);

/// ms_ssim on the green plane of RGB inputs (grayscale inputs pass through).
double ms_ssim_green(const Image& a, const Image& b, const SsimParams& params);

/// SSIM on the green plane, matching ms_ssim_green's channel convention.
double ssim_green(const Image& a, const Image& b, const SsimParams& params);

/// Maps phase in [-pi, pi] to [0, 1].
Plane phase_to_unit(const Plane& phase);

struct SsimRow {
  std::string sample_type;
  int n_tiles = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct SsimReport {
  std::vector<SsimRow> rows;

  /// `sample_type,n_tiles,mean_ssim,std_ssim` with four decimals.
  std::string to_csv() const;
};

struct TilePairs {
  std::string sample_type;
  std::vector<Image> predictions;
  std::vector<Image> truths;
};

/// Per-tile ssim_green, aggregated as mean and population std per sample type.
SsimReport tile_report(const std::vector<TilePairs>& groups, const SsimParams& params);

/// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace fpstain::metrics
