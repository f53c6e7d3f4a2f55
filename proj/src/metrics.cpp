#include "fpstain/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace fpstain::metrics {

void SsimParams::validate() const {
  if (window < 3 || window % 2 == 0) throw ConfigError("SSIM window must be odd and at least 3");
  if (!(sigma > 0.0)) throw ConfigError("SSIM sigma must be positive");
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw ConfigError("SSIM constants k1, k2 must be positive");
  if (!(dynamic_range > 0.0)) throw ConfigError("SSIM dynamic range must be positive");
  if (scales < 1 || static_cast<int>(scale_weights.size()) < scales)
    throw ConfigError("multiscale SSIM needs one weight per scale");
  double sum = 0.0;
  for (int i = 0; i < scales; ++i) sum += scale_weights[i];
  // The published five-scale exponents sum to 1.0001; they are renormalized
  // before use, so only gross mismatches are rejected.
  if (std::abs(sum - 1.0) > 1e-3) throw ConfigError("multiscale SSIM weights must sum to 1");
}

std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(window);
  const double center = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    taps[i] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Plane gaussian_filter_valid(const Plane& x, const std::vector<double>& taps) {
  const Eigen::Index k = static_cast<Eigen::Index>(taps.size());
  const Eigen::Index out_rows = x.rows() - k + 1;
  const Eigen::Index out_cols = x.cols() - k + 1;
  if (out_rows < 1 || out_cols < 1) throw SizeError("image is smaller than the SSIM window");
  Plane horizontal = Plane::Zero(x.rows(), out_cols);
  for (Eigen::Index i = 0; i < k; ++i) horizontal += taps[i] * x.middleCols(i, out_cols);
  Plane out = Plane::Zero(out_rows, out_cols);
  for (Eigen::Index i = 0; i < k; ++i) out += taps[i] * horizontal.middleRows(i, out_rows);
  return out;
}

Plane downsample2(const Plane& x) {
  const Eigen::Index rows = (x.rows() + 1) / 2;
  const Eigen::Index cols = (x.cols() + 1) / 2;
  Plane out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      double sum = 0.0;
      int count = 0;
      for (Eigen::Index dr = 0; dr < 2; ++dr)
        for (Eigen::Index dc = 0; dc < 2; ++dc)
          if (2 * r + dr < x.rows() && 2 * c + dc < x.cols()) {
            sum += x(2 * r + dr, 2 * c + dc);
            ++count;
          }
      out(r, c) = sum / count;
    }
  }
  return out;
}

SsimComponents ssim_components(const Plane& a, const Plane& b, const SsimParams& params) {
  params.validate();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("SSIM inputs differ in size");
  if (a.rows() < params.window || a.cols() < params.window) throw SizeError("image is smaller than the SSIM window");
  const auto taps = gaussian_taps(params.window, params.sigma);
  const Plane mu_a = gaussian_filter_valid(a, taps);
  const Plane mu_b = gaussian_filter_valid(b, taps);
  const Plane var_a = gaussian_filter_valid(a * a, taps) - mu_a * mu_a;
  const Plane var_b = gaussian_filter_valid(b * b, taps) - mu_b * mu_b;
  const Plane cov = gaussian_filter_valid(a * b, taps) - mu_a * mu_b;
  const double c1 = params.c1();
  const double c2 = params.c2();
  const Plane cs = (2.0 * cov + c2) / (var_a + var_b + c2);
  const Plane luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
  return {(luminance * cs).mean(), cs.mean()};
}

double ssim(const Plane& a, const Plane& b, const SsimParams& params) { return ssim_components(a, b, params).ssim; }

int feasible_scales(int height, int width, const SsimParams& params) {
  int count = 0;
  int h = height;
  int w = width;
  while (count < params.scales && h >= params.window && w >= params.window) {
    ++count;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return count;
}

std::vector<double> effective_weights(const SsimParams& params, int count) {
  std::vector<double> weights(params.scale_weights.begin(), params.scale_weights.begin() + count);
  double sum = 0.0;
  for (double w : weights) sum += w;
  for (double& w : weights) w /= sum;
  return weights;
}

double ms_ssim(const Plane& a, const Plane& b, const SsimParams& params) {
  params.validate();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("MS-SSIM inputs differ in size");
  const int levels = feasible_scales(static_cast<int>(a.rows()), static_cast<int>(a.cols()), params);
  if (levels == 0) throw SizeError("image is smaller than the SSIM window");
  const auto weights = effective_weights(params, levels);
  Plane x = a;
  Plane y = b;
  double result = 1.0;
  for (int level = 0; level < levels; ++level) {
    const SsimComponents comp = ssim_components(x, y, params);
    if (level + 1 < levels) {
      result *= std::pow(std::max(comp.cs, 0.0), weights[level]);
      x = downsample2(x);
      y = downsample2(y);
    } else {
      result *= std::pow(std::max(comp.ssim, 0.0), weights[level]);
    }
  }
  return result;
}

double ms_ssim_green(const Image& a, const Image& b, const SsimParams& params) {
  return ms_ssim(green_plane(a), green_plane(b), params);
}

double ssim_green(const Image& a, const Image& b, const SsimParams& params) {
  return ssim(green_plane(a), green_plane(b), params);
}

Plane phase_to_unit(const Plane& phase) {
  if ((phase.abs() > std::numbers::pi).any()) throw RangeError("phase values must lie in [-pi, pi]");
  return (phase + std::numbers::pi) / (2.0 * std::numbers::pi);
}

std::string SsimReport::to_csv() const {
  std::ostringstream out;
  out << "sample_type,n_tiles,mean_ssim,std_ssim\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.4f,%.4f", row.n_tiles, row.mean, row.std);
    out << row.sample_type << ',' << buf << '\n';
  }
  return out.str();
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInputError("cannot aggregate an empty set");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

SsimReport tile_report(const std::vector<TilePairs>& groups, const SsimParams& params) {
  SsimReport report;
  for (const auto& group : groups) {
    if (group.predictions.empty()) throw EmptyInputError("sample type '" + group.sample_type + "' has no tiles");
    if (group.predictions.size() != group.truths.size())
      throw ShapeError("sample type '" + group.sample_type + "' has unequal prediction and truth counts");
    std::vector<double> values;
    values.reserve(group.predictions.size());
    for (std::size_t i = 0; i < group.predictions.size(); ++i)
      values.push_back(ssim_green(group.predictions[i], group.truths[i], params));
    const auto [mean, sd] = mean_std(values);
    report.rows.push_back({group.sample_type, static_cast<int>(values.size()), mean, sd});
  }
  return report;
}

}  // namespace fpstain::metrics
