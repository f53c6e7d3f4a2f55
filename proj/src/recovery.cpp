#include "fpstain/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fpstain/fft.hpp"
#include "fpstain/parallel.hpp"

namespace fpstain::recovery {
namespace {

using optics::AcquisitionStack;
using optics::Channel;
using optics::ComplexField;
using optics::PupilFunction;

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

struct Grids {
  int m_rows = 0;
  int m_cols = 0;
  int n_rows = 0;
  int n_cols = 0;
  double scale = 1.0;  // field = IFFT(sub-spectrum) * scale
};

Grids grids_for(const AcquisitionStack& stack, int upsampling) {
  if (stack.captures.empty()) throw EmptyInputError("acquisition stack has no captures");
  Grids g;
  g.m_rows = static_cast<int>(stack.captures.front().intensity.rows());
  g.m_cols = static_cast<int>(stack.captures.front().intensity.cols());
  for (const auto& capture : stack.captures)
    if (capture.intensity.rows() != g.m_rows || capture.intensity.cols() != g.m_cols)
      throw ShapeError("captures in a stack must share one size");
  g.n_rows = g.m_rows * upsampling;
  g.n_cols = g.m_cols * upsampling;
  g.scale = static_cast<double>(g.m_rows) * g.m_cols / (static_cast<double>(g.n_rows) * g.n_cols);
  return g;
}

double illumination_na(const optics::Capture& capture, double wavelength_um) {
  return capture.k_illum.norm() * wavelength_um / kTwoPi;
}

Channel single_channel(const AcquisitionStack& stack) {
  const Channel channel = stack.captures.front().channel;
  for (const auto& capture : stack.captures)
    if (capture.channel != channel) throw ConfigError("reconstruction expects a single-channel stack");
  return channel;
}

// Top-left corner of the sub-spectrum addressed by one capture.
std::pair<int, int> block_origin(const optics::Capture& capture, const Grids& g, double object_pitch_um) {
  const double df_x = 1.0 / (g.n_cols * object_pitch_um);
  const double df_y = 1.0 / (g.n_rows * object_pitch_um);
  const auto [dr, dc] = optics::illumination_bin(capture.k_illum, df_x, df_y);
  const int r0 = g.n_rows / 2 + dr - g.m_rows / 2;
  const int c0 = g.n_cols / 2 + dc - g.m_cols / 2;
  if (r0 < 0 || c0 < 0 || r0 + g.m_rows > g.n_rows || c0 + g.m_cols > g.n_cols)
    throw OutOfBandError("capture from LED " + std::to_string(capture.led_index) +
                         " addresses frequencies outside the reconstruction grid");
  return {r0, c0};
}

}  // namespace

void ReconstructionConfig::validate() const {
  if (iterations < 1) throw ConfigError("reconstruction needs at least one iteration");
  if (!(object_step > 0.0 && object_step <= 2.0)) throw ConfigError("object step must lie in (0, 2]");
  if (!(pupil_step > 0.0 && pupil_step <= 2.0)) throw ConfigError("pupil step must lie in (0, 2]");
  if (upsampling < 1) throw ConfigError("upsampling factor must be at least 1");
}

std::vector<std::size_t> update_order(const AcquisitionStack& stack) {
  std::vector<std::size_t> order(stack.captures.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ka = stack.captures[a].k_illum.norm();
    const double kb = stack.captures[b].k_illum.norm();
    if (ka != kb) return ka < kb;
    return stack.captures[a].led_index < stack.captures[b].led_index;
  });
  return order;
}

ComplexPlane initial_spectrum(const AcquisitionStack& stack, double wavelength_um, const ReconstructionConfig& config) {
  const Grids g = grids_for(stack, config.upsampling);

  Plane mean = Plane::Zero(g.m_rows, g.m_cols);
  int brightfield = 0;
  if (config.init_mode == InitMode::MeanBrightfield) {
    for (const auto& capture : stack.captures) {
      if (illumination_na(capture, wavelength_um) < stack.objective_na) {
        mean += capture.intensity;
        ++brightfield;
      }
    }
  }
  ComplexPlane spectrum = ComplexPlane::Zero(g.n_rows, g.n_cols);
  if (brightfield == 0) {
    // Flat unit amplitude.
    spectrum(g.n_rows / 2, g.n_cols / 2) = static_cast<double>(g.n_rows) * g.n_cols;
    return spectrum;
  }
  mean /= brightfield;
  ComplexPlane amplitude = mean.sqrt().cast<std::complex<double>>();
  ComplexPlane low = fft::centered_forward(amplitude) / g.scale;
  spectrum.block(g.n_rows / 2 - g.m_rows / 2, g.n_cols / 2 - g.m_cols / 2, g.m_rows, g.m_cols) = low;
  return spectrum;
}

ReconstructionResult reconstruct(const AcquisitionStack& stack, const optics::IlluminationGeometry& geometry,
                                 const PupilFunction& pupil_init, const ReconstructionConfig& config) {
  config.validate();
  const Grids g = grids_for(stack, config.upsampling);
  stack.validate();
  geometry.validate();
  const Channel channel = single_channel(stack);
  for (const auto& capture : stack.captures)
    if (capture.led_index < 0 || capture.led_index >= geometry.size())
      throw IndexError("capture references LED " + std::to_string(capture.led_index) +
                       " which is not in the illumination geometry");
  if (pupil_init.height() != g.m_rows || pupil_init.width() != g.m_cols)
    throw ShapeError("pupil grid does not match the capture size");
  const double wavelength = geometry.wavelength(channel);
  if (std::abs(pupil_init.wavelength_um - wavelength) > 1e-12)
    throw ConfigError("pupil wavelength does not match the stack channel");

  const double object_pitch = stack.capture_pitch_um / config.upsampling;
  const auto order = update_order(stack);
  std::vector<std::pair<int, int>> origins(stack.captures.size());
  std::vector<Plane> measured_amplitude(stack.captures.size());
  double total_intensity = 0.0;
  for (std::size_t i = 0; i < stack.captures.size(); ++i) {
    origins[i] = block_origin(stack.captures[i], g, object_pitch);
    measured_amplitude[i] = stack.captures[i].intensity.sqrt();
    total_intensity += stack.captures[i].intensity.sum();
  }

  Plane support(g.m_rows, g.m_cols);
  for (int r = 0; r < g.m_rows; ++r)
    for (int c = 0; c < g.m_cols; ++c) support(r, c) = pupil_init.in_support(r, c) ? 1.0 : 0.0;

  ComplexPlane spectrum = initial_spectrum(stack, wavelength, config);
  ComplexPlane pupil = pupil_init.grid;

  ReconstructionResult result;
  result.residual_history.reserve(config.iterations);
  for (int it = 0; it < config.iterations; ++it) {
    for (const std::size_t idx : order) {
      const auto [r0, c0] = origins[idx];
      auto block = spectrum.block(r0, c0, g.m_rows, g.m_cols);
      const ComplexPlane sub = block;
      const ComplexPlane exit_spectrum = sub * pupil;
      const ComplexPlane field = fft::centered_inverse(exit_spectrum) * g.scale;

      ComplexPlane corrected(g.m_rows, g.m_cols);
      const Plane& target = measured_amplitude[idx];
      for (int r = 0; r < g.m_rows; ++r) {
        for (int c = 0; c < g.m_cols; ++c) {
          const double mag = std::abs(field(r, c));
          corrected(r, c) = mag > 0.0 ? field(r, c) * (target(r, c) / mag) : std::complex<double>(target(r, c), 0.0);
        }
      }
      const ComplexPlane diff = fft::centered_forward(corrected) / g.scale - exit_spectrum;

      const double pupil_max = pupil.abs2().maxCoeff();
      if (pupil_max > 0.0) block += (config.object_step / pupil_max) * pupil.conjugate() * diff;
      if (config.pupil_recovery) {
        const double object_max = sub.abs2().maxCoeff();
        if (object_max > 0.0) pupil += (config.pupil_step / object_max) * sub.conjugate() * diff * support;
      }
    }

    double mismatch = 0.0;
    for (std::size_t idx = 0; idx < stack.captures.size(); ++idx) {
      const auto [r0, c0] = origins[idx];
      const ComplexPlane field =
          fft::centered_inverse(spectrum.block(r0, c0, g.m_rows, g.m_cols) * pupil) * g.scale;
      mismatch += (measured_amplitude[idx] - field.abs()).square().sum();
    }
    const double residual = total_intensity > 0.0 ? mismatch / total_intensity : mismatch;
    if (!std::isfinite(residual)) throw NumericError("reconstruction residual became non-finite");
    result.residual_history.push_back(residual);
  }

  result.object = ComplexField(fft::centered_inverse(spectrum), object_pitch, wavelength);
  result.spectrum = std::move(spectrum);
  result.recovered_pupil = pupil_init;
  result.recovered_pupil.grid = pupil;
  if (config.pupil_recovery) {
    for (int r = 0; r < g.m_rows; ++r)
      for (int c = 0; c < g.m_cols; ++c)
        result.recovered_pupil.aberration_phase(r, c) = support(r, c) > 0.0 ? std::arg(pupil(r, c)) : 0.0;
  }
  return result;
}

double sharpness(const ComplexField& object, double objective_na) {
  object.validate();
  const int rows = object.height();
  const int cols = object.width();
  const ComplexPlane amplitude = object.data.abs().cast<std::complex<double>>();
  const Plane energy = fft::centered_forward(amplitude).abs2();
  const double cut = 0.5 * objective_na / object.wavelength_um;
  const double df_x = 1.0 / (cols * object.pixel_pitch_um);
  const double df_y = 1.0 / (rows * object.pixel_pitch_um);
  double high = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double fy = fft::centered_index(r, rows) * df_y;
    for (int c = 0; c < cols; ++c) {
      const double fx = fft::centered_index(c, cols) * df_x;
      if (fx * fx + fy * fy > cut * cut) high += energy(r, c);
    }
  }
  const double total = energy.sum();
  return total > 0.0 ? high / total : 0.0;
}

std::vector<double> RefocusRange::candidates() const {
  if (!(step_um > 0.0)) throw ConfigError("refocus step must be positive");
  if (!(max_um >= min_um)) throw ConfigError("refocus range is empty");
  const auto count = static_cast<int>(std::floor((max_um - min_um) / step_um + 1e-9)) + 1;
  std::vector<double> values(count);
  for (int i = 0; i < count; ++i) values[i] = min_um + i * step_um;
  return values;
}

RefocusResult digital_refocus(const AcquisitionStack& stack, const optics::IlluminationGeometry& geometry,
                              const PupilFunction& pupil, const ReconstructionConfig& config,
                              const RefocusRange& range) {
  const auto dzs = range.candidates();
  std::vector<ReconstructionResult> results(dzs.size());
  std::vector<double> scores(dzs.size());
  parallel_for(dzs.size(), [&](std::size_t i) {
    results[i] = reconstruct(stack, geometry, optics::defocus_pupil(pupil, dzs[i]), config);
    scores[i] = sharpness(results[i].object, stack.objective_na);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < dzs.size(); ++i) {
    if (scores[i] > scores[best] || (scores[i] == scores[best] && std::abs(dzs[i]) < std::abs(dzs[best]))) best = i;
  }
  RefocusResult out;
  out.best_dz_um = dzs[best];
  for (std::size_t i = 0; i < dzs.size(); ++i) out.scores.emplace_back(dzs[i], scores[i]);
  out.result = std::move(results[best]);
  return out;
}

double synthetic_na(const optics::IlluminationGeometry& geometry, double objective_na) {
  geometry.validate();
  double best = 0.0;
  for (int i = 0; i < geometry.size(); ++i) best = std::max(best, geometry.illumination_na(i));
  return objective_na + best;
}

Image compose_color(const std::map<Channel, ReconstructionResult>& results) {
  const Channel order[] = {Channel::Red, Channel::Green, Channel::Blue};
  for (const Channel c : order)
    if (!results.count(c))
      throw ConfigError(std::string("color composition is missing channel ") + optics::channel_letter(c));
  const auto& ref = results.at(Channel::Green).object;
  Image rgb;
  for (const Channel c : order) {
    const auto& object = results.at(c).object;
    if (object.width() != ref.width() || object.height() != ref.height())
      throw ShapeError("channel reconstructions differ in size");
    rgb.planes.push_back(object.data.abs2());
  }
  double peak = 0.0;
  for (const auto& plane : rgb.planes) peak = std::max(peak, plane.maxCoeff());
  if (peak > 0.0)
    for (auto& plane : rgb.planes) plane /= peak;
  return rgb;
}

std::map<Channel, AcquisitionStack> split_channels(const AcquisitionStack& stack) {
  std::map<Channel, AcquisitionStack> out;
  for (const auto& capture : stack.captures) {
    auto& sub = out[capture.channel];
    sub.capture_pitch_um = stack.capture_pitch_um;
    sub.objective_na = stack.objective_na;
    sub.captures.push_back(capture);
  }
  return out;
}

}  // namespace fpstain::recovery
