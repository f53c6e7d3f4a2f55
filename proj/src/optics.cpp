#include "fpstain/optics.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "fpstain/fft.hpp"
#include "fpstain/parallel.hpp"

namespace fpstain::optics {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool same_step(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

// Circular low-pass mask on a centered grid; cutoff is a fraction of Nyquist.
Plane circular_mask(int height, int width, double cutoff_fraction) {
  Plane mask(height, width);
  for (int r = 0; r < height; ++r) {
    const double fy = static_cast<double>(fft::centered_index(r, height)) / (height / 2.0);
    for (int c = 0; c < width; ++c) {
      const double fx = static_cast<double>(fft::centered_index(c, width)) / (width / 2.0);
      mask(r, c) = (fx * fx + fy * fy <= cutoff_fraction * cutoff_fraction) ? 1.0 : 0.0;
    }
  }
  return mask;
}

}  // namespace

char channel_letter(Channel channel) {
  switch (channel) {
    case Channel::Red: return 'R';
    case Channel::Green: return 'G';
    case Channel::Blue: return 'B';
  }
  return '?';
}

Channel parse_channel(char letter) {
  switch (letter) {
    case 'R': case 'r': return Channel::Red;
    case 'G': case 'g': return Channel::Green;
    case 'B': case 'b': return Channel::Blue;
  }
  throw ConfigError(std::string("unknown color channel '") + letter + "'");
}

double default_wavelength(Channel channel) {
  switch (channel) {
    case Channel::Red: return 0.632;
    case Channel::Green: return 0.532;
    case Channel::Blue: return 0.472;
  }
  return 0.532;
}

void ComplexField::validate() const {
  if (data.rows() < 1 || data.cols() < 1) throw ShapeError("complex field must be at least 1x1");
  if (!(pixel_pitch_um > 0.0) || !(wavelength_um > 0.0))
    throw ConfigError("complex field pixel pitch and wavelength must be positive");
}

double Wavevector::norm() const { return std::hypot(kx, ky); }

bool PupilFunction::in_support(int row, int col) const {
  const double fx = fft::centered_index(col, width()) * frequency_step_x();
  const double fy = fft::centered_index(row, height()) * frequency_step_y();
  const double fc = cutoff();
  return fx * fx + fy * fy <= fc * fc;
}

PupilFunction make_pupil(double na, double wavelength_um, int width, int height, double capture_pitch_um) {
  if (!(na > 0.0 && na < 1.0)) throw ConfigError("objective NA must lie in (0, 1)");
  if (!(wavelength_um > 0.0) || !(capture_pitch_um > 0.0))
    throw ConfigError("pupil wavelength and capture pitch must be positive");
  if (width < 1 || height < 1) throw ShapeError("pupil grid must be at least 1x1");
  PupilFunction pupil;
  pupil.na = na;
  pupil.wavelength_um = wavelength_um;
  pupil.capture_pitch_um = capture_pitch_um;
  pupil.grid = ComplexPlane::Zero(height, width);
  pupil.aberration_phase = Plane::Zero(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (pupil.in_support(r, c)) pupil.grid(r, c) = 1.0;
  return pupil;
}

PupilFunction with_aberration(const PupilFunction& pupil, const Plane& phase) {
  if (phase.rows() != pupil.height() || phase.cols() != pupil.width())
    throw ShapeError("aberration phase must match the pupil grid");
  PupilFunction out = pupil;
  for (int r = 0; r < pupil.height(); ++r) {
    for (int c = 0; c < pupil.width(); ++c) {
      if (!pupil.in_support(r, c)) continue;
      out.grid(r, c) *= std::polar(1.0, phase(r, c));
      out.aberration_phase(r, c) += phase(r, c);
    }
  }
  return out;
}

IlluminationGeometry IlluminationGeometry::grid(int nx, int ny, double pitch_mm, double height_mm) {
  if (nx < 1 || ny < 1) throw ConfigError("LED grid needs at least one LED");
  IlluminationGeometry geometry;
  geometry.array_height_mm = height_mm;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      geometry.leds.push_back({(i - (nx - 1) / 2.0) * pitch_mm, (j - (ny - 1) / 2.0) * pitch_mm});
    }
  }
  geometry.validate();
  return geometry;
}

double IlluminationGeometry::wavelength(Channel channel) const {
  auto it = channel_wavelengths.find(channel);
  if (it == channel_wavelengths.end())
    throw ConfigError(std::string("no wavelength configured for channel ") + channel_letter(channel));
  return it->second;
}

double IlluminationGeometry::illumination_na(int index) const {
  if (index < 0 || index >= size()) throw IndexError("LED index " + std::to_string(index) + " out of range");
  const auto& led = leds[index];
  const double r = std::hypot(led.x_mm, led.y_mm);
  return std::sin(std::atan(r / array_height_mm));
}

void IlluminationGeometry::validate() const {
  if (leds.empty()) throw ConfigError("illumination geometry has no LEDs");
  if (!(array_height_mm > 0.0) || !std::isfinite(array_height_mm))
    throw ConfigError("LED array height must be positive");
  for (const auto& led : leds)
    if (!std::isfinite(led.x_mm) || !std::isfinite(led.y_mm)) throw ConfigError("LED position is not finite");
  for (const auto& [channel, wl] : channel_wavelengths)
    if (!(wl > 0.0)) throw ConfigError(std::string("wavelength for channel ") + channel_letter(channel) + " must be positive");
}

Wavevector illumination_wavevector(int led_index, const IlluminationGeometry& geometry, Channel channel) {
  if (led_index < 0 || led_index >= geometry.size())
    throw IndexError("LED index " + std::to_string(led_index) + " out of range [0, " +
                     std::to_string(geometry.size()) + ")");
  const auto& led = geometry.leds[led_index];
  const double k0 = kTwoPi / geometry.wavelength(channel);
  const double dist = std::sqrt(led.x_mm * led.x_mm + led.y_mm * led.y_mm +
                                geometry.array_height_mm * geometry.array_height_mm);
  return {k0 * led.x_mm / dist, k0 * led.y_mm / dist};
}

PupilFunction defocus_pupil(const PupilFunction& pupil, double dz_um) {
  PupilFunction out = pupil;
  if (dz_um == 0.0) return out;
  const double inv_lambda2 = 1.0 / (pupil.wavelength_um * pupil.wavelength_um);
  for (int r = 0; r < pupil.height(); ++r) {
    const double fy = fft::centered_index(r, pupil.height()) * pupil.frequency_step_y();
    for (int c = 0; c < pupil.width(); ++c) {
      if (!pupil.in_support(r, c)) continue;
      const double fx = fft::centered_index(c, pupil.width()) * pupil.frequency_step_x();
      const double kz = kTwoPi * std::sqrt(std::max(0.0, inv_lambda2 - fx * fx - fy * fy));
      const double phase = kz * dz_um;
      out.grid(r, c) *= std::polar(1.0, phase);
      out.aberration_phase(r, c) += phase;
    }
  }
  out.defocus_um += dz_um;
  return out;
}

void AcquisitionStack::validate() const {
  for (const auto& capture : captures) {
    if ((capture.intensity < 0.0).any()) throw RangeError("capture intensities must be nonnegative");
    if (!capture.intensity.isFinite().all()) throw NumericError("capture intensity is not finite");
  }
  if (!(capture_pitch_um > 0.0)) throw ConfigError("capture pitch must be positive");
  if (!(objective_na > 0.0 && objective_na < 1.0)) throw ConfigError("objective NA must lie in (0, 1)");
}

std::pair<int, int> illumination_bin(const Wavevector& k, double df_x, double df_y) {
  const int col = static_cast<int>(std::lround(k.kx / kTwoPi / df_x));
  const int row = static_cast<int>(std::lround(k.ky / kTwoPi / df_y));
  return {row, col};
}

Plane simulate_capture_from_spectrum(const ComplexPlane& spectrum, double object_pitch_um,
                                     const PupilFunction& pupil, const Wavevector& k_illum) {
  const int n_rows = static_cast<int>(spectrum.rows());
  const int n_cols = static_cast<int>(spectrum.cols());
  const int m_rows = pupil.height();
  const int m_cols = pupil.width();
  const double df_x = 1.0 / (n_cols * object_pitch_um);
  const double df_y = 1.0 / (n_rows * object_pitch_um);
  if (!same_step(df_x, pupil.frequency_step_x()) || !same_step(df_y, pupil.frequency_step_y()))
    throw ConfigError("object field of view does not match capture field of view");
  const auto [dr, dc] = illumination_bin(k_illum, df_x, df_y);
  const int r0 = n_rows / 2 + dr - m_rows / 2;
  const int c0 = n_cols / 2 + dc - m_cols / 2;
  if (r0 < 0 || c0 < 0 || r0 + m_rows > n_rows || c0 + m_cols > n_cols)
    throw OutOfBandError("illumination passband at bin offset (" + std::to_string(dr) + ", " + std::to_string(dc) +
                         ") extends outside the object spectrum");
  ComplexPlane sub = spectrum.block(r0, c0, m_rows, m_cols) * pupil.grid;
  const double scale = static_cast<double>(m_rows) * m_cols / (static_cast<double>(n_rows) * n_cols);
  ComplexPlane field = fft::centered_inverse(sub) * scale;
  return field.abs2();
}

Plane simulate_capture(const ComplexField& object, const PupilFunction& pupil, const Wavevector& k_illum,
                       int capture_size) {
  object.validate();
  if (capture_size != pupil.width() || capture_size != pupil.height())
    throw ShapeError("capture size " + std::to_string(capture_size) + " does not match the pupil grid");
  if (object.width() % capture_size != 0 || object.height() % capture_size != 0)
    throw ShapeError("object grid must be an integer multiple of the capture size");
  return simulate_capture_from_spectrum(fft::centered_forward(object.data), object.pixel_pitch_um, pupil, k_illum);
}

PupilFunction pupil_for_channel(const PupilFunction& pupil, double wavelength_um) {
  if (wavelength_um == pupil.wavelength_um) return pupil;
  PupilFunction rebuilt = make_pupil(pupil.na, wavelength_um, pupil.width(), pupil.height(), pupil.capture_pitch_um);
  return defocus_pupil(rebuilt, pupil.defocus_um);
}

AcquisitionStack simulate_stack(const std::map<Channel, ComplexField>& object_per_channel,
                                const IlluminationGeometry& geometry, const PupilFunction& pupil,
                                const std::vector<Channel>& channels) {
  geometry.validate();
  if (channels.empty()) throw ConfigError("no channels requested");
  AcquisitionStack stack;
  stack.capture_pitch_um = pupil.capture_pitch_um;
  stack.objective_na = pupil.na;
  const int leds = geometry.size();
  stack.captures.resize(channels.size() * static_cast<std::size_t>(leds));
  for (std::size_t ci = 0; ci < channels.size(); ++ci) {
    const Channel channel = channels[ci];
    auto it = object_per_channel.find(channel);
    if (it == object_per_channel.end())
      throw ConfigError(std::string("no object field supplied for channel ") + channel_letter(channel));
    const ComplexField& object = it->second;
    object.validate();
    if (object.width() % pupil.width() != 0 || object.height() % pupil.height() != 0)
      throw ShapeError("object grid must be an integer multiple of the capture size");
    const PupilFunction channel_pupil = pupil_for_channel(pupil, geometry.wavelength(channel));
    const ComplexPlane spectrum = fft::centered_forward(object.data);
    parallel_for(static_cast<std::size_t>(leds), [&](std::size_t led) {
      Capture& capture = stack.captures[ci * leds + led];
      capture.led_index = static_cast<int>(led);
      capture.channel = channel;
      capture.k_illum = illumination_wavevector(static_cast<int>(led), geometry, channel);
      capture.intensity =
          simulate_capture_from_spectrum(spectrum, object.pixel_pitch_um, channel_pupil, capture.k_illum);
    });
  }
  return stack;
}

void ArtifactConfig::validate() const {
  if (!(density >= 0.0 && density < 1.0)) throw ConfigError("artifact density must lie in [0, 1)");
  if (cell_size < 1) throw ConfigError("artifact cell size must be positive");
  if (min_radius < 0 || max_radius < min_radius) throw ConfigError("invalid dust radius range");
  if (!(speckle_amplitude >= 0.0) || !std::isfinite(speckle_amplitude))
    throw ConfigError("speckle amplitude must be finite and nonnegative");
  if (!(screen_cutoff > 0.0) || !(psf_cutoff > 0.0)) throw ConfigError("filter cutoffs must be positive");
}

std::vector<DustDisk> plan_dust(int height, int width, std::uint64_t seed, const ArtifactConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const double cells = std::floor(static_cast<double>(height) / config.cell_size) *
                       std::floor(static_cast<double>(width) / config.cell_size);
  const auto count = static_cast<std::size_t>(std::llround(config.density * cells));
  const auto radius_span = static_cast<std::uint64_t>(config.max_radius - config.min_radius + 1);
  std::vector<DustDisk> disks(count);
  for (auto& disk : disks) {
    disk.row = static_cast<int>(rng() % static_cast<std::uint64_t>(height));
    disk.col = static_cast<int>(rng() % static_cast<std::uint64_t>(width));
    disk.radius = config.min_radius + static_cast<int>(rng() % radius_span);
  }
  return disks;
}

ComplexPlane artifact_modulation(int height, int width, std::uint64_t seed, const ArtifactConfig& config) {
  config.validate();
  const auto disks = plan_dust(height, width, seed, config);
  ComplexPlane transmission = ComplexPlane::Ones(height, width);
  for (const auto& disk : disks) {
    const int r2 = disk.radius * disk.radius;
    for (int r = std::max(0, disk.row - disk.radius); r <= std::min(height - 1, disk.row + disk.radius); ++r)
      for (int c = std::max(0, disk.col - disk.radius); c <= std::min(width - 1, disk.col + disk.radius); ++c)
        if ((r - disk.row) * (r - disk.row) + (c - disk.col) * (c - disk.col) <= r2) transmission(r, c) = 0.0;
  }

  if (config.speckle_amplitude > 0.0) {
    // Screen noise continues the dust stream so one seed fixes both.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < 3 * disks.size(); ++i) rng();
    std::normal_distribution<double> normal(0.0, 1.0);
    ComplexPlane noise(height, width);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) noise(r, c) = normal(rng);
    ComplexPlane spectrum = fft::centered_forward(noise) * circular_mask(height, width, config.screen_cutoff);
    Plane screen = fft::centered_inverse(spectrum).real();
    const double rms = std::sqrt(screen.square().mean());
    if (rms > 0.0) screen *= config.speckle_amplitude / rms;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) transmission(r, c) *= std::polar(1.0, screen(r, c));
  }

  ComplexPlane filtered =
      fft::centered_forward(transmission) * circular_mask(height, width, config.psf_cutoff);
  return fft::centered_inverse(filtered);
}

Plane inject_coherent_artifacts(const Plane& intensity, std::uint64_t seed, const ArtifactConfig& config) {
  config.validate();
  if (!intensity.isFinite().all()) throw NumericError("artifact input contains non-finite values");
  if (config.density == 0.0 && config.speckle_amplitude == 0.0) return intensity;
  const ComplexPlane modulation =
      artifact_modulation(static_cast<int>(intensity.rows()), static_cast<int>(intensity.cols()), seed, config);
  return intensity * modulation.abs2();
}

ComplexPlane inject_coherent_artifacts(const ComplexPlane& field, std::uint64_t seed, const ArtifactConfig& config) {
  config.validate();
  if (!field.isFinite().all()) throw NumericError("artifact input contains non-finite values");
  if (config.density == 0.0 && config.speckle_amplitude == 0.0) return field;
  return field * artifact_modulation(static_cast<int>(field.rows()), static_cast<int>(field.cols()), seed, config);
}

}  // namespace fpstain::optics
