#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fpstain/image.hpp"

// Forward model of Fourier ptychographic image formation: angle-varied
// coherent illumination, pupil filtering and intensity capture, plus the
// coherent artifact generator used to build training data.
//
// Units: lengths on the sample side are micrometers, LED-array geometry is
// millimeters, wavevectors are radians per micrometer. Spectra are kept in
// centered layout (zero frequency at (rows/2, cols/2)).

namespace fpstain::optics {

enum class Channel { Red, Green, Blue };

char channel_letter(Channel channel);
Channel parse_channel(char letter);
/// Default LED wavelengths in micrometers (R 0.632, G 0.532, B 0.472).
double default_wavelength(Channel channel);

struct ComplexField {
  double pixel_pitch_um = 1.0;
  double wavelength_um = 0.532;
  ComplexPlane data;

  ComplexField() = default;
  ComplexField(ComplexPlane values, double pitch_um, double wavelength)
      : pixel_pitch_um(pitch_um), wavelength_um(wavelength), data(std::move(values)) {}

  int width() const { return static_cast<int>(data.cols()); }
  int height() const { return static_cast<int>(data.rows()); }
  void validate() const;
};

struct Wavevector {
  double kx = 0.0;
  double ky = 0.0;

  double norm() const;
};

/// Coherent transfer function sampled on the spectrum grid of one capture.
struct PupilFunction {
  double na = 0.1;
  double wavelength_um = 0.532;
  double capture_pitch_um = 1.5;
  /// Accumulated defocus applied through defocus_pupil().
  double defocus_um = 0.0;
  ComplexPlane grid;
  Plane aberration_phase;

  int width() const { return static_cast<int>(grid.cols()); }
  int height() const { return static_cast<int>(grid.rows()); }
  /// Spatial-frequency spacing of the grid in cycles per micrometer (x, y).
  double frequency_step_x() const { return 1.0 / (width() * capture_pitch_um); }
  double frequency_step_y() const { return 1.0 / (height() * capture_pitch_um); }
  double cutoff() const { return na / wavelength_um; }
  /// True where the bin lies inside the NA circle.
  bool in_support(int row, int col) const;
};

/// Ideal circular pupil: unit amplitude inside na / wavelength, zero outside.
PupilFunction make_pupil(double na, double wavelength_um, int width, int height, double capture_pitch_um);

/// Multiplies the pupil by exp(i * phase) on its support and records the
/// phase in aberration_phase.
PupilFunction with_aberration(const PupilFunction& pupil, const Plane& phase);

struct LedPosition {
  double x_mm = 0.0;
  double y_mm = 0.0;
};

struct IlluminationGeometry {
  std::vector<LedPosition> leds;
  double array_height_mm = 80.0;
  std::map<Channel, double> channel_wavelengths{
      {Channel::Red, 0.632}, {Channel::Green, 0.532}, {Channel::Blue, 0.472}};

  /// nx by ny square grid centered on the optical axis, row-major LED order.
  static IlluminationGeometry grid(int nx, int ny, double pitch_mm, double height_mm);
  /// 15x15 LEDs, 4 mm pitch, 80 mm below the sample.
  static IlluminationGeometry default_grid() { return grid(15, 15, 4.0, 80.0); }

  int size() const { return static_cast<int>(leds.size()); }
  double wavelength(Channel channel) const;
  /// sin(atan(r / h)) for the LED at `index`.
  double illumination_na(int index) const;
  void validate() const;
};

/// (2 pi / lambda) * (x, y) / sqrt(x^2 + y^2 + h^2) for the chosen LED.
Wavevector illumination_wavevector(int led_index, const IlluminationGeometry& geometry, Channel channel);

/// Pupil with the angular-spectrum defocus phase kz * dz added on its support.
PupilFunction defocus_pupil(const PupilFunction& pupil, double dz_um);

struct Capture {
  Plane intensity;
  Wavevector k_illum;
  Channel channel = Channel::Green;
  int led_index = 0;
};

struct AcquisitionStack {
  std::vector<Capture> captures;
  double capture_pitch_um = 1.5;
  double objective_na = 0.1;

  void validate() const;
};

/// Integer centered-bin offset of the illumination on a spectrum grid with
/// the given frequency steps (nearest-bin alignment).
std::pair<int, int> illumination_bin(const Wavevector& k, double df_x, double df_y);

/// Low-resolution intensity |IFFT(crop(O, k_illum) * P)|^2 for one LED.
/// `capture_size` must match the pupil grid; the object grid must be an
/// integer multiple of it with matching field of view.
Plane simulate_capture(const ComplexField& object, const PupilFunction& pupil, const Wavevector& k_illum,
                       int capture_size);

/// Same as simulate_capture but takes a precomputed centered object spectrum.
Plane simulate_capture_from_spectrum(const ComplexPlane& centered_spectrum, double object_pitch_um,
                                     const PupilFunction& pupil, const Wavevector& k_illum);

/// One capture per (channel, LED), channel-major. Channels other than the
/// pupil's own wavelength use an ideal pupil of the same NA rebuilt at the
/// channel wavelength, carrying the same defocus.
AcquisitionStack simulate_stack(const std::map<Channel, ComplexField>& object_per_channel,
                                const IlluminationGeometry& geometry, const PupilFunction& pupil,
                                const std::vector<Channel>& channels);

/// Pupil used for `channel` by simulate_stack.
PupilFunction pupil_for_channel(const PupilFunction& pupil, double wavelength_um);

struct ArtifactConfig {
  /// Dust disks per 32x32 cell, in [0, 1).
  double density = 0.01;
  int cell_size = 32;
  int min_radius = 2;
  int max_radius = 6;
  /// RMS of the smooth phase screen in radians.
  double speckle_amplitude = 0.0;
  /// Phase screen low-pass cutoff as a fraction of Nyquist.
  double screen_cutoff = 1.0 / 16.0;
  /// Coherent PSF cutoff as a fraction of Nyquist.
  double psf_cutoff = 0.5;

  void validate() const;
};

struct DustDisk {
  int row = 0;
  int col = 0;
  int radius = 0;
};

/// round(density * cells) disks drawn from mt19937_64(seed): row, col and
/// radius are consecutive raw draws taken modulo their ranges.
std::vector<DustDisk> plan_dust(int height, int width, std::uint64_t seed, const ArtifactConfig& config);

/// Complex multiplicative modulation h * (dust transmission * exp(i phase screen)).
ComplexPlane artifact_modulation(int height, int width, std::uint64_t seed, const ArtifactConfig& config);

Plane inject_coherent_artifacts(const Plane& intensity, std::uint64_t seed, const ArtifactConfig& config);
ComplexPlane inject_coherent_artifacts(const ComplexPlane& field, std::uint64_t seed, const ArtifactConfig& config);

}  // namespace fpstain::optics
