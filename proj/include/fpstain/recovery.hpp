#pragma once

#include <map>
#include <vector>

#include "fpstain/optics.hpp"

// Fourier ptychographic reconstruction: sequential aperture synthesis with
// amplitude replacement, optional embedded pupil recovery, refocus search and
// sequential-RGB color composition.

namespace fpstain::recovery {

enum class InitMode { MeanBrightfield, Flat };

struct ReconstructionConfig {
  int iterations = 10;
  bool pupil_recovery = false;
  double object_step = 1.0;
  double pupil_step = 1.0;
  InitMode init_mode = InitMode::MeanBrightfield;
  /// High-resolution grid size over the capture size, per axis.
  int upsampling = 4;

  void validate() const;
};

struct ReconstructionResult {
  optics::ComplexField object;
  /// Centered spectrum of `object`, as updated by the solver.
  ComplexPlane spectrum;
  optics::PupilFunction recovered_pupil;
  /// Relative amplitude mismatch sum (sqrt(I) - |psi|)^2 / sum I after each iteration.
  std::vector<double> residual_history;
};

/// Centered initial object spectrum for the stack (exposed for inspection).
ComplexPlane initial_spectrum(const optics::AcquisitionStack& stack, double wavelength_um,
                              const ReconstructionConfig& config);

/// Captures in update order: ascending illumination angle, ties by LED index.
std::vector<std::size_t> update_order(const optics::AcquisitionStack& stack);

ReconstructionResult reconstruct(const optics::AcquisitionStack& stack, const optics::IlluminationGeometry& geometry,
                                 const optics::PupilFunction& pupil_init, const ReconstructionConfig& config);

/// Fraction of amplitude spectral energy above half the objective cutoff.
double sharpness(const optics::ComplexField& object, double objective_na);

struct RefocusRange {
  double min_um = 0.0;
  double max_um = 0.0;
  double step_um = 1.0;

  std::vector<double> candidates() const;
};

struct RefocusResult {
  double best_dz_um = 0.0;
  ReconstructionResult result;
  /// (dz, sharpness) per candidate in scan order.
  std::vector<std::pair<double, double>> scores;
};

RefocusResult digital_refocus(const optics::AcquisitionStack& stack, const optics::IlluminationGeometry& geometry,
                              const optics::PupilFunction& pupil, const ReconstructionConfig& config,
                              const RefocusRange& range);

/// Objective NA plus the largest illumination NA in the geometry.
double synthetic_na(const optics::IlluminationGeometry& geometry, double objective_na);

/// Stacks per-channel |object|^2 into an RGB image in [0, 1], scaled by the
/// common maximum over all three channels so relative color balance holds.
Image compose_color(const std::map<optics::Channel, ReconstructionResult>& results);

/// Splits a multi-channel stack into one stack per channel.
std::map<optics::Channel, optics::AcquisitionStack> split_channels(const optics::AcquisitionStack& stack);

}  // namespace fpstain::recovery
