#pragma once

#include <cstdint>
#include <map>

#include "fpstain/image.hpp"
#include "fpstain/optics.hpp"

// Seeded synthetic specimens: complex test objects for the FPM loop and
// stained-tissue-like color tiles with their coherent monochrome
// counterparts for the translator.

namespace fpstain::datagen {

/// White Gaussian noise low-passed at `cutoff` (fraction of Nyquist),
/// rescaled to [0, 1].
Plane smooth_field(int height, int width, double cutoff, std::uint64_t seed);

struct ObjectConfig {
  double amplitude_min = 0.4;
  double amplitude_max = 1.0;
  /// Peak absolute phase in radians.
  double phase_max = 1.0;
  /// Feature bandwidth as a fraction of Nyquist.
  double cutoff = 0.2;
};

/// Complex transmittance with smooth random amplitude and phase.
ComplexPlane test_object(int size, std::uint64_t seed, const ObjectConfig& config = {});

/// Per-channel objects of a color target: shared phase, amplitudes that
/// differ between channels.
std::map<optics::Channel, ComplexPlane> color_target(int size, std::uint64_t seed, const ObjectConfig& config = {});

/// Stain absorbance maps (optical density scale factors) of one tile.
struct StainMaps {
  Plane hematoxylin;
  Plane eosin;
};

StainMaps stain_maps(int size, std::uint64_t seed);

/// Beer-Lambert transmittance of the stain maps in one color channel.
Plane transmittance(const StainMaps& maps, optics::Channel channel);

/// 8-bit RGB rendering of the stain maps under incoherent white light.
Image render_color(const StainMaps& maps);

struct DegradeConfig {
  /// LED color of the monochrome coherent capture.
  optics::Channel illumination = optics::Channel::Blue;
  /// Coherent imaging cutoff, fraction of Nyquist.
  double coherent_cutoff = 0.6;
  /// Peak phase delay of the specimen in radians (scaled by absorbance).
  double specimen_phase = 0.6;
  optics::ArtifactConfig artifacts{0.3, 32, 2, 6, 0.35, 1.0 / 16.0, 0.6};
};

/// Single-channel coherent capture of the tile: amplitude sqrt(T) with a
/// stain-correlated phase, coherent low-pass, dust and speckle, |.|^2,
/// quantized to 8 bits.
Image coherent_monochrome(const StainMaps& maps, std::uint64_t seed, const DegradeConfig& config = {});

/// Grayscale image replicated into three identical channels.
Image replicate_rgb(const Image& gray);

}  // namespace fpstain::datagen
