#include "fpstain/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fpstain/fft.hpp"

namespace fpstain::datagen {
namespace {

// Optical density per unit stain in R, G, B (hematoxylin, eosin).
constexpr double kHematoxylin[3] = {0.65, 0.70, 0.29};
constexpr double kEosin[3] = {0.07, 0.99, 0.11};

int channel_index(optics::Channel channel) {
  switch (channel) {
    case optics::Channel::Red: return 0;
    case optics::Channel::Green: return 1;
    case optics::Channel::Blue: return 2;
  }
  return 1;
}

ComplexPlane lowpass(const ComplexPlane& field, double cutoff) {
  const int h = static_cast<int>(field.rows());
  const int w = static_cast<int>(field.cols());
  ComplexPlane spectrum = fft::centered_forward(field);
  for (int r = 0; r < h; ++r) {
    const double fy = fft::centered_index(r, h) / (h / 2.0);
    for (int c = 0; c < w; ++c) {
      const double fx = fft::centered_index(c, w) / (w / 2.0);
      if (fx * fx + fy * fy > cutoff * cutoff) spectrum(r, c) = 0.0;
    }
  }
  return fft::centered_inverse(spectrum);
}

double smoothstep(double lo, double hi, double x) {
  const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Plane smooth_field(int height, int width, double cutoff, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ComplexPlane noise(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) noise(r, c) = normal(rng);
  Plane field = lowpass(noise, cutoff).real();
  const double lo = field.minCoeff();
  const double hi = field.maxCoeff();
  if (hi - lo <= 0.0) return Plane::Zero(height, width);
  return (field - lo) / (hi - lo);
}

ComplexPlane test_object(int size, std::uint64_t seed, const ObjectConfig& config) {
  const Plane amp = smooth_field(size, size, config.cutoff, seed);
  const Plane phase = smooth_field(size, size, config.cutoff, seed ^ 0xA5A5A5A5ULL);
  ComplexPlane object(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      object(r, c) = std::polar(config.amplitude_min + (config.amplitude_max - config.amplitude_min) * amp(r, c),
                                config.phase_max * (2.0 * phase(r, c) - 1.0));
  return object;
}

std::map<optics::Channel, ComplexPlane> color_target(int size, std::uint64_t seed, const ObjectConfig& config) {
  const Plane phase = smooth_field(size, size, config.cutoff, seed ^ 0xA5A5A5A5ULL);
  std::map<optics::Channel, ComplexPlane> out;
  std::uint64_t channel_seed = seed;
  for (optics::Channel ch : {optics::Channel::Red, optics::Channel::Green, optics::Channel::Blue}) {
    const Plane amp = smooth_field(size, size, config.cutoff, ++channel_seed);
    ComplexPlane object(size, size);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        object(r, c) = std::polar(config.amplitude_min + (config.amplitude_max - config.amplitude_min) * amp(r, c),
                                  config.phase_max * (2.0 * phase(r, c) - 1.0));
    out.emplace(ch, std::move(object));
  }
  return out;
}

StainMaps stain_maps(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };

  const Plane tissue = smooth_field(size, size, 0.08, rng());
  const Plane fibers = smooth_field(size, size, 0.35, rng());
  const Plane grain = smooth_field(size, size, 0.7, rng());
  StainMaps maps{Plane::Zero(size, size), Plane::Zero(size, size)};
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double present = smoothstep(0.25, 0.4, tissue(r, c));
      maps.eosin(r, c) = present * (0.25 + 0.9 * smoothstep(0.3, 0.7, fibers(r, c)));
      maps.hematoxylin(r, c) = present * 0.12 * grain(r, c);
    }
  }

  const int nuclei = static_cast<int>(size * size / 400) + static_cast<int>(rng() % 5);
  for (int n = 0; n < nuclei; ++n) {
    const double cy = uniform(0.0, size);
    const double cx = uniform(0.0, size);
    const double ry = uniform(2.5, 6.0);
    const double rx = ry * uniform(0.6, 1.4);
    const double angle = uniform(0.0, std::numbers::pi);
    const double density = uniform(0.8, 1.4);
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const int reach = static_cast<int>(std::ceil(std::max(rx, ry))) + 2;
    for (int r = std::max(0, static_cast<int>(cy) - reach); r < std::min(size, static_cast<int>(cy) + reach + 1); ++r) {
      for (int c = std::max(0, static_cast<int>(cx) - reach); c < std::min(size, static_cast<int>(cx) + reach + 1);
           ++c) {
        const double dy = r - cy;
        const double dx = c - cx;
        const double u = (dx * ca + dy * sa) / rx;
        const double v = (-dx * sa + dy * ca) / ry;
        const double edge = 1.0 - smoothstep(0.8, 1.1, std::sqrt(u * u + v * v));
        if (edge <= 0.0) continue;
        const double chromatin = 0.75 + 0.5 * grain(r, c);
        maps.hematoxylin(r, c) = std::max(maps.hematoxylin(r, c), edge * density * chromatin);
        maps.eosin(r, c) *= 1.0 - 0.6 * edge;
      }
    }
  }
  return maps;
}

Plane transmittance(const StainMaps& maps, optics::Channel channel) {
  const int k = channel_index(channel);
  return (-(maps.hematoxylin * kHematoxylin[k] + maps.eosin * kEosin[k])).exp();
}

Image render_color(const StainMaps& maps) {
  Image out;
  for (optics::Channel ch : {optics::Channel::Red, optics::Channel::Green, optics::Channel::Blue})
    out.planes.push_back((transmittance(maps, ch) * 250.0 + 2.0).round().min(255.0));
  return out;
}

Image coherent_monochrome(const StainMaps& maps, std::uint64_t seed, const DegradeConfig& config) {
  const Plane t = transmittance(maps, config.illumination);
  const Plane phase = config.specimen_phase * (maps.hematoxylin + maps.eosin);
  ComplexPlane field(t.rows(), t.cols());
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) field(r, c) = std::polar(std::sqrt(t(r, c)), phase(r, c));
  field = lowpass(field, config.coherent_cutoff);
  field = optics::inject_coherent_artifacts(field, seed, config.artifacts);
  return Image((field.abs2() * 250.0 + 2.0).round().max(0.0).min(255.0).eval());
}

Image replicate_rgb(const Image& gray) {
  if (gray.channels() != 1) throw ShapeError("replicate_rgb expects a single-channel image");
  Image out;
  for (int c = 0; c < 3; ++c) out.planes.push_back(gray.planes[0]);
  return out;
}

}  // namespace fpstain::datagen
