#include <doctest.h>

#include "fpstain/optics.hpp"
#include "support.hpp"

using namespace fpstain;
using namespace fpstain::optics;
using testsupport::kPi;

namespace {

IlluminationGeometry custom(std::vector<LedPosition> leds, double height = 80.0) {
  IlluminationGeometry g;
  g.leds = std::move(leds);
  g.array_height_mm = height;
  return g;
}

// 64x64 object at 0.375 um, 16x16 captures at 1.5 um.
constexpr int kObject = 64;
constexpr int kCapture = 16;
constexpr double kCapturePitch = 1.5;
constexpr double kObjectPitch = kCapturePitch / 4.0;

PupilFunction small_pupil(double na = 0.1, double wavelength = 0.532) {
  return make_pupil(na, wavelength, kCapture, kCapture, kCapturePitch);
}

ComplexField field_of(ComplexPlane data, double wavelength = 0.532) {
  return ComplexField(std::move(data), kObjectPitch, wavelength);
}

}  // namespace

TEST_CASE("illumination wavevector follows the LED direction cosines") {
  const auto g = custom({{0, 0}, {4, 0}, {-4, -3}, {4, 3}, {30, -20}});
  const Wavevector center = illumination_wavevector(0, g, Channel::Green);
  CHECK(center.kx == 0.0);
  CHECK(center.ky == 0.0);

  const Wavevector k = illumination_wavevector(1, g, Channel::Green);
  const double expected = (2.0 * kPi / 0.532) * (4.0 / std::sqrt(4.0 * 4.0 + 80.0 * 80.0));
  CHECK(k.kx == doctest::Approx(expected).epsilon(1e-14));
  CHECK(k.kx == doctest::Approx(0.5897).epsilon(1e-4));
  CHECK(k.ky == 0.0);

  const Wavevector a = illumination_wavevector(2, g, Channel::Red);
  const Wavevector b = illumination_wavevector(3, g, Channel::Red);
  CHECK(a.kx == -b.kx);
  CHECK(a.ky == -b.ky);

  for (Channel ch : {Channel::Red, Channel::Green, Channel::Blue})
    for (int i = 0; i < g.size(); ++i) CHECK(illumination_wavevector(i, g, ch).norm() < 2.0 * kPi / g.wavelength(ch));

  CHECK_THROWS_AS(illumination_wavevector(5, g, Channel::Green), IndexError);
  CHECK_THROWS_AS(illumination_wavevector(-1, g, Channel::Green), IndexError);
}

TEST_CASE("default geometry is a centered 15x15 grid") {
  const auto g = IlluminationGeometry::default_grid();
  REQUIRE(g.size() == 225);
  CHECK(g.leds[112].x_mm == 0.0);
  CHECK(g.leds[112].y_mm == 0.0);
  CHECK(g.leds[0].x_mm == -28.0);
  CHECK(g.leds[0].y_mm == -28.0);
  const double corner = std::sin(std::atan(std::sqrt(2.0) * 28.0 / 80.0));
  CHECK(g.illumination_na(0) == doctest::Approx(corner).epsilon(1e-14));
  CHECK_THROWS_AS(custom({}).validate(), ConfigError);
  CHECK_THROWS_AS(custom({{0, 0}}, 0.0).validate(), ConfigError);
}

TEST_CASE("ideal pupil is a unit disk of radius NA / wavelength") {
  const auto p = small_pupil();
  const double df = 1.0 / (kCapture * kCapturePitch);
  for (int r = 0; r < kCapture; ++r) {
    for (int c = 0; c < kCapture; ++c) {
      const double fx = (c - kCapture / 2) * df;
      const double fy = (r - kCapture / 2) * df;
      const bool inside = std::hypot(fx, fy) <= 0.1 / 0.532;
      CHECK(std::abs(p.grid(r, c)) == (inside ? 1.0 : 0.0));
      CHECK(p.aberration_phase(r, c) == 0.0);
    }
  }
}

TEST_CASE("defocus adds kz*dz on the support only") {
  const auto p = small_pupil();
  const auto same = defocus_pupil(p, 0.0);
  CHECK((same.grid == p.grid).all());

  const auto d = defocus_pupil(p, 10.0);
  const std::complex<double> dc = d.grid(kCapture / 2, kCapture / 2);
  CHECK(std::abs(testsupport::wrap(std::arg(dc) - (2.0 * kPi / 0.532) * 10.0)) < 1e-9);
  CHECK(((d.grid.abs() - p.grid.abs()).abs() < 1e-12).all());

  for (double dz1 : {-7.0, 3.5})
    for (double dz2 : {2.0, -11.0}) {
      const auto twice = defocus_pupil(defocus_pupil(p, dz1), dz2);
      const auto once = defocus_pupil(p, dz1 + dz2);
      for (int r = 0; r < kCapture; ++r)
        for (int c = 0; c < kCapture; ++c) {
          if (std::abs(once.grid(r, c)) == 0.0) {
            CHECK(std::abs(twice.grid(r, c)) == 0.0);
            continue;
          }
          CHECK(std::abs(testsupport::wrap(std::arg(twice.grid(r, c)) - std::arg(once.grid(r, c)))) < 1e-6);
        }
    }
}

TEST_CASE("capture of trivial objects") {
  const auto pupil = small_pupil();
  const Wavevector on_axis{};
  const Plane zero = simulate_capture(field_of(ComplexPlane::Zero(kObject, kObject)), pupil, on_axis, kCapture);
  CHECK((zero == 0.0).all());

  const double c = 0.7;
  const Plane flat = simulate_capture(field_of(ComplexPlane::Constant(kObject, kObject, c)), pupil, on_axis, kCapture);
  CHECK(((flat - c * c).abs() <= 1e-6 * c * c).all());

  // Illumination NA 0.148 exceeds the 0.1 objective NA: only dark field.
  const auto g = custom({{12, 0}});
  const Plane dark = simulate_capture(field_of(ComplexPlane::Constant(kObject, kObject, c)), pupil,
                                      illumination_wavevector(0, g, Channel::Green), kCapture);
  CHECK(dark.sum() < 1e-9 * flat.sum());
}

TEST_CASE("capture energy equals the passband energy of the object spectrum") {
  const ComplexPlane object = testsupport::random_field(kObject, kObject, 11);
  const ComplexPlane spectrum = testsupport::naive_centered_dft(object);
  const auto pupil = small_pupil();
  const auto g = custom({{0, 0}, {4, 0}, {-4, 8}});
  const double df = 1.0 / (kObject * kObjectPitch);
  const double n4 = std::pow(static_cast<double>(kObject), 4);
  for (int led = 0; led < g.size(); ++led) {
    const Wavevector k = illumination_wavevector(led, g, Channel::Green);
    const Plane capture = simulate_capture(field_of(object), pupil, k, kCapture);
    CHECK((capture >= 0.0).all());
    const long dc = std::lround(k.kx / (2.0 * kPi) / df);
    const long dr = std::lround(k.ky / (2.0 * kPi) / df);
    double band = 0.0;
    for (int u = 0; u < kObject; ++u)
      for (int v = 0; v < kObject; ++v) {
        const double fx = (v - kObject / 2 - dc) * df;
        const double fy = (u - kObject / 2 - dr) * df;
        if (std::hypot(fx, fy) <= pupil.cutoff()) band += std::norm(spectrum(u, v));
      }
    const double energy = capture.sum() / (kCapture * kCapture);
    CHECK(energy <= band / n4 * (1.0 + 1e-4));
    CHECK(energy == doctest::Approx(band / n4).epsilon(1e-4));
  }
}

TEST_CASE("captures add for spectrally disjoint objects") {
  const auto pupil = small_pupil();
  auto plane_wave = [](int fu, int fv, std::complex<double> amp) {
    ComplexPlane p(kObject, kObject);
    for (int r = 0; r < kObject; ++r)
      for (int c = 0; c < kObject; ++c)
        p(r, c) = amp * std::polar(1.0, 2.0 * kPi * (static_cast<double>(fu) * r + static_cast<double>(fv) * c) / kObject);
    return p;
  };
  const ComplexPlane a = plane_wave(1, 2, {0.8, 0.1}) + plane_wave(0, 0, 0.5);
  const ComplexPlane out_of_band = plane_wave(15, -12, {0.3, -0.4});
  const Wavevector k{};
  const Plane ia = simulate_capture(field_of(a), pupil, k, kCapture);
  const Plane ib = simulate_capture(field_of(out_of_band), pupil, k, kCapture);
  const Plane iab = simulate_capture(field_of(a + out_of_band), pupil, k, kCapture);
  CHECK(((iab - (ia + ib)).abs() <= 1e-5 * ia.maxCoeff()).all());

  // Two in-band tones: pointwise interference, but total energy adds.
  const ComplexPlane b = plane_wave(-2, 1, {0.2, 0.6});
  const Plane ib2 = simulate_capture(field_of(b), pupil, k, kCapture);
  const Plane iab2 = simulate_capture(field_of(a + b), pupil, k, kCapture);
  CHECK(iab2.sum() == doctest::Approx(ia.sum() + ib2.sum()).epsilon(1e-10));
}

TEST_CASE("passbands beyond the object spectrum are rejected") {
  const auto pupil = small_pupil();
  // Same field of view but no upsampling: any tilt walks off the grid.
  const ComplexField coarse(ComplexPlane::Ones(kCapture, kCapture), kCapturePitch, 0.532);
  const auto g = custom({{0, 0}, {8, 0}});
  CHECK_NOTHROW(simulate_capture(coarse, pupil, illumination_wavevector(0, g, Channel::Green), kCapture));
  CHECK_THROWS_AS(simulate_capture(coarse, pupil, illumination_wavevector(1, g, Channel::Green), kCapture),
                  OutOfBandError);
  CHECK_THROWS_AS(simulate_capture(field_of(ComplexPlane::Ones(kObject, kObject)), pupil, {}, 8), ShapeError);
}

TEST_CASE("stack holds one capture per LED and channel") {
  const auto g = IlluminationGeometry::default_grid();
  const auto pupil = small_pupil();
  const ComplexPlane object = testsupport::random_field(kObject, kObject, 3) * 0.1 + 1.0;
  std::map<Channel, ComplexField> objects;
  for (Channel ch : {Channel::Red, Channel::Green, Channel::Blue})
    objects[ch] = ComplexField(object, kObjectPitch, g.wavelength(ch));

  const auto green = simulate_stack(objects, g, pupil, {Channel::Green});
  const auto rgb = simulate_stack(objects, g, pupil, {Channel::Red, Channel::Green, Channel::Blue});
  CHECK(green.captures.size() == 225);
  CHECK(rgb.captures.size() == 3 * green.captures.size());
  CHECK_NOTHROW(rgb.validate());

  for (const auto& cap : rgb.captures) {
    const double lambda = g.wavelength(cap.channel);
    CHECK(cap.k_illum.norm() == doctest::Approx(2.0 * kPi / lambda * g.illumination_na(cap.led_index)).epsilon(1e-12));
  }

  // On-axis, channels differ only through the rebuilt pupil.
  const int center = 112;
  for (std::size_t i = 0; i < rgb.captures.size(); ++i) {
    const auto& cap = rgb.captures[i];
    if (cap.led_index != center) continue;
    const Plane oracle = simulate_capture(objects.at(cap.channel),
                                          pupil_for_channel(pupil, g.wavelength(cap.channel)), {}, kCapture);
    CHECK((cap.intensity == oracle).all());
  }

  objects.erase(Channel::Blue);
  CHECK_THROWS_AS(simulate_stack(objects, g, pupil, {Channel::Blue}), ConfigError);
}

TEST_CASE("artifact injection") {
  const Plane img = testsupport::random_plane(128, 128, 5, 0.0, 1.0);
  ArtifactConfig none;
  none.density = 0.0;
  none.speckle_amplitude = 0.0;
  CHECK((inject_coherent_artifacts(img, 9, none) == img).all());

  ArtifactConfig cfg;
  cfg.density = 0.2;
  cfg.speckle_amplitude = 0.5;
  const Plane a = inject_coherent_artifacts(img, 42, cfg);
  const Plane b = inject_coherent_artifacts(img, 42, cfg);
  CHECK((a == b).all());
  CHECK(a.isFinite().all());
  CHECK((a != img).any());
  CHECK((inject_coherent_artifacts(img, 43, cfg) != a).any());

  const ComplexPlane field = testsupport::random_field(64, 64, 8);
  CHECK((inject_coherent_artifacts(field, 1, cfg) == inject_coherent_artifacts(field, 1, cfg)).all());

  ArtifactConfig bad;
  bad.density = -0.1;
  CHECK_THROWS_AS(inject_coherent_artifacts(img, 1, bad), ConfigError);
  bad.density = 1.0;
  CHECK_THROWS_AS(inject_coherent_artifacts(img, 1, bad), ConfigError);
}

TEST_CASE("dust placement replays from the seed") {
  ArtifactConfig cfg;
  cfg.density = 0.01;
  const std::uint64_t seed = 20240611;
  const auto disks = plan_dust(512, 512, seed, cfg);
  REQUIRE(disks.size() == 3);  // round(0.01 * 16 * 16)

  std::mt19937_64 replay(seed);
  for (const auto& d : disks) {
    CHECK(d.row == static_cast<int>(replay() % 512));
    CHECK(d.col == static_cast<int>(replay() % 512));
    CHECK(d.radius == 2 + static_cast<int>(replay() % 5));
  }

  cfg.density = 0.5;
  for (const auto& d : plan_dust(256, 320, 7, cfg)) {
    CHECK(d.radius >= 2);
    CHECK(d.radius <= 6);
    CHECK(d.row < 256);
    CHECK(d.col < 320);
  }
}
