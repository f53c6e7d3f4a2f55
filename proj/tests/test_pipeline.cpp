#include <doctest.h>

#include <cstring>
#include <unistd.h>

#include "fpstain/io.hpp"
#include "fpstain/pipeline.hpp"
#include "support.hpp"

using namespace fpstain;
using namespace fpstain::pipeline;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("fpstain_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Image random_image(int channels, int h, int w, std::uint64_t seed) {
  Image img;
  for (int c = 0; c < channels; ++c) img.planes.push_back(testsupport::random_plane(h, w, seed + c).round());
  return img;
}

bool same_bits(const ComplexPlane& a, const ComplexPlane& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const float ar = static_cast<float>(a.data()[i].real());
    const float br = static_cast<float>(b.data()[i].real());
    const float ai = static_cast<float>(a.data()[i].imag());
    const float bi = static_cast<float>(b.data()[i].imag());
    if (std::memcmp(&ar, &br, 4) != 0 || std::memcmp(&ai, &bi, 4) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("tile counts follow the grid") {
  CHECK(tile_image(Image(Plane::Zero(512, 512)), 512).tiles.size() == 1);
  const auto six = tile_image(Image(Plane::Zero(1024, 1536)), 512);
  REQUIRE(six.tiles.size() == 6);
  CHECK(six.tiles[4].row == 512);
  CHECK(six.tiles[4].col == 512);
  const auto one = tile_image(Image(Plane::Zero(1000, 1000)), 512);
  REQUIRE(one.tiles.size() == 1);
  CHECK(one.tiles[0].row == 0);
  CHECK(one.tiles[0].col == 0);
  CHECK_THROWS_AS(tile_image(Image(Plane::Zero(100, 600)), 512), SizeError);
  CHECK_THROWS_AS(tile_image(Image(Plane::Zero(100, 100)), 32), ConfigError);
}

TEST_CASE("tile and stitch invert each other") {
  const Image img = random_image(3, 192, 256, 1);
  CHECK(stitch_tiles(tile_image(img, 64)) == img);

  const Image ragged = random_image(1, 150, 200, 2);
  const Image back = stitch_tiles(tile_image(ragged, 64));
  CHECK(back.height() == 128);
  CHECK(back.width() == 192);
  CHECK((back.planes[0] == ragged.planes[0].topLeftCorner(128, 192)).all());

  const Image single = random_image(3, 64, 64, 3);
  const auto set = tile_image(single, 64);
  CHECK(set.tiles[0].image == single);
  CHECK(stitch_tiles(set) == single);
}

TEST_CASE("stitched blocks land at their origins") {
  TileSet set;
  set.tile_size = 64;
  set.source_height = 128;
  set.source_width = 192;
  // Reverse order so placement cannot depend on list position.
  for (int i = 5; i >= 0; --i)
    set.tiles.push_back({Image(Plane::Constant(64, 64, 10.0 * i)), (i / 3) * 64, (i % 3) * 64, "x"});
  const Image out = stitch_tiles(set);
  for (int i = 0; i < 6; ++i) CHECK((out.planes[0].block((i / 3) * 64, (i % 3) * 64, 64, 64) == 10.0 * i).all());

  TileSet overlap = set;
  overlap.tiles[0].row = overlap.tiles[1].row;
  overlap.tiles[0].col = overlap.tiles[1].col;
  CHECK_THROWS_AS(stitch_tiles(overlap), ConsistencyError);

  TileSet missing = set;
  missing.tiles.pop_back();
  CHECK_THROWS_AS(stitch_tiles(missing), ConsistencyError);

  TileSet offgrid = set;
  offgrid.tiles[2].col += 5;
  CHECK_THROWS_AS(stitch_tiles(offgrid), ConsistencyError);
}

TEST_CASE("tiles survive a directory round trip") {
  TempDir dir("tiles");
  const Image img = random_image(3, 128, 128, 4);
  const auto set = tile_image(img, 64, "slide");
  write_tiles(dir.path, set);
  const auto back = read_tiles(dir.path);
  CHECK(back.tiles.size() == 4);
  CHECK(stitch_tiles(back) == img);
  CHECK(back.tiles[1].source_id == "slide");
}

TEST_CASE("CFLD round trip is bit exact") {
  TempDir dir("cfld");
  ComplexPlane data = testsupport::random_field(64, 64, 5).unaryExpr([](std::complex<double> v) {
    return std::complex<double>(static_cast<float>(v.real()), static_cast<float>(v.imag()));
  });
  data(0, 0) = {-0.0, 0.0};
  data(0, 1) = {0.0, -0.0};
  data(1, 0) = {std::numeric_limits<float>::denorm_min(), -std::numeric_limits<float>::max()};
  const optics::ComplexField field(data, 0.375, 0.472);
  io::write_cfld(field, dir.path / "f.cfld");
  const auto back = io::read_cfld(dir.path / "f.cfld");
  CHECK(same_bits(back.data, data));
  CHECK(std::signbit(back.data(0, 0).real()));
  CHECK(std::signbit(back.data(0, 1).imag()));
  CHECK(back.pixel_pitch_um == 0.375);
  CHECK(back.wavelength_um == 0.472);

  io::CfldFile multi;
  multi.channels = {data, data * 2.0, data * -1.0};
  const auto decoded = io::decode_cfld(io::encode_cfld(multi));
  REQUIRE(decoded.channels.size() == 3);
  CHECK(same_bits(decoded.channels[2], multi.channels[2]));
}

TEST_CASE("CFLD format errors carry offsets") {
  io::CfldFile file;
  file.channels = {ComplexPlane::Ones(4, 4)};
  std::string bytes = io::encode_cfld(file);
  CHECK(bytes.size() == 32 + 16 * 8);

  std::string bad = bytes;
  bad.replace(0, 4, "XXXX");
  try {
    io::decode_cfld(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  std::string four = bytes;
  const std::uint32_t channels = 4;
  std::memcpy(four.data() + 12, &channels, 4);
  CHECK_THROWS_AS(io::decode_cfld(four), FormatError);

  try {
    io::decode_cfld(bytes.substr(0, 10));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
}

TEST_CASE("network normalization") {
  Plane v(1, 3);
  v << 0.0, 127.5, 255.0;
  const Plane n = normalize_for_network(v, NormKind::Intensity8);
  CHECK(n(0, 0) == -1.0);
  CHECK(n(0, 1) == 0.0);
  CHECK(n(0, 2) == 1.0);

  const Plane all = Eigen::RowVectorXd::LinSpaced(256, 0.0, 255.0).array();
  const Plane back = denormalize_from_network(normalize_for_network(all, NormKind::Intensity8), NormKind::Intensity8);
  CHECK((back - all).abs().maxCoeff() < 1.0);

  Plane phase(1, 3);
  phase << -std::numbers::pi, 0.0, 1.0;
  const Plane pn = normalize_for_network(phase, NormKind::Phase);
  CHECK(pn(0, 0) == -1.0);
  CHECK(pn(0, 1) == 0.0);
  const Plane pb = denormalize_from_network(pn, NormKind::Phase);
  CHECK(pb(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pb(0, 0) == -std::numbers::pi);

  phase(0, 2) = 4.0;
  CHECK_THROWS_AS(normalize_for_network(phase, NormKind::Phase), RangeError);
  Plane nan = Plane::Zero(1, 1);
  nan(0, 0) = std::nan("");
  CHECK_THROWS_AS(normalize_for_network(nan, NormKind::Intensity8), NumericError);
  CHECK(parse_norm_kind("phase") == NormKind::Phase);
  CHECK_THROWS_AS(parse_norm_kind("log"), ConfigError);
}

TEST_CASE("PNG round trips at 8 and 16 bits") {
  TempDir dir("png");
  const Image color = random_image(3, 20, 30, 6);
  io::write_png(dir.path / "c.png", color, 8);
  io::PngInfo info;
  CHECK(io::read_png(dir.path / "c.png", &info) == color);
  CHECK(info.channels == 3);
  CHECK(info.bit_depth == 8);

  const Image deep(testsupport::random_plane(17, 9, 7, 0.0, 65535.0).round());
  io::write_png(dir.path / "d.png", deep, 16);
  CHECK(io::read_png(dir.path / "d.png", &info) == deep);
  CHECK(info.bit_depth == 16);

  Image clamped(Plane::Constant(2, 2, 300.0));
  clamped.planes[0](0, 0) = -4.0;
  io::write_png(dir.path / "e.png", clamped, 8);
  const Image e = io::read_png(dir.path / "e.png");
  CHECK(e.planes[0](0, 0) == 0.0);
  CHECK(e.planes[0](1, 1) == 255.0);

  io::atomic_write(dir.path / "junk.png", "not a png");
  CHECK_THROWS_AS(io::read_png(dir.path / "junk.png"), FormatError);
}

TEST_CASE("dataset manifests") {
  TempDir dir("dataset");
  const fs::path a = dir.path / "a";
  const fs::path b = dir.path / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  for (const char* name : {"t2.png", "t10.png", "t1.png"}) io::write_png(a / name, random_image(1, 8, 8, 8), 8);
  for (const char* name : {"z.png", "y.png"}) io::write_png(b / name, random_image(3, 8, 8, 9), 8);

  const auto m = build_dataset(a, b);
  REQUIRE(m.domain_a.size() == 3);
  CHECK(m.domain_b.size() == 2);
  CHECK(m.channels_a == 1);
  CHECK(m.channels_b == 3);
  CHECK(fs::path(m.domain_a[0]).filename() == "t1.png");
  CHECK(fs::path(m.domain_a[1]).filename() == "t10.png");
  CHECK(fs::path(m.domain_b[0]).filename() == "y.png");
  CHECK(build_dataset(a, b).to_text() == m.to_text());

  const auto parsed = DatasetManifest::from_text(m.to_text());
  CHECK(parsed.domain_a == m.domain_a);
  CHECK(parsed.domain_b == m.domain_b);
  CHECK(load_domain(parsed.domain_b).size() == 2);

  io::write_png(a / "t3.png", random_image(3, 8, 8, 10), 8);
  try {
    build_dataset(a, b);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("t3.png") != std::string::npos);
  }

  const fs::path empty = dir.path / "empty";
  fs::create_directories(empty);
  CHECK_THROWS_AS(build_dataset(empty, b), EmptyInputError);
}
