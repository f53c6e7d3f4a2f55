#include "fpstain/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>

#include "fpstain/io.hpp"

namespace fpstain::pipeline {

TileSet tile_image(const Image& image, int tile_size, const std::string& source_id) {
  if (tile_size < kMinTileSize) throw ConfigError("tile size must be at least " + std::to_string(kMinTileSize));
  if (image.channels() < 1) throw ShapeError("cannot tile an empty image");
  if (image.height() < tile_size || image.width() < tile_size)
    throw SizeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                    " is smaller than the tile size " + std::to_string(tile_size));
  TileSet set;
  set.tile_size = tile_size;
  set.source_height = image.height();
  set.source_width = image.width();
  for (int r = 0; r + tile_size <= image.height(); r += tile_size) {
    for (int c = 0; c + tile_size <= image.width(); c += tile_size) {
      Tile tile;
      tile.row = r;
      tile.col = c;
      tile.source_id = source_id;
      for (const auto& plane : image.planes) tile.image.planes.push_back(plane.block(r, c, tile_size, tile_size));
      set.tiles.push_back(std::move(tile));
    }
  }
  return set;
}

Image stitch_tiles(const TileSet& set) {
  if (set.tiles.empty()) throw EmptyInputError("no tiles to stitch");
  const int ts = set.tile_size;
  const int grid_rows = set.source_height / ts;
  const int grid_cols = set.source_width / ts;
  if (grid_rows < 1 || grid_cols < 1) throw ConsistencyError("tile grid is empty for the recorded source size");
  const int channels = set.tiles.front().image.channels();
  std::vector<int> covered(static_cast<std::size_t>(grid_rows) * grid_cols, 0);
  Image out(channels, grid_rows * ts, grid_cols * ts);
  for (const auto& tile : set.tiles) {
    if (tile.row % ts != 0 || tile.col % ts != 0)
      throw ConsistencyError("tile origin (" + std::to_string(tile.row) + ", " + std::to_string(tile.col) +
                             ") is off the tile grid");
    const int gr = tile.row / ts;
    const int gc = tile.col / ts;
    if (gr < 0 || gc < 0 || gr >= grid_rows || gc >= grid_cols)
      throw ConsistencyError("tile origin (" + std::to_string(tile.row) + ", " + std::to_string(tile.col) +
                             ") lies outside the source");
    if (tile.image.channels() != channels || tile.image.height() != ts || tile.image.width() != ts)
      throw ShapeError("tile at (" + std::to_string(tile.row) + ", " + std::to_string(tile.col) +
                       ") has the wrong shape");
    if (covered[gr * grid_cols + gc]++)
      throw ConsistencyError("tiles overlap at origin (" + std::to_string(tile.row) + ", " +
                             std::to_string(tile.col) + ")");
    for (int ch = 0; ch < channels; ++ch) out.planes[ch].block(tile.row, tile.col, ts, ts) = tile.image.planes[ch];
  }
  for (int i = 0; i < grid_rows * grid_cols; ++i)
    if (!covered[i])
      throw ConsistencyError("missing tile at origin (" + std::to_string((i / grid_cols) * ts) + ", " +
                             std::to_string((i % grid_cols) * ts) + ")");
  return out;
}

void write_tiles(const fs::path& dir, const TileSet& set, int bit_depth) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "tile_size = " << set.tile_size << "\n";
  manifest << "source_height = " << set.source_height << "\n";
  manifest << "source_width = " << set.source_width << "\n";
  manifest << "[tiles]\n";
  for (const auto& tile : set.tiles) {
    char name[48];
    std::snprintf(name, sizeof name, "tile_r%06d_c%06d.png", tile.row, tile.col);
    io::write_png(dir / name, tile.image, bit_depth);
    manifest << name << ' ' << tile.row << ' ' << tile.col << ' ' << (tile.source_id.empty() ? "-" : tile.source_id)
             << "\n";
  }
  io::atomic_write(dir / "tiles.txt", manifest.str());
}

TileSet read_tiles(const fs::path& dir) {
  const fs::path manifest = dir / "tiles.txt";
  if (!fs::exists(manifest)) throw ConfigError("no tile manifest at " + manifest.string());
  std::istringstream in(io::read_file(manifest));
  TileSet set;
  std::string line;
  bool in_tiles = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == "[tiles]") {
      in_tiles = true;
      continue;
    }
    if (!in_tiles) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed tile manifest line: " + line);
      const std::string key = line.substr(0, line.find_last_not_of(' ', eq - 1) + 1);
      const int value = std::stoi(line.substr(eq + 1));
      if (key == "tile_size") set.tile_size = value;
      else if (key == "source_height") set.source_height = value;
      else if (key == "source_width") set.source_width = value;
      continue;
    }
    std::istringstream fields(line);
    std::string name, source;
    Tile tile;
    if (!(fields >> name >> tile.row >> tile.col >> source)) throw ConfigError("malformed tile entry: " + line);
    tile.source_id = source == "-" ? "" : source;
    tile.image = io::read_png(dir / name);
    set.tiles.push_back(std::move(tile));
  }
  return set;
}

NormKind parse_norm_kind(const std::string& name) {
  if (name == "intensity8" || name == "intensity") return NormKind::Intensity8;
  if (name == "phase") return NormKind::Phase;
  throw ConfigError("unknown normalization kind '" + name + "' (expected intensity8 or phase)");
}

Plane normalize_for_network(const Plane& plane, NormKind kind) {
  if (!plane.isFinite().all()) throw NumericError("cannot normalize non-finite values");
  if (kind == NormKind::Intensity8) return plane / 127.5 - 1.0;
  if ((plane.abs() > std::numbers::pi).any()) throw RangeError("phase values must lie in [-pi, pi]");
  return plane / std::numbers::pi;
}

Image normalize_for_network(const Image& image, NormKind kind) {
  Image out;
  for (const auto& plane : image.planes) out.planes.push_back(normalize_for_network(plane, kind));
  return out;
}

Plane denormalize_from_network(const Plane& plane, NormKind kind) {
  if (kind == NormKind::Intensity8) return (plane + 1.0) * 127.5;
  return plane * std::numbers::pi;
}

Image denormalize_from_network(const Image& image, NormKind kind) {
  Image out;
  for (const auto& plane : image.planes) out.planes.push_back(denormalize_from_network(plane, kind));
  return out;
}

std::string DatasetManifest::to_text() const {
  std::ostringstream out;
  out << "# unpaired dataset; channels_a=" << channels_a << " channels_b=" << channels_b << "\n";
  out << "[domain_a]\n";
  for (const auto& p : domain_a) out << p << "\n";
  out << "[domain_b]\n";
  for (const auto& p : domain_b) out << p << "\n";
  return out.str();
}

DatasetManifest DatasetManifest::from_text(const std::string& text) {
  DatasetManifest manifest;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string>* section = nullptr;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::sscanf(line.c_str(), "# unpaired dataset; channels_a=%d channels_b=%d", &manifest.channels_a,
                  &manifest.channels_b);
      continue;
    }
    if (line == "[domain_a]") section = &manifest.domain_a;
    else if (line == "[domain_b]") section = &manifest.domain_b;
    else if (!section) throw ConfigError("dataset manifest entry outside a section: " + line);
    else section->push_back(line);
  }
  return manifest;
}

namespace {

std::pair<std::vector<std::string>, int> scan_domain(const fs::path& dir, const char* label) {
  const auto files = io::list_png(dir);
  if (files.empty()) throw EmptyInputError(std::string(label) + " directory " + dir.string() + " has no PNG images");
  std::vector<std::string> entries;
  int channels = -1;
  for (const auto& file : files) {
    const auto info = io::probe_png(file);
    if (channels < 0) channels = info.channels;
    if (info.channels != channels)
      throw ConfigError(std::string(label) + " mixes channel counts: " + file.string() + " has " +
                        std::to_string(info.channels) + " channel(s), expected " + std::to_string(channels));
    entries.push_back(file.string());
  }
  return {entries, channels};
}

}  // namespace

DatasetManifest build_dataset(const fs::path& dir_a, const fs::path& dir_b) {
  DatasetManifest manifest;
  std::tie(manifest.domain_a, manifest.channels_a) = scan_domain(dir_a, "domain A");
  std::tie(manifest.domain_b, manifest.channels_b) = scan_domain(dir_b, "domain B");
  return manifest;
}

std::vector<Image> load_domain(const std::vector<std::string>& entries) {
  std::vector<Image> images;
  images.reserve(entries.size());
  for (const auto& path : entries) {
    io::PngInfo info;
    Image img = io::read_png(path, &info);
    if (info.bit_depth == 16)
      for (auto& plane : img.planes) plane = plane / 257.0;
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace fpstain::pipeline
