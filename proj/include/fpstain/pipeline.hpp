#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fpstain/image.hpp"

// Dataset construction and image plumbing shared by the CLI and training.

namespace fpstain::pipeline {

namespace fs = std::filesystem;

struct Tile {
  Image image;
  int row = 0;  ///< origin, pixels
  int col = 0;
  std::string source_id;
};

struct TileSet {
  std::vector<Tile> tiles;
  int tile_size = 512;
  int source_height = 0;
  int source_width = 0;
};

constexpr int kMinTileSize = 64;

/// Non-overlapping grid tiling in row-major order; trailing partial rows and
/// columns are dropped.
TileSet tile_image(const Image& image, int tile_size, const std::string& source_id = "");

/// Reassembles tiles at their origins into a (rows/tile)*tile by
/// (cols/tile)*tile image. Every grid cell must be covered exactly once.
Image stitch_tiles(const TileSet& tiles);

/// Writes tile_rRRRRR_cCCCCC.png files plus tiles.txt to `dir`.
void write_tiles(const fs::path& dir, const TileSet& tiles, int bit_depth = 8);
TileSet read_tiles(const fs::path& dir);

enum class NormKind { Intensity8, Phase };

NormKind parse_norm_kind(const std::string& name);

/// intensity8: v / 127.5 - 1; phase: v / pi. Phase outside [-pi, pi] is a
/// range error.
Plane normalize_for_network(const Plane& plane, NormKind kind);
Image normalize_for_network(const Image& image, NormKind kind);
Plane denormalize_from_network(const Plane& plane, NormKind kind);
Image denormalize_from_network(const Image& image, NormKind kind);

struct DatasetManifest {
  std::vector<std::string> domain_a;
  std::vector<std::string> domain_b;
  int channels_a = 0;
  int channels_b = 0;

  /// `[domain_a]` / `[domain_b]` sections, one path per line.
  std::string to_text() const;
  static DatasetManifest from_text(const std::string& text);
};

/// Scans two directories of PNGs (lexicographic order), validating that
/// channel counts are uniform within each domain. No pairing is formed.
DatasetManifest build_dataset(const fs::path& dir_a, const fs::path& dir_b);

/// Loads every entry of one domain as an image in native 8-bit range.
std::vector<Image> load_domain(const std::vector<std::string>& entries);

}  // namespace fpstain::pipeline
