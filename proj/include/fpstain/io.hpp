#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpstain/image.hpp"
#include "fpstain/optics.hpp"

namespace fpstain::io {

namespace fs = std::filesystem;

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
void atomic_write(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

struct PngInfo {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
};

/// Decodes gray, gray+alpha, RGB or RGBA PNGs (alpha dropped). Values keep
/// their native range (0..255 or 0..65535).
Image read_png(const fs::path& path, PngInfo* info = nullptr);
PngInfo probe_png(const fs::path& path);

/// Encodes a 1- or 3-channel image; values are rounded and clamped to the
/// range of `bit_depth` (8 or 16).
std::string encode_png(const Image& image, int bit_depth);
void write_png(const fs::path& path, const Image& image, int bit_depth = 8);

/// Multi-channel complex field file: "CFD1", u32 width, u32 height,
/// u32 channels, f64 pitch, f64 wavelength, then interleaved f32 (re, im).
struct CfldFile {
  double pixel_pitch_um = 1.0;
  double wavelength_um = 0.532;
  std::vector<ComplexPlane> channels;
};

std::string encode_cfld(const CfldFile& file);
CfldFile decode_cfld(const std::string& bytes);
void write_cfld(const optics::ComplexField& field, const fs::path& path);
void write_cfld(const CfldFile& file, const fs::path& path);
/// Reads a CFLD file; multi-channel files return their first channel.
optics::ComplexField read_cfld(const fs::path& path);
CfldFile read_cfld_file(const fs::path& path);

/// Acquisition stack directory: capture_NNNN.png (16-bit) plus stack.txt.
void write_stack(const fs::path& dir, const optics::AcquisitionStack& stack,
                 const optics::IlluminationGeometry& geometry);

struct StackOnDisk {
  optics::AcquisitionStack stack;
  optics::IlluminationGeometry geometry;
};

StackOnDisk read_stack(const fs::path& dir);

/// Regular files with a .png extension, sorted lexicographically by name.
std::vector<fs::path> list_png(const fs::path& dir);

}  // namespace fpstain::io
