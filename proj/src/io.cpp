#include "fpstain/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

namespace fpstain::io {
namespace {

// ---- little-endian helpers ------------------------------------------------

template <typename T>
void put(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& offset, const char* what) {
  if (offset + sizeof(T) > in.size()) throw FormatError(std::string("truncated CFLD file while reading ") + what, offset);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  offset += sizeof(T);
  return value;
}

// ---- libpng glue ----------------------------------------------------------

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void png_read_bytes(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
  cursor->offset += length;
}

void png_write_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  std::longjmp(png_jmpbuf(png), 1);
}

void png_warn(png_structp, png_const_charp) {}

Image decode_png(const std::string& bytes, const fs::path& path, PngInfo* info, bool header_only) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw FormatError("not a PNG file: " + path.string(), 0);
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop pinfo = png_create_info_struct(png);
  ReadCursor cursor{&bytes, 0};
  Image image;
  // Locals touched after setjmp must not live in registers.
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_set_read_fn(png, &cursor, png_read_bytes);
    png_read_info(png, pinfo);
    const png_uint_32 width = png_get_image_width(png, pinfo);
    const png_uint_32 height = png_get_image_height(png, pinfo);
    int depth = png_get_bit_depth(png, pinfo);
    const int color = png_get_color_type(png, pinfo);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, pinfo, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, pinfo);
    depth = png_get_bit_depth(png, pinfo);
    const int stored = png_get_channels(png, pinfo);
    const int channels = (stored >= 3) ? 3 : 1;
    if (info) *info = {static_cast<int>(width), static_cast<int>(height), channels, depth};
    if (!header_only) {
      std::vector<unsigned char> row(png_get_rowbytes(png, pinfo));
      image = Image(channels, static_cast<int>(height), static_cast<int>(width));
      for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < width; ++x) {
          for (int c = 0; c < channels; ++c) {
            const std::size_t idx = static_cast<std::size_t>(x) * stored + c;
            double v;
            if (depth == 16) {
              std::uint16_t s;
              std::memcpy(&s, row.data() + 2 * idx, 2);
              v = s;
            } else {
              v = row[idx];
            }
            image.planes[c](y, x) = v;
          }
        }
      }
    }
  }
  png_destroy_read_struct(&png, &pinfo, nullptr);
  if (failed) throw FormatError("cannot decode PNG " + path.string() + ": " + message, cursor.offset);
  return image;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void atomic_write(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".partial-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("failed writing " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot move output into place at " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Image read_png(const fs::path& path, PngInfo* info) { return decode_png(read_file(path), path, info, false); }

PngInfo probe_png(const fs::path& path) {
  PngInfo info;
  decode_png(read_file(path), path, &info, true);
  return info;
}

std::string encode_png(const Image& image, int bit_depth) {
  if (image.channels() != 1 && image.channels() != 3) throw ShapeError("PNG output needs 1 or 3 channels");
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  const int width = image.width();
  const int height = image.height();
  const int channels = image.channels();
  const double top = bit_depth == 8 ? 255.0 : 65535.0;
  std::string out;
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop pinfo = png_create_info_struct(png);
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_set_write_fn(png, &out, png_write_bytes, png_flush_noop);
    png_set_IHDR(png, pinfo, width, height, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, pinfo);
    if (bit_depth == 16) png_set_swap(png);
    const int bytes_per = bit_depth / 8;
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels * bytes_per);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        for (int c = 0; c < channels; ++c) {
          const double v = image.planes[c](y, x);
          const double clamped = std::isfinite(v) ? std::clamp(std::round(v), 0.0, top) : 0.0;
          const std::size_t idx = (static_cast<std::size_t>(x) * channels + c) * bytes_per;
          if (bit_depth == 16) {
            const auto s = static_cast<std::uint16_t>(clamped);
            std::memcpy(row.data() + idx, &s, 2);
          } else {
            row[idx] = static_cast<unsigned char>(clamped);
          }
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &pinfo);
  if (failed) throw Error("PNG encoding failed: " + message);
  return out;
}

void write_png(const fs::path& path, const Image& image, int bit_depth) {
  atomic_write(path, encode_png(image, bit_depth));
}

std::string encode_cfld(const CfldFile& file) {
  if (file.channels.empty()) throw ShapeError("CFLD file needs at least one channel");
  const auto height = static_cast<std::uint32_t>(file.channels.front().rows());
  const auto width = static_cast<std::uint32_t>(file.channels.front().cols());
  for (const auto& ch : file.channels)
    if (ch.rows() != height || ch.cols() != width) throw ShapeError("CFLD channels differ in size");
  std::string out = "CFD1";
  put<std::uint32_t>(out, width);
  put<std::uint32_t>(out, height);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.channels.size()));
  put<double>(out, file.pixel_pitch_um);
  put<double>(out, file.wavelength_um);
  out.reserve(out.size() + file.channels.size() * width * height * 8);
  for (const auto& ch : file.channels) {
    for (std::uint32_t r = 0; r < height; ++r) {
      for (std::uint32_t c = 0; c < width; ++c) {
        put<float>(out, static_cast<float>(ch(r, c).real()));
        put<float>(out, static_cast<float>(ch(r, c).imag()));
      }
    }
  }
  return out;
}

CfldFile decode_cfld(const std::string& bytes) {
  if (bytes.size() < 4) throw FormatError("truncated CFLD file while reading magic", bytes.size());
  if (bytes.compare(0, 4, "CFD1") != 0) throw FormatError("bad CFLD magic", 0);
  std::size_t offset = 4;
  const auto width = get<std::uint32_t>(bytes, offset, "width");
  const auto height = get<std::uint32_t>(bytes, offset, "height");
  const auto channels = get<std::uint32_t>(bytes, offset, "channel count");
  CfldFile file;
  file.pixel_pitch_um = get<double>(bytes, offset, "pixel pitch");
  file.wavelength_um = get<double>(bytes, offset, "wavelength");
  if (width == 0 || height == 0 || channels == 0) throw FormatError("CFLD header declares an empty field", 4);
  const std::uint64_t payload = static_cast<std::uint64_t>(width) * height * channels * 8;
  if (bytes.size() - offset < payload)
    throw FormatError("truncated CFLD payload: header declares " + std::to_string(channels) + " channel(s) of " +
                          std::to_string(width) + "x" + std::to_string(height) + " but only " +
                          std::to_string(bytes.size() - offset) + " payload bytes follow",
                      bytes.size());
  for (std::uint32_t k = 0; k < channels; ++k) {
    ComplexPlane plane(height, width);
    for (std::uint32_t r = 0; r < height; ++r) {
      for (std::uint32_t c = 0; c < width; ++c) {
        const float re = get<float>(bytes, offset, "payload");
        const float im = get<float>(bytes, offset, "payload");
        plane(r, c) = {re, im};
      }
    }
    file.channels.push_back(std::move(plane));
  }
  return file;
}

void write_cfld(const CfldFile& file, const fs::path& path) { atomic_write(path, encode_cfld(file)); }

void write_cfld(const optics::ComplexField& field, const fs::path& path) {
  field.validate();
  write_cfld(CfldFile{field.pixel_pitch_um, field.wavelength_um, {field.data}}, path);
}

CfldFile read_cfld_file(const fs::path& path) { return decode_cfld(read_file(path)); }

optics::ComplexField read_cfld(const fs::path& path) {
  CfldFile file = read_cfld_file(path);
  return optics::ComplexField(std::move(file.channels.front()), file.pixel_pitch_um, file.wavelength_um);
}

void write_stack(const fs::path& dir, const optics::AcquisitionStack& stack,
                 const optics::IlluminationGeometry& geometry) {
  stack.validate();
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# fpstain acquisition stack\n";
  manifest << "format = 1\n";
  manifest << "capture_pitch_um = " << fmt_double(stack.capture_pitch_um) << "\n";
  manifest << "objective_na = " << fmt_double(stack.objective_na) << "\n";
  manifest << "array_height_mm = " << fmt_double(geometry.array_height_mm) << "\n";
  for (const auto& [channel, wl] : geometry.channel_wavelengths)
    manifest << "wavelength_" << optics::channel_letter(channel) << " = " << fmt_double(wl) << "\n";
  for (int i = 0; i < geometry.size(); ++i)
    manifest << "led = " << i << ' ' << fmt_double(geometry.leds[i].x_mm) << ' '
             << fmt_double(geometry.leds[i].y_mm) << "\n";
  manifest << "[captures]\n";
  manifest << "file,led_index,channel,kx,ky,scale\n";
  for (std::size_t i = 0; i < stack.captures.size(); ++i) {
    const auto& capture = stack.captures[i];
    char name[32];
    std::snprintf(name, sizeof name, "capture_%04zu.png", i);
    const double peak = capture.intensity.maxCoeff();
    const double scale = peak > 0.0 ? peak : 1.0;
    write_png(dir / name, Image(Plane(capture.intensity / scale * 65535.0)), 16);
    manifest << name << ',' << capture.led_index << ',' << optics::channel_letter(capture.channel) << ','
             << fmt_double(capture.k_illum.kx) << ',' << fmt_double(capture.k_illum.ky) << ','
             << fmt_double(scale) << "\n";
  }
  atomic_write(dir / "stack.txt", manifest.str());
}

StackOnDisk read_stack(const fs::path& dir) {
  const fs::path manifest_path = dir / "stack.txt";
  if (!fs::exists(manifest_path)) throw ConfigError("no stack manifest at " + manifest_path.string());
  std::istringstream in(read_file(manifest_path));
  StackOnDisk out;
  out.geometry.leds.clear();
  std::map<int, optics::LedPosition> leds;
  std::string line;
  bool in_captures = false;
  bool header_seen = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[captures]") {
      in_captures = true;
      continue;
    }
    if (!in_captures) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("stack manifest line " + std::to_string(line_no) + " is malformed");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "capture_pitch_um") out.stack.capture_pitch_um = std::stod(value);
      else if (key == "objective_na") out.stack.objective_na = std::stod(value);
      else if (key == "array_height_mm") out.geometry.array_height_mm = std::stod(value);
      else if (key.rfind("wavelength_", 0) == 0 && key.size() == 12)
        out.geometry.channel_wavelengths[optics::parse_channel(key[11])] = std::stod(value);
      else if (key == "led") {
        std::istringstream fields(value);
        int index;
        optics::LedPosition pos;
        if (!(fields >> index >> pos.x_mm >> pos.y_mm))
          throw ConfigError("stack manifest line " + std::to_string(line_no) + " has a malformed LED entry");
        leds[index] = pos;
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) cols.push_back(trim(cell));
    if (cols.size() != 6 || cols[2].size() != 1)
      throw ConfigError("stack manifest line " + std::to_string(line_no) + " is malformed");
    optics::Capture capture;
    capture.led_index = std::stoi(cols[1]);
    capture.channel = optics::parse_channel(cols[2][0]);
    capture.k_illum = {std::stod(cols[3]), std::stod(cols[4])};
    const double scale = std::stod(cols[5]);
    const Image img = read_png(dir / cols[0]);
    capture.intensity = img.planes[0] / 65535.0 * scale;
    out.stack.captures.push_back(std::move(capture));
  }
  for (int i = 0; i < static_cast<int>(leds.size()); ++i) {
    auto it = leds.find(i);
    if (it == leds.end()) throw ConfigError("stack manifest LED indices are not contiguous");
    out.geometry.leds.push_back(it->second);
  }
  out.geometry.validate();
  out.stack.validate();
  if (out.stack.captures.empty()) throw EmptyInputError("stack at " + dir.string() + " has no captures");
  return out;
}

std::vector<fs::path> list_png(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

}  // namespace fpstain::io
