#include "fpstain/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "fpstain/datagen.hpp"
#include "fpstain/io.hpp"
#include "fpstain/metrics.hpp"
#include "fpstain/optics.hpp"
#include "fpstain/parallel.hpp"
#include "fpstain/pipeline.hpp"
#include "fpstain/recovery.hpp"
#include "fpstain/translate.hpp"

namespace fpstain::cli {
namespace {

namespace fs = std::filesystem;
using optics::Channel;

constexpr double kPi = std::numbers::pi;

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
  if (!fs::is_directory(path)) throw ConfigError(what + " directory not found: " + path);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// 8-bit range regardless of the file's bit depth.
Image load_png8(const fs::path& path) {
  io::PngInfo info;
  Image img = io::read_png(path, &info);
  if (info.bit_depth == 16)
    for (auto& p : img.planes) p /= 257.0;
  return img;
}

// Stored phase PNGs map [-pi, pi] onto [0, 255].
Image png_to_phase(const Image& img) {
  Image out;
  for (const auto& p : img.planes) out.planes.push_back(p / 255.0 * 2.0 * kPi - kPi);
  return out;
}

Image load_for_domain(const fs::path& path, pipeline::NormKind kind) {
  Image img = load_png8(path);
  return kind == pipeline::NormKind::Phase ? png_to_phase(img) : img;
}

std::pair<int, int> parse_led_grid(const std::string& text) {
  int nx = 0, ny = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%dx%d%c", &nx, &ny, &tail) != 2 || nx < 1 || ny < 1)
    throw ConfigError("--leds expects NxM with positive counts, got '" + text + "'");
  return {nx, ny};
}

std::vector<Channel> parse_channels(const std::string& text) {
  std::vector<Channel> out;
  for (char c : text) {
    const Channel ch = optics::parse_channel(c);
    for (Channel seen : out)
      if (seen == ch) throw ConfigError("channel '" + std::string(1, c) + "' listed twice");
    out.push_back(ch);
  }
  if (out.empty()) throw ConfigError("--channels must name at least one of r, g, b");
  return out;
}

std::vector<translate::Tensor<float>> to_tensors(const std::vector<Image>& images, pipeline::NormKind kind,
                                                 int tile_size) {
  std::vector<translate::Tensor<float>> out;
  for (const auto& img : images) {
    if (tile_size > 0 && (img.height() != tile_size || img.width() != tile_size)) {
      for (const auto& tile : pipeline::tile_image(img, tile_size).tiles)
        out.push_back(translate::to_tensor<float>(pipeline::normalize_for_network(tile.image, kind)));
    } else {
      out.push_back(translate::to_tensor<float>(pipeline::normalize_for_network(img, kind)));
    }
  }
  return out;
}

Image stain_image(const translate::TranslationModel<float>& model, const Image& input, pipeline::NormKind kind,
                  int tile_size) {
  if (tile_size <= 0 || (input.height() == tile_size && input.width() == tile_size))
    return translate::virtual_stain(model, input, kind);
  pipeline::TileSet tiles = pipeline::tile_image(input, tile_size);
  for (auto& tile : tiles.tiles) tile.image = translate::virtual_stain(model, tile.image, kind);
  return pipeline::stitch_tiles(tiles);
}

std::string loss_path_for(const std::string& model_path) {
  fs::path p(model_path);
  return p.replace_extension(".loss.csv").string();
}

// ---- option bundles ---------------------------------------------------------

struct SimulateOpts {
  std::string object, out;
  std::string leds = "15x15";
  double pitch_mm = 4.0, height_mm = 80.0, na = 0.1, defocus_um = 0.0;
  std::string channels = "g";
  int upsampling = 4;
  double wl_r_nm = 632.0, wl_g_nm = 532.0, wl_b_nm = 472.0;
};

struct ReconstructOpts {
  std::string stack, out, init = "mean", refocus;
  int iterations = 10, upsampling = 4;
  bool pupil_recovery = false;
  double object_step = 1.0, pupil_step = 1.0, defocus_um = 0.0;
};

struct ModelOpts {
  int width = 32, res_blocks = 4, edge_kernel = 7, disc_width = 16, disc_depth = 3;
};

struct TrainOpts {
  std::string domain_a, domain_b, out, loss_csv, manifest, norm = "intensity8";
  int epochs = 30, batch_size = 1, buffer = 50, tile_size = 0;
  double lr = 2e-4, beta1 = 0.5, beta2 = 0.999, cycle_weight = 10.0;
  std::uint64_t seed = 0;
  ModelOpts model;
};

struct StainOpts {
  std::string model, input, out, norm = "intensity8";
  int tile_size = 0;
};

struct EvaluateOpts {
  std::vector<std::string> pred, truth, label;
  std::string out;
};

struct TileOpts {
  std::string input, out;
  int tile_size = 512, bit_depth = 0;
};

struct StitchOpts {
  std::string tiles, out;
  int bit_depth = 8;
};

struct DemoOpts {
  std::string out = "demo_out";
  std::uint64_t seed = 0;
  int train_tiles = 24, test_tiles = 8, tile_size = 64, slide_tiles = 2;
  int epochs = 2, batch_size = 4, buffer = 50;
  double lr = 2e-4, cycle_weight = 10.0;
  ModelOpts model{4, 1, 7, 4, 3};
};

void add_model_options(CLI::App* app, ModelOpts& m) {
  app->add_option("--width", m.width, "Generator stem width (channels)")->check(CLI::PositiveNumber);
  app->add_option("--res-blocks", m.res_blocks, "Generator residual blocks")->check(CLI::NonNegativeNumber);
  app->add_option("--edge-kernel", m.edge_kernel, "Generator stem/head kernel size (odd)")->check(CLI::PositiveNumber);
  app->add_option("--disc-width", m.disc_width, "Discriminator first-layer width")->check(CLI::PositiveNumber);
  app->add_option("--disc-depth", m.disc_depth, "Discriminator stride-2 layers")->check(CLI::PositiveNumber);
}

translate::ModelSpec model_spec(const ModelOpts& m, int channels_a, int channels_b) {
  translate::ModelSpec spec;
  spec.domain_a_channels = channels_a;
  spec.domain_b_channels = channels_b;
  spec.generator_width = m.width;
  spec.res_blocks = m.res_blocks;
  spec.edge_kernel = m.edge_kernel;
  spec.discriminator_width = m.disc_width;
  spec.discriminator_depth = m.disc_depth;
  return spec;
}

// ---- subcommands --------------------------------------------------------------

void run_simulate(const SimulateOpts& o, std::ostream& out) {
  require_file(o.object, "object file");
  if (o.upsampling < 1) throw ConfigError("--upsampling must be at least 1");
  const io::CfldFile file = io::read_cfld_file(o.object);
  const int n = static_cast<int>(file.channels.front().rows());
  if (file.channels.front().cols() != n) throw ShapeError("object field must be square");
  if (n % o.upsampling != 0)
    throw ConfigError("object size " + std::to_string(n) + " is not a multiple of --upsampling " +
                      std::to_string(o.upsampling));
  const int m = n / o.upsampling;
  const auto [nx, ny] = parse_led_grid(o.leds);
  auto geometry = optics::IlluminationGeometry::grid(nx, ny, o.pitch_mm, o.height_mm);
  geometry.channel_wavelengths = {{Channel::Red, o.wl_r_nm / 1000.0},
                                  {Channel::Green, o.wl_g_nm / 1000.0},
                                  {Channel::Blue, o.wl_b_nm / 1000.0}};
  geometry.validate();
  const auto channels = parse_channels(o.channels);
  if (file.channels.size() != 1 && file.channels.size() != 3)
    throw ConfigError("object file must hold 1 or 3 channels, found " + std::to_string(file.channels.size()));
  std::map<Channel, optics::ComplexField> objects;
  for (Channel ch : channels) {
    const std::size_t idx = file.channels.size() == 1 ? 0 : static_cast<std::size_t>(ch);
    objects[ch] = optics::ComplexField(file.channels[idx], file.pixel_pitch_um, geometry.wavelength(ch));
  }
  auto pupil = optics::make_pupil(o.na, geometry.wavelength(channels.front()), m, m,
                                  file.pixel_pitch_um * o.upsampling);
  pupil = optics::defocus_pupil(pupil, o.defocus_um);
  const auto stack = optics::simulate_stack(objects, geometry, pupil, channels);
  io::write_stack(o.out, stack, geometry);
  out << "wrote " << stack.captures.size() << " captures (" << m << "x" << m << ") to " << o.out << "\n";
}

void write_reconstruction(const fs::path& dir, Channel ch, const recovery::ReconstructionResult& result) {
  const std::string tag(1, optics::channel_letter(ch));
  io::write_cfld(result.object, dir / ("object_" + tag + ".cfld"));
  const Plane amp = result.object.data.abs();
  const double peak = amp.maxCoeff();
  io::write_png(dir / ("amplitude_" + tag + ".png"), Image(peak > 0 ? Plane(amp / peak * 65535.0) : amp), 16);
  const Plane phase = result.object.data.arg();
  io::write_png(dir / ("phase_" + tag + ".png"), Image(Plane((phase + kPi) / (2.0 * kPi) * 65535.0)), 16);
  std::ostringstream csv;
  csv << "iteration,residual\n";
  for (std::size_t i = 0; i < result.residual_history.size(); ++i)
    csv << (i + 1) << ',' << format("%.10g", result.residual_history[i]) << '\n';
  io::atomic_write(dir / ("residual_" + tag + ".csv"), csv.str());
}

void run_reconstruct(const ReconstructOpts& o, std::ostream& out) {
  require_dir(o.stack, "stack");
  recovery::ReconstructionConfig config;
  config.iterations = o.iterations;
  config.pupil_recovery = o.pupil_recovery;
  config.object_step = o.object_step;
  config.pupil_step = o.pupil_step;
  config.upsampling = o.upsampling;
  if (o.init == "mean") config.init_mode = recovery::InitMode::MeanBrightfield;
  else if (o.init == "flat") config.init_mode = recovery::InitMode::Flat;
  else throw ConfigError("--init must be mean or flat, got '" + o.init + "'");
  config.validate();

  std::optional<recovery::RefocusRange> range;
  if (!o.refocus.empty()) {
    recovery::RefocusRange r;
    char tail = 0;
    if (std::sscanf(o.refocus.c_str(), "%lf:%lf:%lf%c", &r.min_um, &r.max_um, &r.step_um, &tail) != 3)
      throw ConfigError("--refocus expects min:max:step in micrometers, got '" + o.refocus + "'");
    r.candidates();
    range = r;
  }

  const io::StackOnDisk disk = io::read_stack(o.stack);
  const auto per_channel = recovery::split_channels(disk.stack);
  fs::create_directories(o.out);
  std::map<Channel, recovery::ReconstructionResult> results;
  for (const auto& [ch, stack] : per_channel) {
    const int m = static_cast<int>(stack.captures.front().intensity.rows());
    auto pupil = optics::make_pupil(stack.objective_na, disk.geometry.wavelength(ch), m, m, stack.capture_pitch_um);
    pupil = optics::defocus_pupil(pupil, o.defocus_um);
    if (range) {
      auto refocused = recovery::digital_refocus(stack, disk.geometry, pupil, config, *range);
      std::ostringstream csv;
      csv << "dz_um,sharpness\n";
      for (const auto& [dz, score] : refocused.scores) csv << format("%.6g", dz) << ',' << format("%.10g", score) << '\n';
      io::atomic_write(fs::path(o.out) / ("refocus_" + std::string(1, optics::channel_letter(ch)) + ".csv"),
                       csv.str());
      out << "channel " << optics::channel_letter(ch) << ": best defocus " << format("%.3g", refocused.best_dz_um)
          << " um\n";
      results.emplace(ch, std::move(refocused.result));
    } else {
      results.emplace(ch, recovery::reconstruct(stack, disk.geometry, pupil, config));
    }
    write_reconstruction(o.out, ch, results.at(ch));
    out << "channel " << optics::channel_letter(ch) << ": final residual "
        << format("%.4g", results.at(ch).residual_history.back()) << "\n";
  }
  if (results.size() == 3) {
    Image color = recovery::compose_color(results);
    for (auto& p : color.planes) p *= 255.0;
    io::write_png(fs::path(o.out) / "color.png", color, 8);
  }
}

translate::TrainResult run_training(const std::vector<translate::Tensor<float>>& a,
                                    const std::vector<translate::Tensor<float>>& b, const translate::TrainConfig& config,
                                    std::ostream& out) {
  return translate::train(a, b, config, [&out](int epoch, const translate::LossBreakdown& loss) {
    out << "epoch " << epoch << ": " << loss.describe() << "\n";
  });
}

void run_train(const TrainOpts& o, std::ostream& out) {
  require_dir(o.domain_a, "domain A");
  require_dir(o.domain_b, "domain B");
  const auto kind_a = pipeline::parse_norm_kind(o.norm);
  const auto manifest = pipeline::build_dataset(o.domain_a, o.domain_b);
  translate::TrainConfig config;
  config.epochs = o.epochs;
  config.batch_size = o.batch_size;
  config.learning_rate = o.lr;
  config.beta1 = o.beta1;
  config.beta2 = o.beta2;
  config.cycle_weight = o.cycle_weight;
  config.seed = o.seed;
  config.fake_buffer_size = o.buffer;
  config.tile_size = o.tile_size > 0 ? o.tile_size : translate::TrainConfig{}.tile_size;
  config.model = model_spec(o.model, manifest.channels_a, manifest.channels_b);
  config.validate();

  std::vector<Image> images_a;
  for (const auto& p : manifest.domain_a) images_a.push_back(load_for_domain(p, kind_a));
  const auto images_b = pipeline::load_domain(manifest.domain_b);
  const auto a = to_tensors(images_a, kind_a, o.tile_size);
  const auto b = to_tensors(images_b, pipeline::NormKind::Intensity8, o.tile_size);
  out << "training on " << a.size() << " domain-A and " << b.size() << " domain-B tiles\n";

  const auto result = run_training(a, b, config, out);
  if (!o.manifest.empty()) io::atomic_write(o.manifest, manifest.to_text());
  io::atomic_write(o.loss_csv.empty() ? loss_path_for(o.out) : o.loss_csv, translate::loss_csv(result.history));
  translate::save_model(result.model, o.out);
  out << "model written to " << o.out << " (checksum " << std::hex << translate::parameter_checksum(result.model)
      << std::dec << ")\n";
}

void run_stain(const StainOpts& o, std::ostream& out) {
  require_file(o.model, "model file");
  require_file(o.input, "input image");
  const auto kind = pipeline::parse_norm_kind(o.norm);
  const auto model = translate::load_model(o.model);
  const Image stained = stain_image(model, load_for_domain(o.input, kind), kind, o.tile_size);
  io::write_png(o.out, stained, 8);
  out << "stained image written to " << o.out << "\n";
}

std::vector<std::pair<fs::path, fs::path>> match_pairs(const std::string& pred, const std::string& truth) {
  if (fs::is_regular_file(pred)) {
    require_file(truth, "truth image");
    return {{pred, truth}};
  }
  require_dir(pred, "prediction");
  require_dir(truth, "truth");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& p : io::list_png(pred)) {
    const fs::path t = fs::path(truth) / p.filename();
    if (!fs::is_regular_file(t)) throw ConsistencyError("no truth image matches " + p.string());
    pairs.emplace_back(p, t);
  }
  if (pairs.empty()) throw EmptyInputError("prediction directory " + pred + " has no PNG images");
  return pairs;
}

void run_evaluate(const EvaluateOpts& o, std::ostream& out) {
  if (o.pred.size() != o.truth.size())
    throw ConfigError("--pred and --truth must be given the same number of times");
  if (!o.label.empty() && o.label.size() != o.pred.size())
    throw ConfigError("--label must be given once per --pred, or not at all");
  std::vector<metrics::TilePairs> groups;
  for (std::size_t i = 0; i < o.pred.size(); ++i) {
    metrics::TilePairs group;
    group.sample_type = o.label.empty() ? fs::path(o.pred[i]).filename().string() : o.label[i];
    for (const auto& [p, t] : match_pairs(o.pred[i], o.truth[i])) {
      group.predictions.push_back(load_png8(p));
      group.truths.push_back(load_png8(t));
    }
    groups.push_back(std::move(group));
  }
  const std::string csv = metrics::tile_report(groups, metrics::SsimParams{}).to_csv();
  if (!o.out.empty()) io::atomic_write(o.out, csv);
  out << csv;
}

void run_tile(const TileOpts& o, std::ostream& out) {
  require_file(o.input, "input image");
  io::PngInfo info;
  const Image img = io::read_png(o.input, &info);
  const auto tiles = pipeline::tile_image(img, o.tile_size, fs::path(o.input).stem().string());
  pipeline::write_tiles(o.out, tiles, o.bit_depth > 0 ? o.bit_depth : info.bit_depth);
  out << "wrote " << tiles.tiles.size() << " tiles to " << o.out << "\n";
}

void run_stitch(const StitchOpts& o, std::ostream& out) {
  require_dir(o.tiles, "tile");
  const Image img = pipeline::stitch_tiles(pipeline::read_tiles(o.tiles));
  io::write_png(o.out, img, o.bit_depth);
  out << "stitched " << img.width() << "x" << img.height() << " image written to " << o.out << "\n";
}

// Desk-scale closed loop: synthetic tissue, coherent monochrome captures,
// unpaired training, virtual staining and a two-row SSIM report.
void run_demo(const DemoOpts& o, std::ostream& out) {
  if (o.train_tiles < 1 || o.test_tiles < 1 || o.slide_tiles < 1)
    throw ConfigError("demo tile counts must be positive");
  if (o.tile_size < pipeline::kMinTileSize)
    throw ConfigError("--tile-size must be at least " + std::to_string(pipeline::kMinTileSize));
  const fs::path root(o.out);
  const int ts = o.tile_size;

  std::mt19937_64 seeds(o.seed);
  auto write_set = [&](const fs::path& dir, int count, bool coherent) {
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
      const std::uint64_t s = seeds();
      const auto maps = datagen::stain_maps(ts, s);
      char name[32];
      std::snprintf(name, sizeof name, "tile_%04d.png", i);
      io::write_png(dir / name, coherent ? datagen::coherent_monochrome(maps, s + 1) : datagen::render_color(maps), 8);
    }
  };
  // Independent tissue draws per domain keep the sets unpaired.
  write_set(root / "train_a", o.train_tiles, true);
  write_set(root / "train_b", o.train_tiles, false);

  // Held-out pairs share a specimen so the report can compare to truth.
  fs::create_directories(root / "test_input");
  fs::create_directories(root / "test_truth");
  for (int i = 0; i < o.test_tiles; ++i) {
    const std::uint64_t s = seeds();
    const auto maps = datagen::stain_maps(ts, s);
    char name[32];
    std::snprintf(name, sizeof name, "tile_%04d.png", i);
    io::write_png(root / "test_input" / name, datagen::coherent_monochrome(maps, s + 1), 8);
    io::write_png(root / "test_truth" / name, datagen::render_color(maps), 8);
  }

  // FPM slide: simulate a blue-channel stack of a larger specimen and
  // reconstruct it as the whole-slide network input.
  const int slide = ts * o.slide_tiles;
  const auto slide_maps = datagen::stain_maps(slide, seeds());
  {
    const Plane t = datagen::transmittance(slide_maps, Channel::Blue);
    ComplexPlane field(slide, slide);
    for (int r = 0; r < slide; ++r)
      for (int c = 0; c < slide; ++c)
        field(r, c) = std::polar(std::sqrt(t(r, c)),
                                 0.6 * (slide_maps.hematoxylin(r, c) + slide_maps.eosin(r, c)));
    const auto geometry = optics::IlluminationGeometry::default_grid();
    const int upsampling = 4;
    const double capture_pitch = 1.5;
    const auto pupil = optics::make_pupil(0.1, geometry.wavelength(Channel::Blue), slide / upsampling,
                                          slide / upsampling, capture_pitch);
    std::map<Channel, optics::ComplexField> objects{
        {Channel::Blue, optics::ComplexField(field, capture_pitch / upsampling, geometry.wavelength(Channel::Blue))}};
    const auto stack = optics::simulate_stack(objects, geometry, pupil, {Channel::Blue});
    recovery::ReconstructionConfig rc;
    rc.upsampling = upsampling;
    const auto rec = recovery::reconstruct(stack, geometry, pupil, rc);
    io::write_png(root / "slide_input.png",
                  Image(Plane((rec.object.data.abs2() * 250.0 + 2.0).round().max(0.0).min(255.0))), 8);
    io::write_png(root / "slide_truth.png", datagen::render_color(slide_maps), 8);
    out << "fpm slide: " << stack.captures.size() << " captures, residual "
        << format("%.4g", rec.residual_history.back()) << "\n";
  }

  TrainOpts t;
  t.domain_a = (root / "train_a").string();
  t.domain_b = (root / "train_b").string();
  t.out = (root / "model.fpsm").string();
  t.loss_csv = (root / "loss.csv").string();
  t.manifest = (root / "dataset.txt").string();
  t.epochs = o.epochs;
  t.batch_size = o.batch_size;
  t.buffer = o.buffer;
  t.lr = o.lr;
  t.cycle_weight = o.cycle_weight;
  t.seed = o.seed;
  t.model = o.model;
  run_train(t, out);

  const auto model = translate::load_model(t.out);
  fs::create_directories(root / "test_output");
  fs::create_directories(root / "test_replicated");
  for (const auto& p : io::list_png(root / "test_input")) {
    const Image input = load_png8(p);
    io::write_png(root / "test_output" / p.filename(), translate::virtual_stain(model, input, pipeline::NormKind::Intensity8), 8);
    io::write_png(root / "test_replicated" / p.filename(), datagen::replicate_rgb(input), 8);
  }
  const Image slide_input = load_png8(root / "slide_input.png");
  io::write_png(root / "slide_stained.png", stain_image(model, slide_input, pipeline::NormKind::Intensity8, ts), 8);

  EvaluateOpts e;
  e.pred = {(root / "test_replicated").string(), (root / "test_output").string()};
  e.truth = {(root / "test_truth").string(), (root / "test_truth").string()};
  e.label = {"fpm_input", "network_output"};
  e.out = (root / "report.csv").string();
  run_evaluate(e, out);
}

int classify(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kRuntime;
  if (dynamic_cast<const Error*>(&e)) return kValidation;
  return kRuntime;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

std::vector<std::string> parse_config(const std::string& text) {
  std::vector<std::string> args;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + " is not 'key = value': " + line);
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    if (key.empty()) throw ConfigError("config line " + std::to_string(number) + " has an empty key");
    args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

int dispatch(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fourier ptychographic simulation, reconstruction and virtual staining"};
  app.name("fpstain");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  std::string config_path;
  app.add_option("--threads", threads, "Worker thread cap (default: FPSTAIN_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "File of 'key = value' lines using flag names; flags override it");

  SimulateOpts sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate an FPM acquisition stack from a CFLD object");
  simulate->add_option("--object", sim.object, "Complex object field (.cfld, 1 or 3 channels)")->required();
  simulate->add_option("--out", sim.out, "Output stack directory")->required();
  simulate->add_option("--leds", sim.leds, "LED grid as NxM")->capture_default_str();
  simulate->add_option("--pitch", sim.pitch_mm, "LED pitch in mm")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--height", sim.height_mm, "LED array to sample distance in mm")
      ->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--na", sim.na, "Objective numerical aperture")->capture_default_str()
      ->check(CLI::Range(1e-6, 0.999999));
  simulate->add_option("--channels", sim.channels, "Channels to acquire, any of r, g, b (e.g. g or rgb)")
      ->capture_default_str();
  simulate->add_option("--upsampling", sim.upsampling, "Object grid size over capture size")->capture_default_str();
  simulate->add_option("--defocus", sim.defocus_um, "Sample defocus in um")->capture_default_str();
  simulate->add_option("--wavelength-r", sim.wl_r_nm, "Red LED wavelength in nm")->capture_default_str()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--wavelength-g", sim.wl_g_nm, "Green LED wavelength in nm")->capture_default_str()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--wavelength-b", sim.wl_b_nm, "Blue LED wavelength in nm")->capture_default_str()
      ->check(CLI::PositiveNumber);

  ReconstructOpts rec;
  auto* reconstruct = app.add_subcommand("reconstruct", "Recover the high-resolution complex field from a stack");
  reconstruct->add_option("--stack", rec.stack, "Stack directory written by simulate")->required();
  reconstruct->add_option("--out", rec.out, "Output directory")->required();
  reconstruct->add_option("--iterations", rec.iterations, "Passes over all captures")->capture_default_str();
  reconstruct->add_flag("--pupil-recovery", rec.pupil_recovery, "Jointly recover the pupil (aberrations)");
  reconstruct->add_option("--object-step", rec.object_step, "Object update step in (0, 2]")->capture_default_str();
  reconstruct->add_option("--pupil-step", rec.pupil_step, "Pupil update step in (0, 2]")->capture_default_str();
  reconstruct->add_option("--init", rec.init, "Initial guess: mean (bright-field mean) or flat")->capture_default_str();
  reconstruct->add_option("--upsampling", rec.upsampling, "Object grid size over capture size")->capture_default_str();
  reconstruct->add_option("--defocus", rec.defocus_um, "Known defocus applied to the pupil, in um")
      ->capture_default_str();
  reconstruct->add_option("--refocus", rec.refocus, "Refocus search range min:max:step in um");

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "Train the unpaired translator");
  train->add_option("--domain-a", tr.domain_a, "Directory of domain-A PNGs (FPM intensity or phase)")->required();
  train->add_option("--domain-b", tr.domain_b, "Directory of domain-B PNGs (color or fluorescence)")->required();
  train->add_option("--out", tr.out, "Output model file (.fpsm)")->required();
  train->add_option("--loss-csv", tr.loss_csv, "Loss curve CSV (default: <out>.loss.csv)");
  train->add_option("--manifest", tr.manifest, "Also write the dataset manifest here");
  train->add_option("--norm", tr.norm, "Domain-A encoding: intensity8 or phase")->capture_default_str();
  train->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", tr.batch_size, "Tiles per domain per step")->capture_default_str();
  train->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  train->add_option("--beta1", tr.beta1, "First-moment decay")->capture_default_str();
  train->add_option("--beta2", tr.beta2, "Second-moment decay")->capture_default_str();
  train->add_option("--cycle-weight", tr.cycle_weight, "Cycle loss weight lambda")->capture_default_str();
  train->add_option("--seed", tr.seed, "Seed for initialization, shuffling and replay")->capture_default_str();
  train->add_option("--buffer", tr.buffer, "Replay buffer capacity")->capture_default_str();
  train->add_option("--tile-size", tr.tile_size, "Tile larger images to this size (0: use images as given)")
      ->capture_default_str();
  add_model_options(train, tr.model);

  StainOpts st;
  auto* stain = app.add_subcommand("stain", "Virtually stain an image with a trained model");
  stain->add_option("--model", st.model, "Model file (.fpsm)")->required();
  stain->add_option("--input", st.input, "Input PNG")->required();
  stain->add_option("--out", st.out, "Output PNG (8-bit)")->required();
  stain->add_option("--norm", st.norm, "Input encoding: intensity8 or phase")->capture_default_str();
  stain->add_option("--tile-size", st.tile_size, "Process in tiles of this size and stitch (0: whole image)")
      ->capture_default_str();

  EvaluateOpts ev;
  auto* evaluate = app.add_subcommand("evaluate", "Green-channel SSIM report over tile sets");
  evaluate->add_option("--pred", ev.pred, "Prediction PNG or directory (repeatable)")->required();
  evaluate->add_option("--truth", ev.truth, "Matching truth PNG or directory (repeatable)")->required();
  evaluate->add_option("--label", ev.label, "Sample-type label per --pred (repeatable)");
  evaluate->add_option("--out", ev.out, "Report CSV path");

  TileOpts ti;
  auto* tile = app.add_subcommand("tile", "Split an image into non-overlapping tiles");
  tile->add_option("--input", ti.input, "Input PNG")->required();
  tile->add_option("--out", ti.out, "Output tile directory")->required();
  tile->add_option("--tile-size", ti.tile_size, "Tile side in pixels (>= 64)")->capture_default_str();
  tile->add_option("--bit-depth", ti.bit_depth, "8 or 16 (default: input depth)");

  StitchOpts sti;
  auto* stitch = app.add_subcommand("stitch", "Reassemble a tile directory into one image");
  stitch->add_option("--tiles", sti.tiles, "Tile directory written by tile")->required();
  stitch->add_option("--out", sti.out, "Output PNG")->required();
  stitch->add_option("--bit-depth", sti.bit_depth, "8 or 16")->capture_default_str();

  DemoOpts dm;
  auto* demo = app.add_subcommand("demo", "Run simulate, degrade, train, stain and evaluate end to end");
  demo->add_option("--out", dm.out, "Output directory")->capture_default_str();
  demo->add_option("--seed", dm.seed, "Seed for data, initialization and training")->capture_default_str();
  demo->add_option("--train-tiles", dm.train_tiles, "Training tiles per domain")->capture_default_str();
  demo->add_option("--test-tiles", dm.test_tiles, "Held-out tiles")->capture_default_str();
  demo->add_option("--tile-size", dm.tile_size, "Tile side in pixels")->capture_default_str();
  demo->add_option("--slide-tiles", dm.slide_tiles, "FPM slide side in tiles")->capture_default_str();
  demo->add_option("--epochs", dm.epochs, "Training epochs")->capture_default_str();
  demo->add_option("--batch-size", dm.batch_size, "Tiles per domain per step")->capture_default_str();
  demo->add_option("--buffer", dm.buffer, "Replay buffer capacity")->capture_default_str();
  demo->add_option("--lr", dm.lr, "Learning rate")->capture_default_str();
  demo->add_option("--cycle-weight", dm.cycle_weight, "Cycle loss weight lambda")->capture_default_str();
  add_model_options(demo, dm.model);

  // Config-file keys fill in only flags absent from the command line.
  std::vector<std::string> args = raw;
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
        args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
        args.erase(args.begin() + static_cast<long>(i));
      } else {
        continue;
      }
      require_file(path, "config file");
      for (const auto& extra : parse_config(io::read_file(path))) {
        const std::string flag = extra.substr(0, extra.find('='));
        bool present = false;
        for (const auto& a : args)
          if (a == flag || a.rfind(flag + "=", 0) == 0) present = true;
        if (!present) args.push_back(extra);
      }
      break;
    }
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kValidation;
  }

  std::vector<const char*> argv{"fpstain"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kValidation;
  }

  try {
    if (threads > 0) {
      set_max_threads(threads);
    } else if (const char* env = std::getenv("FPSTAIN_THREADS")) {
      const int n = std::atoi(env);
      if (n < 1) throw ConfigError(std::string("FPSTAIN_THREADS must be a positive integer, got '") + env + "'");
      set_max_threads(n);
    }
    if (simulate->parsed()) run_simulate(sim, out);
    else if (reconstruct->parsed()) run_reconstruct(rec, out);
    else if (train->parsed()) run_train(tr, out);
    else if (stain->parsed()) run_stain(st, out);
    else if (evaluate->parsed()) run_evaluate(ev, out);
    else if (tile->parsed()) run_tile(ti, out);
    else if (stitch->parsed()) run_stitch(sti, out);
    else if (demo->parsed()) run_demo(dm, out);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return classify(e);
  }
  return kOk;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace fpstain::cli
