#include <doctest.h>

#include <random>
#include <unistd.h>

#include "fpstain/datagen.hpp"
#include "fpstain/io.hpp"
#include "fpstain/translate.hpp"
#include "support.hpp"

using namespace fpstain;
using namespace fpstain::translate;

namespace {

template <typename S>
Tensor<S> random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<S> t(c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = static_cast<S>(u(rng));
  return t;
}

ModelSpec small_spec() {
  ModelSpec spec;
  spec.generator_width = 2;
  spec.res_blocks = 1;
  spec.edge_kernel = 3;
  spec.discriminator_width = 2;
  spec.discriminator_depth = 2;
  return spec;
}

template <typename S>
void scale_params(TranslationModel<S>& model, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto* net : {&model.g_ab.params, &model.g_ba.params, &model.d_a.params, &model.d_b.params})
    for (auto& block : net->blocks)
      for (Eigen::Index i = 0; i < block.value.size(); ++i) block.value[i] = static_cast<S>(n(rng));
}

Plane green_unit(const Tensor<double>& t) {
  const int ch = t.c == 3 ? 1 : 0;
  Plane p(t.h, t.w);
  for (int r = 0; r < t.h; ++r)
    for (int c = 0; c < t.w; ++c) p(r, c) = 0.5 * t(ch, r, c) + 0.5;
  return p;
}

bool same_params(const TranslationModel<float>& a, const TranslationModel<float>& b) {
  const auto na = a.named_blocks();
  const auto nb = b.named_blocks();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second->shape != nb[i].second->shape) return false;
    if (std::memcmp(na[i].second->value.data(), nb[i].second->value.data(),
                    sizeof(float) * static_cast<std::size_t>(na[i].second->value.size())) != 0)
      return false;
  }
  return true;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / ("fpstain_translate_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("generator and discriminator shapes") {
  auto model = init_model<double>(small_spec(), 1);
  const auto out = generator_forward(model.g_ab, random_tensor<double>(1, 64, 64, 2));
  CHECK(out.c == 3);
  CHECK(out.h == 64);
  CHECK(out.w == 64);
  CHECK(out.v.abs().maxCoeff() <= 1.0);
  const auto odd = generator_forward(model.g_ba, random_tensor<double>(3, 37, 29, 3));
  CHECK(odd.c == 1);
  CHECK(odd.h == 37);
  CHECK(odd.w == 29);
  CHECK_THROWS_AS(generator_forward(model.g_ab, random_tensor<double>(3, 32, 32, 4)), ShapeError);

  ModelSpec spec = small_spec();
  spec.discriminator_depth = 3;
  const auto deep = init_model<double>(spec, 5);
  const auto map = discriminator_forward(deep.d_b, random_tensor<double>(3, 64, 64, 6));
  CHECK(map.c == 1);
  CHECK(map.h == 8);
  CHECK(map.w == 8);
  CHECK(discriminator_map_size(64, 3) == 8);
  CHECK(discriminator_map_size(65, 3) == 9);
  CHECK(discriminator_map_size(512, 3) == 64);
  CHECK_THROWS_AS(discriminator_forward(deep.d_b, random_tensor<double>(1, 64, 64, 7)), ShapeError);
}

TEST_CASE("zero networks produce zero outputs") {
  const auto g = make_generator<double>({1, 3, 4, 2, 7});
  CHECK((generator_forward(g, random_tensor<double>(1, 32, 32, 8)).v == 0.0).all());
  const auto d = make_discriminator<double>({3, 4, 3});
  CHECK((discriminator_forward(d, random_tensor<double>(3, 32, 32, 9)).v == 0.0).all());
}

TEST_CASE("forward passes and initialization are deterministic") {
  const auto a = init_model<float>(small_spec(), 11);
  const auto b = init_model<float>(small_spec(), 11);
  CHECK(same_params(a, b));
  CHECK(parameter_checksum(a) == parameter_checksum(b));
  CHECK(parameter_checksum(a) != parameter_checksum(init_model<float>(small_spec(), 12)));
  const auto x = random_tensor<float>(1, 32, 32, 13);
  const auto y1 = generator_forward(a.g_ab, x);
  const auto y2 = generator_forward(a.g_ab, x);
  CHECK((y1.v == y2.v).all());
  const auto m1 = discriminator_forward(a.d_b, y1);
  const auto m2 = discriminator_forward(a.d_b, y1);
  CHECK((m1.v == m2.v).all());

  // Weights follow N(0, 0.02); biases start at zero.
  double ss = 0.0;
  long n = 0;
  for (const auto& [name, block] : a.named_blocks()) {
    if (name.ends_with(".b")) {
      CHECK((block->value == 0.0f).all());
    } else {
      ss += block->value.template cast<double>().square().sum();
      n += block->value.size();
    }
  }
  CHECK(std::sqrt(ss / n) == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("loss breakdown is additive and linear in lambda") {
  auto model = init_model<double>(small_spec(), 21);
  scale_params(model, 0.3, 22);
  const std::vector<Tensor<double>> a{random_tensor<double>(1, 16, 16, 23), random_tensor<double>(1, 16, 16, 24)};
  const std::vector<Tensor<double>> b{random_tensor<double>(3, 16, 16, 25)};
  const auto l1 = total_loss(model, a, b, 10.0);
  CHECK(l1.total == l1.gan_ab + l1.gan_ba + l1.cyc + l1.struct_ab + l1.struct_ba);
  const auto l2 = total_loss(model, a, b, 20.0);
  CHECK(l2.cyc == 2.0 * l1.cyc);
  CHECK(l2.gan_ab == l1.gan_ab);
  CHECK(l2.gan_ba == l1.gan_ba);
  CHECK(l2.struct_ab == l1.struct_ab);
  CHECK(l2.struct_ba == l1.struct_ba);

  CHECK(std::abs(cycle_error(model, a, b) - l1.cyc / 10.0) <= 1e-9);

  CHECK_THROWS_AS(total_loss(model, a, b, 0.0), ConfigError);
  CHECK_THROWS_AS(total_loss(model, {}, b, 10.0), EmptyInputError);
}

TEST_CASE("loss terms match an independent recomputation") {
  auto model = init_model<double>(small_spec(), 31);
  scale_params(model, 0.3, 32);
  const std::vector<Tensor<double>> a{random_tensor<double>(1, 16, 16, 33), random_tensor<double>(1, 16, 16, 34)};
  const std::vector<Tensor<double>> b{random_tensor<double>(3, 16, 16, 35), random_tensor<double>(3, 16, 16, 36),
                                      random_tensor<double>(3, 16, 16, 37)};
  const double lambda = 7.0;
  const auto params = metrics::SsimParams::unit();

  auto side = [&](const GeneratorParams<double>& fwd, const GeneratorParams<double>& back,
                  const DiscriminatorParams<double>& judge, const std::vector<Tensor<double>>& batch) {
    double gan = 0, cyc = 0, ms = 0;
    for (const auto& x : batch) {
      const auto fake = generator_forward(fwd, x);
      gan += (discriminator_forward(judge, fake).v - 1.0).square().mean();
      cyc += (generator_forward(back, fake).v - x.v).abs().mean();
      ms += metrics::ms_ssim(green_unit(fake), green_unit(x), params);
    }
    const double n = static_cast<double>(batch.size());
    return std::array<double, 3>{gan / n, cyc / n, ms / n};
  };
  const auto ab = side(model.g_ab, model.g_ba, model.d_b, a);
  const auto ba = side(model.g_ba, model.g_ab, model.d_a, b);
  const double expected = ab[0] + ba[0] + lambda * (ab[1] + ba[1]) + 0.1 * (1 - ab[2]) + 0.1 * (1 - ba[2]);

  const auto loss = total_loss(model, a, b, lambda);
  CHECK(loss.total == doctest::Approx(expected).epsilon(1e-6));
  CHECK(loss.gan_ab == doctest::Approx(ab[0]).epsilon(1e-9));
  CHECK(loss.gan_ba == doctest::Approx(ba[0]).epsilon(1e-9));
  CHECK(loss.struct_ab == doctest::Approx(0.1 * (1 - ab[2])).epsilon(1e-9));
  CHECK(loss.struct_ba == doctest::Approx(0.1 * (1 - ba[2])).epsilon(1e-9));
}

TEST_CASE("structure terms stay within bounds") {
  for (std::uint64_t seed = 40; seed < 46; ++seed) {
    auto model = init_model<double>(small_spec(), seed);
    scale_params(model, 0.1 + 0.3 * static_cast<double>(seed - 40), seed + 100);
    const auto loss = total_loss<double>(model, {random_tensor<double>(1, 24, 24, seed + 200)},
                                         {random_tensor<double>(3, 24, 24, seed + 300)}, 10.0);
    CHECK(loss.struct_ab >= 0.0);
    CHECK(loss.struct_ab <= 0.2);
    CHECK(loss.struct_ba >= 0.0);
    CHECK(loss.struct_ba <= 0.2);
  }
}

TEST_CASE("perfect structure preservation gives zero structure terms") {
  const auto source = random_tensor<double>(1, 32, 32, 50);
  Tensor<double> color(3, 32, 32);
  color.channel(0) = random_tensor<double>(1, 32, 32, 51).v;
  color.channel(1) = source.v;
  color.channel(2) = random_tensor<double>(1, 32, 32, 52).v;
  const auto params = metrics::SsimParams::unit();
  CHECK(kStructureWeight * (1.0 - structure_similarity(color, source, params)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kStructureWeight * (1.0 - structure_similarity(source, color, params)) == doctest::Approx(0.0).epsilon(1e-12));
  const double partial = structure_similarity(random_tensor<double>(3, 32, 32, 53), source, params);
  CHECK(partial < 1.0);
}

TEST_CASE("non-finite losses name the offending term") {
  auto model = init_model<double>(small_spec(), 60);
  auto bad = random_tensor<double>(1, 16, 16, 61);
  bad.v[5] = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss<double>(model, {bad}, {random_tensor<double>(3, 16, 16, 62)}, 10.0);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("non-finite loss term") != std::string::npos);
  }
}

TEST_CASE("optimizer and replay buffer") {
  ParamSet<double> set;
  set.blocks.push_back({"p", {3}, nn::Vec<double>::Zero(3)});
  Adam<double> adam;
  adam.learning_rate = 0.01;
  nn::Vec<double> grad(3);
  grad << 2.0, -0.5, 0.0;
  adam.step(set, {grad});
  CHECK(set.blocks[0].value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(set.blocks[0].value[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(set.blocks[0].value[2] == 0.0);

  FakeBuffer<double> none(0);
  std::mt19937_64 rng(1);
  const auto t1 = random_tensor<double>(1, 4, 4, 70);
  CHECK((none.query(t1, rng).v == t1.v).all());
  CHECK(none.size() == 0);

  FakeBuffer<double> pool(2);
  const auto t2 = random_tensor<double>(1, 4, 4, 71);
  const auto t3 = random_tensor<double>(1, 4, 4, 72);
  CHECK((pool.query(t1, rng).v == t1.v).all());
  CHECK((pool.query(t2, rng).v == t2.v).all());
  CHECK(pool.size() == 2);
  int swapped = 0;
  for (int i = 0; i < 200; ++i) {
    const auto out = pool.query(t3, rng);
    if (!(out.v == t3.v).all()) ++swapped;
  }
  CHECK(pool.size() == 2);
  CHECK(swapped > 0);
  CHECK(swapped < 200);
}

TEST_CASE("training configuration checks") {
  TrainConfig config;
  CHECK_NOTHROW(config.validate());
  config.batch_size = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.epochs = -1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.tile_size = 8;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.cycle_weight = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);

  config = {};
  config.model = small_spec();
  config.epochs = 1;
  CHECK_THROWS_AS(train({}, {random_tensor<float>(3, 16, 16, 80)}, config), EmptyInputError);
  CHECK_THROWS_AS(train({random_tensor<float>(3, 16, 16, 81)}, {random_tensor<float>(3, 16, 16, 80)}, config),
                  ShapeError);
}

TEST_CASE("training is seeded and replayable") {
  TrainConfig config;
  config.model = small_spec();
  config.epochs = 0;
  config.seed = 90;
  config.batch_size = 2;
  std::vector<Tensor<float>> a, b;
  for (int i = 0; i < 3; ++i) a.push_back(random_tensor<float>(1, 16, 16, 91 + i));
  for (int i = 0; i < 4; ++i) b.push_back(random_tensor<float>(3, 16, 16, 95 + i));

  const auto untouched = train(a, b, config);
  CHECK(same_params(untouched.model, init_model<float>(config.model, 90)));
  CHECK(untouched.history.empty());

  config.epochs = 2;
  int calls = 0;
  const auto first = train(a, b, config, [&](int epoch, const LossBreakdown& l) {
    CHECK(epoch == ++calls);
    CHECK(l.finite());
  });
  const auto second = train(a, b, config);
  CHECK(calls == 2);
  CHECK(first.model.meta.epochs_seen == 2);
  CHECK(parameter_checksum(first.model) == parameter_checksum(second.model));
  CHECK(same_params(first.model, second.model));
  CHECK(!same_params(first.model, untouched.model));
  REQUIRE(first.history.size() == 2);
  CHECK(first.history[1].total == second.history[1].total);

  const std::string csv = loss_csv(first.history);
  CHECK(csv.starts_with("epoch,gan_ab,gan_ba,cyc,struct_ab,struct_ba,total\n1,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("cycle loss falls on a toy degradation task") {
  std::vector<Tensor<float>> a, b;
  for (int i = 0; i < 8; ++i) {
    const auto maps = datagen::stain_maps(64, 500 + i);
    const auto mono = datagen::coherent_monochrome(datagen::stain_maps(64, 600 + i), 700 + i);
    a.push_back(to_tensor<float>(pipeline::normalize_for_network(mono, pipeline::NormKind::Intensity8)));
    b.push_back(to_tensor<float>(pipeline::normalize_for_network(datagen::render_color(maps),
                                                                 pipeline::NormKind::Intensity8)));
  }
  TrainConfig config;
  config.model = small_spec();
  config.model.generator_width = 4;
  config.epochs = 6;
  config.batch_size = 4;
  config.learning_rate = 1e-3;
  config.seed = 3;
  const auto result = train(a, b, config);
  REQUIRE(result.history.size() == 6);
  MESSAGE("cyc " << result.history.front().cyc << " -> " << result.history.back().cyc);
  CHECK(result.history.back().cyc < result.history.front().cyc);
}

TEST_CASE("virtual staining") {
  auto model = init_model<float>(small_spec(), 110);
  scale_params(model, 0.2, 111);
  const Image input(testsupport::random_plane(96, 80, 112).round());
  const Image out = virtual_stain(model, input, pipeline::NormKind::Intensity8);
  CHECK(out.channels() == 3);
  CHECK(out.height() == 96);
  CHECK(out.width() == 80);
  for (const auto& p : out.planes) {
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 255.0);
    CHECK((p == p.round()).all());
  }
  CHECK(virtual_stain(model, input, pipeline::NormKind::Intensity8) == out);
  CHECK_THROWS_AS(virtual_stain(model, out, pipeline::NormKind::Intensity8), ShapeError);

  Plane phase = testsupport::random_plane(32, 32, 113, -3.0, 3.0);
  CHECK(virtual_stain(model, Image(phase), pipeline::NormKind::Phase).channels() == 3);
}

TEST_CASE("model files round trip") {
  auto model = init_model<float>(small_spec(), 120);
  model.meta.epochs_seen = 7;
  model.meta.seed = 120;
  const std::string bytes = encode_model(model);
  CHECK(bytes.substr(0, 4) == "FPSM");
  const auto back = decode_model(bytes);
  CHECK(same_params(back, model));
  CHECK(back.meta.epochs_seen == 7);
  CHECK(back.meta.seed == 120);
  CHECK(back.spec.generator_width == 2);
  CHECK(encode_model(back) == bytes);

  TempDir dir;
  save_model(model, dir.path / "m.fpsm");
  CHECK(parameter_checksum(load_model(dir.path / "m.fpsm")) == parameter_checksum(model));

  std::string bad = bytes;
  bad[0] = 'X';
  try {
    decode_model(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(decode_model(bytes.substr(0, bytes.size() / 2)), FormatError);
  CHECK_THROWS_AS(decode_model(bytes.substr(0, 6)), FormatError);
  CHECK_THROWS_AS(load_model(dir.path / "missing.fpsm"), Error);
}
