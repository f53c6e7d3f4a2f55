#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fpstain/image.hpp"
#include "fpstain/metrics.hpp"
#include "fpstain/nn/graph.hpp"
#include "fpstain/pipeline.hpp"

// Cycle-consistent adversarial translator between domain A (monochrome FPM
// intensity or phase) and domain B (incoherent color or fluorescence).
//
// Pairing follows the generator/discriminator roles: D_B judges G_AB outputs,
// D_A judges G_BA outputs. The generator objective is
//
//   total = gan_ab + gan_ba + cyc + struct_ab + struct_ba
//   gan_ab    = mean (D_B(G_AB(a)) - 1)^2            (least squares)
//   cyc       = lambda * (mean|G_BA(G_AB(a)) - a| + mean|G_AB(G_BA(b)) - b|)
//   struct_ab = 0.1 * (1 - msSSIM_g(G_AB(a), a))
//
// with msSSIM_g evaluated on [0, 1]-rescaled images, comparing the green plane
// of any 3-channel member against the other.

namespace fpstain::translate {

template <typename S>
using Tensor = nn::Tensor<S>;

constexpr double kStructureWeight = 0.1;

template <typename S>
struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  nn::Vec<S> value;
};

template <typename S>
struct ParamSet {
  std::vector<ParamBlock<S>> blocks;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += static_cast<std::size_t>(b.value.size());
    return n;
  }
  bool all_finite() const {
    for (const auto& b : blocks)
      if (!b.value.isFinite().all()) return false;
    return true;
  }
  const ParamBlock<S>& at(const std::string& name) const;
  ParamBlock<S>& at(const std::string& name);
};

struct GeneratorSpec {
  int in_channels = 1;
  int out_channels = 3;
  int base_width = 32;
  int res_blocks = 4;
  int edge_kernel = 7;
};

struct DiscriminatorSpec {
  int in_channels = 3;
  int base_width = 16;
  int depth = 3;
};

template <typename S>
struct GeneratorParams {
  GeneratorSpec spec;
  ParamSet<S> params;
};

template <typename S>
struct DiscriminatorParams {
  DiscriminatorSpec spec;
  ParamSet<S> params;
};

/// Architecture knobs shared by both generator/discriminator pairs.
struct ModelSpec {
  int domain_a_channels = 1;
  int domain_b_channels = 3;
  int generator_width = 32;
  int res_blocks = 4;
  int edge_kernel = 7;
  int discriminator_width = 16;
  int discriminator_depth = 3;

  void validate() const;
};

struct TrainingMeta {
  int epochs_seen = 0;
  std::uint64_t seed = 0;
};

template <typename S>
struct TranslationModel {
  ModelSpec spec;
  GeneratorParams<S> g_ab;
  GeneratorParams<S> g_ba;
  DiscriminatorParams<S> d_a;
  DiscriminatorParams<S> d_b;
  TrainingMeta meta;

  /// Every parameter block keyed "g_ab.<layer>.w" etc., in a fixed order.
  std::vector<std::pair<std::string, const ParamBlock<S>*>> named_blocks() const;
  void validate() const;

  template <typename T>
  TranslationModel<T> cast() const;
};

/// Layer blocks with zero-valued parameters.
template <typename S>
GeneratorParams<S> make_generator(const GeneratorSpec& spec);
template <typename S>
DiscriminatorParams<S> make_discriminator(const DiscriminatorSpec& spec);

/// Weights ~ N(0, 0.02), biases 0, drawn from mt19937_64(seed) in block order.
template <typename S>
TranslationModel<S> init_model(const ModelSpec& spec, std::uint64_t seed);

/// Builds the generator onto an existing graph. `params` lists the graph
/// variables bound to each block in order.
template <typename S>
typename nn::Graph<S>::Var generator_graph(nn::Graph<S>& g, const GeneratorSpec& spec,
                                           const std::vector<typename nn::Graph<S>::Var>& params,
                                           typename nn::Graph<S>::Var x);
template <typename S>
typename nn::Graph<S>::Var discriminator_graph(nn::Graph<S>& g, const DiscriminatorSpec& spec,
                                               const std::vector<typename nn::Graph<S>::Var>& params,
                                               typename nn::Graph<S>::Var x);

/// Binds each block of a parameter set as a graph variable (trainable) or
/// constant.
template <typename S>
std::vector<typename nn::Graph<S>::Var> bind(nn::Graph<S>& g, const ParamSet<S>& set, bool trainable);

template <typename S>
Tensor<S> generator_forward(const GeneratorParams<S>& params, const Tensor<S>& image);
template <typename S>
Tensor<S> discriminator_forward(const DiscriminatorParams<S>& params, const Tensor<S>& image);

/// Patch map side length for an input side length (ceil(n / 2^depth)).
int discriminator_map_size(int input_size, int depth);

struct LossBreakdown {
  double gan_ab = 0.0;
  double gan_ba = 0.0;
  double cyc = 0.0;
  double struct_ab = 0.0;
  double struct_ba = 0.0;
  double total = 0.0;

  /// Sets total = gan_ab + gan_ba + cyc + struct_ab + struct_ba, in that order.
  void finalize() { total = gan_ab + gan_ba + cyc + struct_ab + struct_ba; }
  bool finite() const;
  std::string describe() const;
};

/// Per-block gradient buffers for the four networks.
template <typename S>
struct ModelGrads {
  std::vector<nn::Vec<S>> g_ab, g_ba, d_a, d_b;

  static ModelGrads zeros_like(const TranslationModel<S>& model);
  void add(const ModelGrads& other);
};

struct LossOptions {
  double lambda = 10.0;
  metrics::SsimParams ssim = metrics::SsimParams::unit();
};

/// Generator objective over two unpaired batches. When `grads` is non-null,
/// generator gradients of `total` are accumulated into it; when `fakes_*` is
/// non-null the generated images are returned for the discriminator step.
template <typename S>
LossBreakdown generator_objective(const TranslationModel<S>& model, const std::vector<Tensor<S>>& batch_a,
                                  const std::vector<Tensor<S>>& batch_b, const LossOptions& options,
                                  ModelGrads<S>* grads = nullptr, std::vector<Tensor<S>>* fakes_b = nullptr,
                                  std::vector<Tensor<S>>* fakes_a = nullptr);

template <typename S>
LossBreakdown total_loss(const TranslationModel<S>& model, const std::vector<Tensor<S>>& batch_a,
                         const std::vector<Tensor<S>>& batch_b, double lambda) {
  LossOptions options;
  options.lambda = lambda;
  return generator_objective(model, batch_a, batch_b, options);
}

/// mean|G_BA(G_AB(a)) - a| over `batch_a` plus mean|G_AB(G_BA(b)) - b| over `batch_b`.
template <typename S>
double cycle_error(const TranslationModel<S>& model, const std::vector<Tensor<S>>& batch_a,
                   const std::vector<Tensor<S>>& batch_b);

/// msSSIM_g between a generated image and its source, both in [-1, 1].
template <typename S>
double structure_similarity(const Tensor<S>& generated, const Tensor<S>& source, const metrics::SsimParams& params);

/// Least-squares discriminator loss 0.5 * (mean (D(real) - 1)^2 + mean D(fake)^2),
/// each term averaged over its batch. Gradients go to `grads` when non-null.
template <typename S>
double discriminator_objective(const DiscriminatorParams<S>& params, const std::vector<Tensor<S>>& real,
                               const std::vector<Tensor<S>>& fake, std::vector<nn::Vec<S>>* grads = nullptr);

/// Adaptive-moment optimizer state for one parameter set.
template <typename S>
struct Adam {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<nn::Vec<S>> m, v;

  void step(ParamSet<S>& params, const std::vector<nn::Vec<S>>& grads);
};

/// History of past generated images; once full, each query returns a stored
/// image with probability 1/2 and stores the new one in its place.
template <typename S>
class FakeBuffer {
 public:
  explicit FakeBuffer(std::size_t capacity) : capacity_(capacity) {}
  Tensor<S> query(const Tensor<S>& image, std::mt19937_64& rng);
  std::size_t size() const { return images_.size(); }

 private:
  std::size_t capacity_;
  std::vector<Tensor<S>> images_;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double cycle_weight = 10.0;
  std::uint64_t seed = 0;
  int tile_size = 64;
  int fake_buffer_size = 50;
  ModelSpec model;

  void validate() const;
};

struct TrainResult {
  TranslationModel<float> model;
  /// Epoch-averaged generator loss terms.
  std::vector<LossBreakdown> history;
};

using EpochCallback = std::function<void(int epoch, const LossBreakdown&)>;

/// Unpaired training on normalized tiles ([-1, 1], CHW). Deterministic given
/// the data and config.seed.
TrainResult train(const std::vector<Tensor<float>>& dataset_a, const std::vector<Tensor<float>>& dataset_b,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// `epoch,gan_ab,gan_ba,cyc,struct_ab,struct_ba,total`.
std::string loss_csv(const std::vector<LossBreakdown>& history);

// ---- image <-> tensor ------------------------------------------------------

template <typename S>
Tensor<S> to_tensor(const Image& image);
template <typename S>
Image to_image(const Tensor<S>& tensor);

/// Normalizes, applies G_AB and maps back to the 8-bit range (rounded,
/// clamped to [0, 255]).
Image virtual_stain(const TranslationModel<float>& model, const Image& input, pipeline::NormKind kind);

// ---- model file ------------------------------------------------------------

std::string encode_model(const TranslationModel<float>& model);
TranslationModel<float> decode_model(const std::string& bytes);
void save_model(const TranslationModel<float>& model, const std::filesystem::path& path);
TranslationModel<float> load_model(const std::filesystem::path& path);

/// FNV-1a over every parameter's bit pattern, in block order.
std::uint64_t parameter_checksum(const TranslationModel<float>& model);

}  // namespace fpstain::translate
