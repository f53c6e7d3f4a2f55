#include "fpstain/translate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fpstain/nn/ssim.hpp"
#include "fpstain/parallel.hpp"

namespace fpstain::translate {
namespace {

struct ConvDef {
  std::string name;
  int out;
  int in;
  int kernel;
};

std::vector<ConvDef> generator_layout(const GeneratorSpec& s) {
  const int w = s.base_width;
  std::vector<ConvDef> layers{
      {"stem", w, s.in_channels, s.edge_kernel},
      {"down1", 2 * w, w, 3},
      {"down2", 4 * w, 2 * w, 3},
  };
  for (int r = 0; r < s.res_blocks; ++r) {
    layers.push_back({"res" + std::to_string(r) + ".conv1", 4 * w, 4 * w, 3});
    layers.push_back({"res" + std::to_string(r) + ".conv2", 4 * w, 4 * w, 3});
  }
  layers.push_back({"up1", 2 * w, 4 * w, 3});
  layers.push_back({"up2", w, 2 * w, 3});
  layers.push_back({"head", s.out_channels, w, s.edge_kernel});
  return layers;
}

std::vector<ConvDef> discriminator_layout(const DiscriminatorSpec& s) {
  std::vector<ConvDef> layers;
  int in = s.in_channels;
  for (int i = 0; i < s.depth; ++i) {
    const int out = s.base_width << i;
    layers.push_back({"layer" + std::to_string(i), out, in, 3});
    in = out;
  }
  layers.push_back({"score", 1, in, 3});
  return layers;
}

template <typename S>
ParamSet<S> make_params(const std::vector<ConvDef>& layers) {
  ParamSet<S> set;
  for (const auto& l : layers) {
    set.blocks.push_back({l.name + ".w", {l.out, l.in, l.kernel, l.kernel},
                          nn::Vec<S>::Zero(static_cast<Eigen::Index>(l.out) * l.in * l.kernel * l.kernel)});
    set.blocks.push_back({l.name + ".b", {l.out}, nn::Vec<S>::Zero(l.out)});
  }
  return set;
}

template <typename S>
using Var = typename nn::Graph<S>::Var;

// Green plane of a 3-channel tensor, identity for single channel.
template <typename S>
Var<S> green_of(nn::Graph<S>& g, Var<S> x) {
  const int c = g.value(x).c;
  if (c == 3) return g.channel(x, 1);
  if (c == 1) return x;
  throw ShapeError("structure term expects 1- or 3-channel images");
}

template <typename S>
Var<S> structure_graph(nn::Graph<S>& g, Var<S> generated, Var<S> source, const metrics::SsimParams& params) {
  const Var<S> a = g.affine(green_of(g, generated), S(0.5), S(0.5));
  const Var<S> b = g.affine(green_of(g, source), S(0.5), S(0.5));
  return nn::ms_ssim(g, a, b, params);
}

template <typename S>
std::vector<nn::Vec<S>> collect(const nn::Graph<S>& g, const std::vector<Var<S>>& vars) {
  std::vector<nn::Vec<S>> out;
  out.reserve(vars.size());
  for (Var<S> v : vars) out.push_back(g.grad(v).v);
  return out;
}

template <typename S>
void accumulate(std::vector<nn::Vec<S>>& into, const std::vector<nn::Vec<S>>& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

template <typename S>
std::vector<nn::Vec<S>> zeros_for(const ParamSet<S>& set) {
  std::vector<nn::Vec<S>> out;
  for (const auto& b : set.blocks) out.push_back(nn::Vec<S>::Zero(b.value.size()));
  return out;
}

// One side of the cycle for a single sample: source -> G_fwd -> G_back, judged
// by D on the forward output.
struct SideTerms {
  double gan = 0.0;
  double cyc = 0.0;
  double ssim = 0.0;
};

template <typename S>
struct SideOutput {
  SideTerms terms;
  std::vector<nn::Vec<S>> grad_fwd, grad_back;
  Tensor<S> fake;
};

template <typename S>
SideOutput<S> run_side(const GeneratorParams<S>& forward, const GeneratorParams<S>& backward,
                       const DiscriminatorParams<S>& judge, const Tensor<S>& source, const LossOptions& options,
                       double batch_size, bool want_grads) {
  nn::Graph<S> g;
  const auto pf = bind(g, forward.params, want_grads);
  const auto pb = bind(g, backward.params, want_grads);
  const auto pd = bind(g, judge.params, false);
  const Var<S> x = g.constant(source);
  const Var<S> fake = generator_graph(g, forward.spec, pf, x);
  const Var<S> rec = generator_graph(g, backward.spec, pb, fake);
  const Var<S> gan = g.mse_to(discriminator_graph(g, judge.spec, pd, fake), S(1));
  const Var<S> cyc = g.l1(rec, x);
  const Var<S> ms = structure_graph(g, fake, x, options.ssim);

  SideOutput<S> out;
  out.terms = {static_cast<double>(g.scalar(gan)), static_cast<double>(g.scalar(cyc)),
               static_cast<double>(g.scalar(ms))};
  out.fake = g.value(fake);
  if (want_grads) {
    const S inv = static_cast<S>(1.0 / batch_size);
    Var<S> loss = g.add(g.affine(gan, inv, S(0)), g.affine(cyc, static_cast<S>(options.lambda) * inv, S(0)));
    loss = g.add(loss, g.affine(ms, static_cast<S>(-kStructureWeight) * inv, S(0)));
    g.backward(loss);
    out.grad_fwd = collect(g, pf);
    out.grad_back = collect(g, pb);
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

}  // namespace

// ---- parameter containers ---------------------------------------------------

template <typename S>
const ParamBlock<S>& ParamSet<S>::at(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw ConfigError("no parameter block named '" + name + "'");
}

template <typename S>
ParamBlock<S>& ParamSet<S>::at(const std::string& name) {
  for (auto& b : blocks)
    if (b.name == name) return b;
  throw ConfigError("no parameter block named '" + name + "'");
}

void ModelSpec::validate() const {
  if (domain_a_channels != 1 && domain_a_channels != 3) throw ConfigError("domain A must have 1 or 3 channels");
  if (domain_b_channels != 1 && domain_b_channels != 3) throw ConfigError("domain B must have 1 or 3 channels");
  if (generator_width < 1 || discriminator_width < 1) throw ConfigError("network widths must be positive");
  if (res_blocks < 0) throw ConfigError("residual block count must be nonnegative");
  if (edge_kernel < 1 || edge_kernel % 2 == 0) throw ConfigError("edge kernel must be odd");
  if (discriminator_depth < 1) throw ConfigError("discriminator depth must be at least 1");
}

template <typename S>
std::vector<std::pair<std::string, const ParamBlock<S>*>> TranslationModel<S>::named_blocks() const {
  std::vector<std::pair<std::string, const ParamBlock<S>*>> out;
  const std::pair<const char*, const ParamSet<S>*> sets[] = {
      {"g_ab", &g_ab.params}, {"g_ba", &g_ba.params}, {"d_a", &d_a.params}, {"d_b", &d_b.params}};
  for (const auto& [prefix, set] : sets)
    for (const auto& b : set->blocks) out.emplace_back(std::string(prefix) + "." + b.name, &b);
  return out;
}

template <typename S>
void TranslationModel<S>::validate() const {
  spec.validate();
  if (g_ab.spec.in_channels != spec.domain_a_channels || g_ab.spec.out_channels != spec.domain_b_channels ||
      g_ba.spec.in_channels != spec.domain_b_channels || g_ba.spec.out_channels != spec.domain_a_channels)
    throw ShapeError("generator channel counts disagree with the declared domains");
  for (const auto& [name, block] : named_blocks())
    if (!block->value.isFinite().all()) throw NumericError("parameter block " + name + " is not finite");
}

template <typename S>
template <typename T>
TranslationModel<T> TranslationModel<S>::cast() const {
  TranslationModel<T> out;
  out.spec = spec;
  out.meta = meta;
  auto convert = [](const ParamSet<S>& in) {
    ParamSet<T> set;
    for (const auto& b : in.blocks) set.blocks.push_back({b.name, b.shape, b.value.template cast<T>()});
    return set;
  };
  out.g_ab = {g_ab.spec, convert(g_ab.params)};
  out.g_ba = {g_ba.spec, convert(g_ba.params)};
  out.d_a = {d_a.spec, convert(d_a.params)};
  out.d_b = {d_b.spec, convert(d_b.params)};
  return out;
}

template <typename S>
GeneratorParams<S> make_generator(const GeneratorSpec& spec) {
  return {spec, make_params<S>(generator_layout(spec))};
}

template <typename S>
DiscriminatorParams<S> make_discriminator(const DiscriminatorSpec& spec) {
  return {spec, make_params<S>(discriminator_layout(spec))};
}

template <typename S>
TranslationModel<S> init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  TranslationModel<S> model;
  model.spec = spec;
  model.meta.seed = seed;
  model.g_ab = make_generator<S>(
      {spec.domain_a_channels, spec.domain_b_channels, spec.generator_width, spec.res_blocks, spec.edge_kernel});
  model.g_ba = make_generator<S>(
      {spec.domain_b_channels, spec.domain_a_channels, spec.generator_width, spec.res_blocks, spec.edge_kernel});
  model.d_a = make_discriminator<S>({spec.domain_a_channels, spec.discriminator_width, spec.discriminator_depth});
  model.d_b = make_discriminator<S>({spec.domain_b_channels, spec.discriminator_width, spec.discriminator_depth});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (ParamSet<S>* set : {&model.g_ab.params, &model.g_ba.params, &model.d_a.params, &model.d_b.params})
    for (auto& block : set->blocks)
      if (block.name.back() == 'w')
        for (Eigen::Index i = 0; i < block.value.size(); ++i) block.value[i] = static_cast<S>(normal(rng));
  return model;
}

template <typename S>
std::vector<Var<S>> bind(nn::Graph<S>& g, const ParamSet<S>& set, bool trainable) {
  std::vector<Var<S>> vars;
  vars.reserve(set.blocks.size());
  for (const auto& b : set.blocks) {
    Tensor<S> t(1, 1, static_cast<int>(b.value.size()));
    t.v = b.value;
    vars.push_back(trainable ? g.variable(std::move(t)) : g.constant(std::move(t)));
  }
  return vars;
}

template <typename S>
Var<S> generator_graph(nn::Graph<S>& g, const GeneratorSpec& spec, const std::vector<Var<S>>& params, Var<S> x) {
  if (g.value(x).c != spec.in_channels)
    throw ShapeError("generator expects " + std::to_string(spec.in_channels) + " input channel(s), got " +
                     std::to_string(g.value(x).c));
  std::size_t idx = 0;
  auto conv = [&](Var<S> in, int kernel, int stride) {
    const Var<S> w = params.at(idx++);
    const Var<S> b = params.at(idx++);
    return g.conv2d(in, w, b, kernel, stride, kernel / 2);
  };
  auto norm_relu = [&](Var<S> in) { return g.relu(g.instance_norm(in)); };

  const int h0 = g.value(x).h;
  const int w0 = g.value(x).w;
  Var<S> y = norm_relu(conv(x, spec.edge_kernel, 1));
  const Var<S> d1 = norm_relu(conv(y, 3, 2));
  const int h1 = g.value(d1).h;
  const int w1 = g.value(d1).w;
  y = norm_relu(conv(d1, 3, 2));
  for (int r = 0; r < spec.res_blocks; ++r) {
    Var<S> t = norm_relu(conv(y, 3, 1));
    t = g.instance_norm(conv(t, 3, 1));
    y = g.add(y, t);
  }
  y = norm_relu(conv(g.upsample2x(y, h1, w1), 3, 1));
  y = norm_relu(conv(g.upsample2x(y, h0, w0), 3, 1));
  return g.tanh(conv(y, spec.edge_kernel, 1));
}

template <typename S>
Var<S> discriminator_graph(nn::Graph<S>& g, const DiscriminatorSpec& spec, const std::vector<Var<S>>& params,
                           Var<S> x) {
  if (g.value(x).c != spec.in_channels)
    throw ShapeError("discriminator expects " + std::to_string(spec.in_channels) + " input channel(s), got " +
                     std::to_string(g.value(x).c));
  std::size_t idx = 0;
  auto conv = [&](Var<S> in, int stride) {
    const Var<S> w = params.at(idx++);
    const Var<S> b = params.at(idx++);
    return g.conv2d(in, w, b, 3, stride, 1);
  };
  const S slope = S(0.2);
  Var<S> y = g.leaky_relu(conv(x, 2), slope);
  for (int i = 1; i < spec.depth; ++i) y = g.leaky_relu(g.instance_norm(conv(y, 2)), slope);
  return conv(y, 1);
}

int discriminator_map_size(int input_size, int depth) {
  int n = input_size;
  for (int i = 0; i < depth; ++i) n = (n + 1) / 2;
  return n;
}

template <typename S>
Tensor<S> generator_forward(const GeneratorParams<S>& params, const Tensor<S>& image) {
  nn::Graph<S> g;
  const auto vars = bind(g, params.params, false);
  return g.value(generator_graph(g, params.spec, vars, g.constant(image)));
}

template <typename S>
Tensor<S> discriminator_forward(const DiscriminatorParams<S>& params, const Tensor<S>& image) {
  nn::Graph<S> g;
  const auto vars = bind(g, params.params, false);
  return g.value(discriminator_graph(g, params.spec, vars, g.constant(image)));
}

// ---- losses -----------------------------------------------------------------

bool LossBreakdown::finite() const {
  return std::isfinite(gan_ab) && std::isfinite(gan_ba) && std::isfinite(cyc) && std::isfinite(struct_ab) &&
         std::isfinite(struct_ba) && std::isfinite(total);
}

std::string LossBreakdown::describe() const {
  return "gan_ab=" + fmt(gan_ab) + " gan_ba=" + fmt(gan_ba) + " cyc=" + fmt(cyc) + " struct_ab=" + fmt(struct_ab) +
         " struct_ba=" + fmt(struct_ba) + " total=" + fmt(total);
}

template <typename S>
ModelGrads<S> ModelGrads<S>::zeros_like(const TranslationModel<S>& model) {
  return {zeros_for(model.g_ab.params), zeros_for(model.g_ba.params), zeros_for(model.d_a.params),
          zeros_for(model.d_b.params)};
}

template <typename S>
void ModelGrads<S>::add(const ModelGrads& other) {
  accumulate(g_ab, other.g_ab);
  accumulate(g_ba, other.g_ba);
  accumulate(d_a, other.d_a);
  accumulate(d_b, other.d_b);
}

template <typename S>
LossBreakdown generator_objective(const TranslationModel<S>& model, const std::vector<Tensor<S>>& batch_a,
                                  const std::vector<Tensor<S>>& batch_b, const LossOptions& options,
                                  ModelGrads<S>* grads, std::vector<Tensor<S>>* fakes_b,
                                  std::vector<Tensor<S>>* fakes_a) {
  if (batch_a.empty() || batch_b.empty()) throw EmptyInputError("generator objective needs nonempty batches");
  if (!(options.lambda > 0.0)) throw ConfigError("cycle weight must be positive");
  const std::size_t na = batch_a.size();
  const std::size_t nb = batch_b.size();
  const bool want = grads != nullptr;
  std::vector<SideOutput<S>> outs(na + nb);
  parallel_for(na + nb, [&](std::size_t i) {
    if (i < na)
      outs[i] = run_side(model.g_ab, model.g_ba, model.d_b, batch_a[i], options, static_cast<double>(na), want);
    else
      outs[i] = run_side(model.g_ba, model.g_ab, model.d_a, batch_b[i - na], options, static_cast<double>(nb), want);
  });

  double gan_a = 0, cyc_a = 0, ms_a = 0, gan_b = 0, cyc_b = 0, ms_b = 0;
  for (std::size_t i = 0; i < na; ++i) {
    gan_a += outs[i].terms.gan;
    cyc_a += outs[i].terms.cyc;
    ms_a += outs[i].terms.ssim;
  }
  for (std::size_t i = na; i < na + nb; ++i) {
    gan_b += outs[i].terms.gan;
    cyc_b += outs[i].terms.cyc;
    ms_b += outs[i].terms.ssim;
  }
  LossBreakdown loss;
  loss.gan_ab = gan_a / static_cast<double>(na);
  loss.gan_ba = gan_b / static_cast<double>(nb);
  loss.cyc = options.lambda * (cyc_a / static_cast<double>(na) + cyc_b / static_cast<double>(nb));
  loss.struct_ab = kStructureWeight * (1.0 - ms_a / static_cast<double>(na));
  loss.struct_ba = kStructureWeight * (1.0 - ms_b / static_cast<double>(nb));
  loss.finalize();
  const std::pair<const char*, double> named[] = {{"gan_ab", loss.gan_ab},       {"gan_ba", loss.gan_ba},
                                                  {"cyc", loss.cyc},             {"struct_ab", loss.struct_ab},
                                                  {"struct_ba", loss.struct_ba}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name + " (" + loss.describe() + ")");

  if (grads) {
    for (std::size_t i = 0; i < na; ++i) {
      accumulate(grads->g_ab, outs[i].grad_fwd);
      accumulate(grads->g_ba, outs[i].grad_back);
    }
    for (std::size_t i = na; i < na + nb; ++i) {
      accumulate(grads->g_ba, outs[i].grad_fwd);
      accumulate(grads->g_ab, outs[i].grad_back);
    }
  }
  if (fakes_b) {
    fakes_b->clear();
    for (std::size_t i = 0; i < na; ++i) fakes_b->push_back(std::move(outs[i].fake));
  }
  if (fakes_a) {
    fakes_a->clear();
    for (std::size_t i = na; i < na + nb; ++i) fakes_a->push_back(std::move(outs[i].fake));
  }
  return loss;
}

template <typename S>
double cycle_error(const TranslationModel<S>& model, const std::vector<Tensor<S>>& batch_a,
                   const std::vector<Tensor<S>>& batch_b) {
  auto side = [](const GeneratorParams<S>& fwd, const GeneratorParams<S>& back, const std::vector<Tensor<S>>& batch) {
    double sum = 0.0;
    for (const auto& x : batch) {
      const Tensor<S> rec = generator_forward(back, generator_forward(fwd, x));
      sum += static_cast<double>((rec.v - x.v).abs().sum() / static_cast<S>(x.size()));
    }
    return sum / static_cast<double>(batch.size());
  };
  return side(model.g_ab, model.g_ba, batch_a) + side(model.g_ba, model.g_ab, batch_b);
}

template <typename S>
double structure_similarity(const Tensor<S>& generated, const Tensor<S>& source, const metrics::SsimParams& params) {
  nn::Graph<S> g;
  return static_cast<double>(g.scalar(structure_graph(g, g.constant(generated), g.constant(source), params)));
}

template <typename S>
double discriminator_objective(const DiscriminatorParams<S>& params, const std::vector<Tensor<S>>& real,
                               const std::vector<Tensor<S>>& fake, std::vector<nn::Vec<S>>* grads) {
  if (real.empty() || fake.empty()) throw EmptyInputError("discriminator objective needs real and fake samples");
  const std::size_t nr = real.size();
  const std::size_t nf = fake.size();
  std::vector<double> values(nr + nf);
  std::vector<std::vector<nn::Vec<S>>> parts(nr + nf);
  parallel_for(nr + nf, [&](std::size_t i) {
    nn::Graph<S> g;
    const auto vars = bind(g, params.params, grads != nullptr);
    const bool is_real = i < nr;
    const Var<S> x = g.constant(is_real ? real[i] : fake[i - nr]);
    const Var<S> loss = g.mse_to(discriminator_graph(g, params.spec, vars, x), is_real ? S(1) : S(0));
    values[i] = static_cast<double>(g.scalar(loss));
    if (grads) {
      g.backward(loss, static_cast<S>(0.5 / static_cast<double>(is_real ? nr : nf)));
      parts[i] = collect(g, vars);
    }
  });
  double real_sum = 0.0, fake_sum = 0.0;
  for (std::size_t i = 0; i < nr; ++i) real_sum += values[i];
  for (std::size_t i = nr; i < nr + nf; ++i) fake_sum += values[i];
  if (grads) {
    *grads = zeros_for(params.params);
    for (const auto& p : parts) accumulate(*grads, p);
  }
  return 0.5 * (real_sum / static_cast<double>(nr) + fake_sum / static_cast<double>(nf));
}

template <typename S>
void Adam<S>::step(ParamSet<S>& params, const std::vector<nn::Vec<S>>& grads) {
  if (m.empty()) {
    m = zeros_for(params);
    v = zeros_for(params);
  }
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  const S b1 = static_cast<S>(beta1);
  const S b2 = static_cast<S>(beta2);
  const S lr = static_cast<S>(learning_rate / c1);
  const S inv_c2 = static_cast<S>(1.0 / c2);
  const S e = static_cast<S>(eps);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    m[i] = b1 * m[i] + (S(1) - b1) * grads[i];
    v[i] = b2 * v[i] + (S(1) - b2) * grads[i].square();
    params.blocks[i].value -= lr * m[i] / ((v[i] * inv_c2).sqrt() + e);
  }
}

template <typename S>
Tensor<S> FakeBuffer<S>::query(const Tensor<S>& image, std::mt19937_64& rng) {
  if (capacity_ == 0) return image;
  if (images_.size() < capacity_) {
    images_.push_back(image);
    return image;
  }
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  if (u > 0.5) {
    const std::size_t idx = static_cast<std::size_t>(rng() % capacity_);
    Tensor<S> old = std::move(images_[idx]);
    images_[idx] = image;
    return old;
  }
  return image;
}

// ---- training -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(cycle_weight > 0.0)) throw ConfigError("cycle weight must be positive");
  if (fake_buffer_size < 0) throw ConfigError("fake buffer size must be nonnegative");
  if (tile_size < 11) throw ConfigError("tile size is below the smallest multiscale SSIM input");
  model.validate();
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng() % i)]);
  return p;
}

void check_dataset(const std::vector<Tensor<float>>& data, int channels, const char* label) {
  if (data.empty()) throw EmptyInputError(std::string(label) + " dataset is empty");
  for (const auto& t : data)
    if (t.c != channels)
      throw ShapeError(std::string(label) + " tile has " + std::to_string(t.c) + " channel(s), model expects " +
                       std::to_string(channels));
}

}  // namespace

TrainResult train(const std::vector<Tensor<float>>& dataset_a, const std::vector<Tensor<float>>& dataset_b,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_dataset(dataset_a, config.model.domain_a_channels, "domain A");
  check_dataset(dataset_b, config.model.domain_b_channels, "domain B");

  TrainResult result;
  result.model = init_model<float>(config.model, config.seed);
  TranslationModel<float>& model = result.model;

  auto make_adam = [&] {
    Adam<float> adam;
    adam.learning_rate = config.learning_rate;
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    return adam;
  };
  Adam<float> opt_g_ab = make_adam(), opt_g_ba = make_adam(), opt_d_a = make_adam(), opt_d_b = make_adam();
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::mt19937_64 buffer_rng(config.seed + 0x5851F42D4C957F2DULL);
  FakeBuffer<float> pool_a(static_cast<std::size_t>(config.fake_buffer_size));
  FakeBuffer<float> pool_b(static_cast<std::size_t>(config.fake_buffer_size));

  LossOptions options;
  options.lambda = config.cycle_weight;
  const std::size_t na = dataset_a.size();
  const std::size_t nb = dataset_b.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches = (std::max(na, nb) + bs - 1) / bs;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm_a = permutation(na, shuffle_rng);
    const auto perm_b = permutation(nb, shuffle_rng);
    LossBreakdown sum;
    LossBreakdown last;
    for (std::size_t k = 0; k < batches; ++k) {
      std::vector<Tensor<float>> batch_a, batch_b;
      for (std::size_t j = 0; j < bs; ++j) {
        batch_a.push_back(dataset_a[perm_a[(k * bs + j) % na]]);
        batch_b.push_back(dataset_b[perm_b[(k * bs + j) % nb]]);
      }
      ModelGrads<float> grads = ModelGrads<float>::zeros_like(model);
      std::vector<Tensor<float>> fakes_b, fakes_a;
      try {
        last = generator_objective(model, batch_a, batch_b, options, &grads, &fakes_b, &fakes_a);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted at epoch ") + std::to_string(epoch + 1) + ": " + e.what());
      }
      opt_g_ab.step(model.g_ab.params, grads.g_ab);
      opt_g_ba.step(model.g_ba.params, grads.g_ba);

      std::vector<Tensor<float>> replay_b, replay_a;
      for (const auto& f : fakes_b) replay_b.push_back(pool_b.query(f, buffer_rng));
      for (const auto& f : fakes_a) replay_a.push_back(pool_a.query(f, buffer_rng));
      std::vector<nn::Vec<float>> grad_d;
      discriminator_objective(model.d_b, batch_b, replay_b, &grad_d);
      opt_d_b.step(model.d_b.params, grad_d);
      discriminator_objective(model.d_a, batch_a, replay_a, &grad_d);
      opt_d_a.step(model.d_a.params, grad_d);

      if (!model.g_ab.params.all_finite() || !model.g_ba.params.all_finite() || !model.d_a.params.all_finite() ||
          !model.d_b.params.all_finite())
        throw NumericError("training aborted at epoch " + std::to_string(epoch + 1) +
                           ": parameters became non-finite after " + last.describe());

      sum.gan_ab += last.gan_ab;
      sum.gan_ba += last.gan_ba;
      sum.cyc += last.cyc;
      sum.struct_ab += last.struct_ab;
      sum.struct_ba += last.struct_ba;
    }
    const double n = static_cast<double>(batches);
    LossBreakdown avg;
    avg.gan_ab = sum.gan_ab / n;
    avg.gan_ba = sum.gan_ba / n;
    avg.cyc = sum.cyc / n;
    avg.struct_ab = sum.struct_ab / n;
    avg.struct_ba = sum.struct_ba / n;
    avg.finalize();
    result.history.push_back(avg);
    ++model.meta.epochs_seen;
    if (on_epoch) on_epoch(epoch + 1, avg);
  }
  return result;
}

std::string loss_csv(const std::vector<LossBreakdown>& history) {
  std::ostringstream out;
  out << "epoch,gan_ab,gan_ba,cyc,struct_ab,struct_ba,total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << (i + 1) << ',' << fmt(h.gan_ab) << ',' << fmt(h.gan_ba) << ',' << fmt(h.cyc) << ',' << fmt(h.struct_ab)
        << ',' << fmt(h.struct_ba) << ',' << fmt(h.total) << '\n';
  }
  return out.str();
}

// ---- images -------------------------------------------------------------------

template <typename S>
Tensor<S> to_tensor(const Image& image) {
  Tensor<S> t(image.channels(), image.height(), image.width());
  for (int c = 0; c < image.channels(); ++c)
    t.channel(c) = Eigen::Map<const nn::Vec<double>>(image.planes[c].data(), t.plane()).cast<S>();
  return t;
}

template <typename S>
Image to_image(const Tensor<S>& tensor) {
  Image image(tensor.c, tensor.h, tensor.w);
  for (int c = 0; c < tensor.c; ++c)
    Eigen::Map<nn::Vec<double>>(image.planes[c].data(), tensor.plane()) = tensor.channel(c).template cast<double>();
  return image;
}

Image virtual_stain(const TranslationModel<float>& model, const Image& input, pipeline::NormKind kind) {
  if (input.channels() != model.spec.domain_a_channels)
    throw ShapeError("model expects " + std::to_string(model.spec.domain_a_channels) + " input channel(s), got " +
                     std::to_string(input.channels()));
  const Tensor<float> x = to_tensor<float>(pipeline::normalize_for_network(input, kind));
  Image out = pipeline::denormalize_from_network(to_image(generator_forward(model.g_ab, x)),
                                                 pipeline::NormKind::Intensity8);
  for (auto& plane : out.planes) plane = plane.round().max(0.0).min(255.0);
  return out;
}

// ---- explicit instantiations ----------------------------------------------------

#define FPSTAIN_INSTANTIATE(S)                                                                                  \
  template struct ParamSet<S>;                                                                                  \
  template struct TranslationModel<S>;                                                                          \
  template struct ModelGrads<S>;                                                                                \
  template struct Adam<S>;                                                                                      \
  template class FakeBuffer<S>;                                                                                 \
  template GeneratorParams<S> make_generator<S>(const GeneratorSpec&);                                          \
  template DiscriminatorParams<S> make_discriminator<S>(const DiscriminatorSpec&);                              \
  template TranslationModel<S> init_model<S>(const ModelSpec&, std::uint64_t);                                  \
  template std::vector<Var<S>> bind<S>(nn::Graph<S>&, const ParamSet<S>&, bool);                                \
  template Var<S> generator_graph<S>(nn::Graph<S>&, const GeneratorSpec&, const std::vector<Var<S>>&, Var<S>);  \
  template Var<S> discriminator_graph<S>(nn::Graph<S>&, const DiscriminatorSpec&, const std::vector<Var<S>>&,   \
                                         Var<S>);                                                               \
  template Tensor<S> generator_forward<S>(const GeneratorParams<S>&, const Tensor<S>&);                         \
  template Tensor<S> discriminator_forward<S>(const DiscriminatorParams<S>&, const Tensor<S>&);                 \
  template LossBreakdown generator_objective<S>(const TranslationModel<S>&, const std::vector<Tensor<S>>&,      \
                                                const std::vector<Tensor<S>>&, const LossOptions&,              \
                                                ModelGrads<S>*, std::vector<Tensor<S>>*,                        \
                                                std::vector<Tensor<S>>*);                                       \
  template double cycle_error<S>(const TranslationModel<S>&, const std::vector<Tensor<S>>&,                     \
                                 const std::vector<Tensor<S>>&);                                                \
  template double structure_similarity<S>(const Tensor<S>&, const Tensor<S>&, const metrics::SsimParams&);      \
  template double discriminator_objective<S>(const DiscriminatorParams<S>&, const std::vector<Tensor<S>>&,      \
                                             const std::vector<Tensor<S>>&, std::vector<nn::Vec<S>>*);          \
  template Tensor<S> to_tensor<S>(const Image&);                                                                \
  template Image to_image<S>(const Tensor<S>&);

FPSTAIN_INSTANTIATE(float)
FPSTAIN_INSTANTIATE(double)

template TranslationModel<double> TranslationModel<float>::cast<double>() const;
template TranslationModel<float> TranslationModel<double>::cast<float>() const;
template TranslationModel<float> TranslationModel<float>::cast<float>() const;
template TranslationModel<double> TranslationModel<double>::cast<double>() const;

}  // namespace fpstain::translate
