#include <bit>
#include <map>
#include <sstream>

#include "fpstain/io.hpp"
#include "fpstain/translate.hpp"

namespace fpstain::translate {
namespace {

constexpr char kMagic[4] = {'F', 'P', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("model file truncated while reading ") + what, pos_);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string trailer(const TranslationModel<float>& model) {
  const ModelSpec& s = model.spec;
  std::ostringstream out;
  out << "format_version=" << kVersion << "\n"
      << "domain_a_channels=" << s.domain_a_channels << "\n"
      << "domain_b_channels=" << s.domain_b_channels << "\n"
      << "generator_width=" << s.generator_width << "\n"
      << "res_blocks=" << s.res_blocks << "\n"
      << "edge_kernel=" << s.edge_kernel << "\n"
      << "discriminator_width=" << s.discriminator_width << "\n"
      << "discriminator_depth=" << s.discriminator_depth << "\n"
      << "epochs_seen=" << model.meta.epochs_seen << "\n"
      << "seed=" << model.meta.seed << "\n";
  return out.str();
}

}  // namespace

std::string encode_model(const TranslationModel<float>& model) {
  model.validate();
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  const auto blocks = model.named_blocks();
  put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, block] : blocks) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(block->shape.size()));
    for (int d : block->shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < block->value.size(); ++i) put_f32(out, block->value[i]);
  }
  const std::string meta = trailer(model);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  return out;
}

TranslationModel<float> decode_model(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("not a model file (bad magic)", 0);
  const std::size_t version_at = in.pos();
  if (in.u32("version") != kVersion) throw FormatError("unsupported model format version", version_at);
  const std::uint32_t count = in.u32("block count");

  struct Raw {
    std::string name;
    std::vector<int> shape;
    nn::Vec<float> value;
  };
  std::vector<Raw> raw;
  for (std::uint32_t b = 0; b < count; ++b) {
    Raw r;
    r.name = in.str(in.u32("block name length"), "block name");
    const std::uint32_t rank = in.u32("block rank");
    if (rank > 8) throw FormatError("implausible rank for block " + r.name, in.pos());
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = in.u32("block shape");
      r.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    if (n > bytes.size()) throw FormatError("block " + r.name + " is larger than the file", in.pos());
    r.value.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) r.value[static_cast<Eigen::Index>(i)] = in.f32("block data");
    raw.push_back(std::move(r));
  }
  const std::string meta = in.str(in.u32("trailer length"), "trailer");

  std::map<std::string, std::string> kv;
  std::istringstream lines(meta);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("model trailer lacks ") + key, in.pos());
    return it->second;
  };
  ModelSpec spec;
  spec.domain_a_channels = std::stoi(get("domain_a_channels"));
  spec.domain_b_channels = std::stoi(get("domain_b_channels"));
  spec.generator_width = std::stoi(get("generator_width"));
  spec.res_blocks = std::stoi(get("res_blocks"));
  spec.edge_kernel = std::stoi(get("edge_kernel"));
  spec.discriminator_width = std::stoi(get("discriminator_width"));
  spec.discriminator_depth = std::stoi(get("discriminator_depth"));
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model trailer describes an invalid network: ") + e.what(), in.pos());
  }

  TranslationModel<float> model = init_model<float>(spec, 0);
  model.meta.epochs_seen = std::stoi(get("epochs_seen"));
  model.meta.seed = std::stoull(get("seed"));
  const auto expected = model.named_blocks();
  if (expected.size() != raw.size()) throw FormatError("model block count does not match its architecture", 8);
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw[i].name != expected[i].first || raw[i].shape != expected[i].second->shape)
      throw FormatError("model block " + raw[i].name + " does not match the architecture (expected " +
                            expected[i].first + ")",
                        0);
  std::size_t i = 0;
  for (ParamSet<float>* set : {&model.g_ab.params, &model.g_ba.params, &model.d_a.params, &model.d_b.params})
    for (auto& block : set->blocks) block.value = std::move(raw[i++].value);
  model.validate();
  return model;
}

void save_model(const TranslationModel<float>& model, const std::filesystem::path& path) {
  io::atomic_write(path, encode_model(model));
}

TranslationModel<float> load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

std::uint64_t parameter_checksum(const TranslationModel<float>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, block] : model.named_blocks()) {
    for (Eigen::Index i = 0; i < block->value.size(); ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(block->value[i]);
      for (int k = 0; k < 4; ++k) {
        h ^= (bits >> (8 * k)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace fpstain::translate
