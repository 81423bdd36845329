#include "cgmlp/model.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace cgmlp {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config field '" + key + "': expected integer, got '" + value + "'");
  }
}

}  // namespace

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::kCifar10 ? "cifar10" : "cifar100";
}

DatasetKind parse_dataset(const std::string& s) {
  if (s == "cifar10") return DatasetKind::kCifar10;
  if (s == "cifar100") return DatasetKind::kCifar100;
  throw ConfigError("unknown dataset '" + s + "' (expected cifar10 or cifar100)");
}

int num_classes_of(DatasetKind kind) { return kind == DatasetKind::kCifar10 ? 10 : 100; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (stem_layers < 0) fail("stem_layers", "must be >= 0");
  if (static_cast<std::size_t>(stem_layers) != stem_channels.size()) {
    fail("stem_channels", "has " + std::to_string(stem_channels.size()) +
                              " entries but stem_layers = " + std::to_string(stem_layers));
  }
  for (int c : stem_channels) {
    if (c <= 0) fail("stem_channels", "entries must be positive");
  }
  if (stem_layers > 0) {
    if (stem_layers > 5 || kImageSize % (std::size_t{1} << stem_layers) != 0) {
      fail("stem_layers", "32 is not divisible by 2^" + std::to_string(stem_layers));
    }
  } else {
    if (patch_size <= 0 || kImageSize % static_cast<std::size_t>(patch_size) != 0) {
      fail("patch_size", "32 is not divisible by " + std::to_string(patch_size));
    }
  }
  if (d_model <= 0 || d_model % 2 != 0) fail("d_model", "must be positive and even");
  if (d_ffn <= 0 || d_ffn % 2 != 0) fail("d_ffn", "must be positive and even");
  if (num_blocks < 0) fail("num_blocks", "must be >= 0");
  if (gating.size() != static_cast<std::size_t>(num_blocks)) {
    fail("gating", "has " + std::to_string(gating.size()) + " entries but num_blocks = " +
                       std::to_string(num_blocks));
  }
  const bool any_channel =
      std::find(gating.begin(), gating.end(), nn::Gating::kChannel) != gating.end();
  if (any_channel && tokens() % 2 != 0) {
    fail("gating", "channel gating needs an even token count, got " + std::to_string(tokens()));
  }
  if (num_classes != num_classes_of(dataset)) {
    fail("num_classes", std::to_string(num_classes) + " does not match dataset " +
                            to_string(dataset));
  }
}

std::size_t ModelConfig::tokens() const {
  if (stem_layers > 0) {
    const std::size_t side = kImageSize >> stem_layers;
    return side * side;
  }
  const std::size_t side = kImageSize / static_cast<std::size_t>(patch_size);
  return side * side;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "name=" << name << '\n';
  os << "dataset=" << to_string(dataset) << '\n';
  os << "stem_layers=" << stem_layers << '\n';
  os << "stem_channels=";
  for (std::size_t i = 0; i < stem_channels.size(); ++i) os << (i ? "," : "") << stem_channels[i];
  os << '\n';
  os << "patch_size=" << patch_size << '\n';
  os << "d_model=" << d_model << '\n';
  os << "d_ffn=" << d_ffn << '\n';
  os << "num_blocks=" << num_blocks << '\n';
  os << "gating=";
  for (std::size_t i = 0; i < gating.size(); ++i) os << (i ? "," : "") << nn::to_string(gating[i]);
  os << '\n';
  os << "num_classes=" << num_classes << '\n';
  os << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig cfg;
  cfg.gating.clear();
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config field '" + key + "' given twice");
    if (key == "name") {
      cfg.name = value;
    } else if (key == "dataset") {
      cfg.dataset = parse_dataset(value);
    } else if (key == "stem_layers") {
      cfg.stem_layers = parse_int(key, value);
    } else if (key == "stem_channels") {
      cfg.stem_channels.clear();
      for (const auto& v : split_list(value)) cfg.stem_channels.push_back(parse_int(key, v));
    } else if (key == "patch_size") {
      cfg.patch_size = parse_int(key, value);
    } else if (key == "d_model") {
      cfg.d_model = parse_int(key, value);
    } else if (key == "d_ffn") {
      cfg.d_ffn = parse_int(key, value);
    } else if (key == "num_blocks") {
      cfg.num_blocks = parse_int(key, value);
    } else if (key == "gating") {
      for (const auto& v : split_list(value)) cfg.gating.push_back(nn::parse_gating(v));
    } else if (key == "num_classes") {
      cfg.num_classes = parse_int(key, value);
    } else if (key == "seed") {
      try {
        cfg.seed = std::stoull(value);
      } catch (const std::exception&) {
        throw ConfigError("config field 'seed': expected unsigned integer, got '" + value + "'");
      }
    } else {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }
  if (!seen.count("num_classes")) cfg.num_classes = num_classes_of(cfg.dataset);
  if (!seen.count("gating")) {
    cfg.gating.assign(static_cast<std::size_t>(std::max(cfg.num_blocks, 0)), nn::Gating::kSpatial);
  }
  cfg.validate();
  return cfg;
}

void ModelConfig::set_width(int d) {
  d_model = d;
  d_ffn = 2 * d;
}

ModelConfig ModelConfig::preset(const std::string& name, DatasetKind dataset) {
  ModelConfig cfg;
  cfg.name = name;
  cfg.dataset = dataset;
  cfg.num_classes = num_classes_of(dataset);
  cfg.gating.assign(static_cast<std::size_t>(cfg.num_blocks), nn::Gating::kSpatial);
  if (name == "gmlp4") {
    cfg.stem_layers = 0;
    cfg.patch_size = 4;
  } else if (name == "cgmlp1") {
    cfg.stem_layers = 1;
    cfg.stem_channels = {32};
  } else if (name == "cgmlp2") {
    cfg.stem_layers = 2;
    cfg.stem_channels = {32, 64};
  } else {
    throw ConfigError("unknown model preset '" + name + "' (expected gmlp4, cgmlp1 or cgmlp2)");
  }
  return cfg;
}

std::vector<std::string> ModelConfig::preset_names() { return {"gmlp4", "cgmlp1", "cgmlp2"}; }

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  std::size_t cin = kImageChannels;
  for (int c : cfg.stem_channels) {
    m.stem_.push_back(nn::make_conv_stem_block<T>(cin, static_cast<std::size_t>(c), rng));
    cin = static_cast<std::size_t>(c);
  }
  if (cfg.stem_layers == 0) {
    m.patch_ = nn::make_patch_embed<T>(kImageChannels, static_cast<std::size_t>(cfg.patch_size), d,
                                       rng);
  } else {
    m.tokenizer_ = nn::make_affine<T>(cin, d, rng);
  }
  for (nn::Gating g : cfg.gating) {
    m.blocks_.push_back(
        nn::make_gmlp_block<T>(cfg.tokens(), d, static_cast<std::size_t>(cfg.d_ffn), g, rng));
  }
  m.head_ = nn::make_affine<T>(d, static_cast<std::size_t>(cfg.num_classes), rng);
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, nn::FeatureTaps<T>* taps) const {
  if (batch.rank() != 4 || batch.dim(1) != kImageChannels || batch.dim(2) != kImageSize ||
      batch.dim(3) != kImageSize) {
    throw ShapeError("model forward: expected [B x 3 x 32 x 32], got " + to_string(batch.shape()));
  }
  Tensor<T> x;
  if (patch_) {
    x = nn::patch_embed(batch, *patch_);
  } else {
    x = nn::tokenize_featuremap(nn::conv_stem(batch, stem_, taps), *tokenizer_);
  }
  for (const auto& blk : blocks_) x = nn::gmlp_block(x, blk);
  return nn::classify_head(x, head_);
}

template <typename T>
Model<T> Model<T>::bind(Tape<T>& tape) const {
  Model bound = *this;
  bound.for_each_param([&](const std::string&, Tensor<T>& t) { t = tape.watch(t); });
  return bound;
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy = *this;
  copy.for_each_param([](const std::string&, Tensor<T>& t) { t = t.clone(); });
  return copy;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out = Model<U>::build(cfg_);
  auto src = parameters();
  std::size_t i = 0;
  out.for_each_param([&](const std::string&, Tensor<U>& t) { t = src[i++].second.template cast<U>(); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  const_cast<Model*>(this)->for_each_param(
      [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> Model<T>::tap_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    names.push_back("stem." + std::to_string(i) + ".act");
    names.push_back("stem." + std::to_string(i) + ".pool");
  }
  return names;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace cgmlp
