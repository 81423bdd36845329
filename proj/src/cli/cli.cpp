#include "cgmlp/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cgmlp/checkpoint.hpp"
#include "cgmlp/cifar.hpp"
#include "cgmlp/model_gradcheck.hpp"
#include "cgmlp/model.hpp"
#include "cgmlp/ops.hpp"
#include "cgmlp/training.hpp"
#include "cgmlp/visualize.hpp"

namespace cgmlp::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct CliConfig {
  std::string subcommand;
  std::string data_dir;
  std::string dataset = "cifar100";
  std::vector<std::string> models;
  std::uint64_t seed = 0;
  int epochs = 60;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  int patience = 5;
  double min_delta = 0.001;
  int d_model = 0;  // 0 keeps the preset width
  std::vector<int> stem_channels;  // empty keeps the preset widths
  std::string out_dir = "out";
  std::string checkpoint;
  std::vector<std::string> layers;
  std::size_t image_index = 0;
  double val_fraction = 0.1;
  int threads = 1;
  std::string precision;
  std::size_t max_train = 0;
  std::size_t max_val = 0;
};

// gradcheck defaults to the smallest full model: width 16 and stem widths
// divided by 8, so the preset cgmlp2 stem [32, 64] becomes [4, 8].
constexpr int kGradcheckWidth = 16;
constexpr int kGradcheckStemDivisor = 8;

std::string default_data_dir() {
  const char* env = std::getenv("CGMLP_DATA_DIR");
  return env ? env : "data";
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

void print_model(std::ostream& out, const ModelConfig& cfg) {
  out << "model " << cfg.name << ":\n";
  std::istringstream lines(cfg.to_text());
  for (std::string line; std::getline(lines, line);) out << "  " << line << '\n';
}

void print_config(std::ostream& out, const CliConfig& c, const std::vector<ModelConfig>& cfgs) {
  out << "resolved config:\n"
      << "  subcommand=" << c.subcommand << '\n'
      << "  data_dir=" << c.data_dir << '\n'
      << "  dataset=" << c.dataset << '\n'
      << "  model=" << join(c.models) << '\n'
      << "  seed=" << c.seed << '\n'
      << "  epochs=" << c.epochs << '\n'
      << "  batch_size=" << c.batch_size << '\n'
      << "  lr=" << c.lr << '\n'
      << "  patience=" << c.patience << '\n'
      << "  min_delta=" << c.min_delta << '\n'
      << "  d_model=" << (c.d_model ? std::to_string(c.d_model) : "default") << '\n'
      << "  stem_channels=" << (c.stem_channels.empty() ? "default" : join(c.stem_channels)) << '\n'
      << "  out_dir=" << c.out_dir << '\n'
      << "  checkpoint=" << c.checkpoint << '\n'
      << "  layers=" << (c.layers.empty() ? "all" : join(c.layers)) << '\n'
      << "  image_index=" << c.image_index << '\n'
      << "  val_fraction=" << c.val_fraction << '\n'
      << "  threads=" << c.threads << '\n'
      << "  precision=" << c.precision << '\n'
      << "  max_train=" << (c.max_train ? std::to_string(c.max_train) : "all") << '\n'
      << "  max_val=" << (c.max_val ? std::to_string(c.max_val) : "all") << '\n';
  for (const auto& cfg : cfgs) print_model(out, cfg);
}

ModelConfig resolve_model(const std::string& spec, const CliConfig& c) {
  const DatasetKind kind = parse_dataset(c.dataset);
  ModelConfig cfg;
  const auto presets = ModelConfig::preset_names();
  if (std::find(presets.begin(), presets.end(), spec) != presets.end()) {
    cfg = ModelConfig::preset(spec, kind);
  } else if (fs::exists(spec)) {
    std::ifstream in(spec);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = ModelConfig::from_text(ss.str());
    if (cfg.dataset != kind) {
      throw UsageError("config file " + spec + " targets " + to_string(cfg.dataset) +
                       " but --dataset is " + c.dataset);
    }
  } else {
    throw UsageError("--model '" + spec + "' is neither a preset (gmlp4, cgmlp1, cgmlp2) nor a file");
  }
  if (c.d_model > 0) {
    cfg.set_width(c.d_model);
  } else if (c.subcommand == "gradcheck") {
    cfg.set_width(kGradcheckWidth);
  }
  if (c.stem_channels.empty() && c.subcommand == "gradcheck") {
    for (int& ch : cfg.stem_channels) ch = std::max(1, ch / kGradcheckStemDivisor);
  }
  if (!c.stem_channels.empty()) {
    if (static_cast<int>(c.stem_channels.size()) != cfg.stem_layers) {
      throw UsageError("--stem-channels has " + std::to_string(c.stem_channels.size()) +
                       " entries but model " + cfg.name + " has " +
                       std::to_string(cfg.stem_layers) + " stem layers");
    }
    cfg.stem_channels = c.stem_channels;
  }
  cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

std::vector<ModelConfig> resolve_models(const CliConfig& c) {
  std::vector<ModelConfig> cfgs;
  for (const auto& m : c.models) cfgs.push_back(resolve_model(m, c));
  return cfgs;
}

void validate_common(const CliConfig& c) {
  parse_dataset(c.dataset);
  if (c.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (c.batch_size < 1) throw UsageError("--batch-size must be >= 1");
  if (!(c.lr > 0.0)) throw UsageError("--lr must be positive");
  if (c.patience < 1) throw UsageError("--patience must be >= 1");
  if (c.min_delta < 0.0) throw UsageError("--min-delta must be >= 0");
  if (c.d_model < 0 || c.d_model % 2 != 0) throw UsageError("--d-model must be even");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) {
    throw UsageError("--val-fraction must lie in (0, 1)");
  }
  if (c.threads < 1) throw UsageError("--threads must be >= 1");
}

struct Splits {
  data::Dataset train, val, test;
};

data::Dataset head(const data::Dataset& ds, std::size_t n) {
  if (n == 0 || n >= ds.size()) return ds;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return data::subset(ds, idx);
}

Splits load_splits(const CliConfig& c, std::ostream& out) {
  const DatasetKind kind = parse_dataset(c.dataset);
  data::Dataset full = data::load_cifar(c.data_dir, kind, true);
  auto [train, val] = data::split_train_val(full, c.val_fraction, c.seed);
  data::Dataset test = data::load_cifar(c.data_dir, kind, false);
  data::normalize(test, train.norm_stats);
  Splits s{head(train, c.max_train), head(val, c.max_val), std::move(test)};
  out << "data: train=" << s.train.size() << " val=" << s.val.size() << " test=" << s.test.size()
      << '\n';
  return s;
}

train::FitOptions fit_options(const CliConfig& c, std::ostream& out) {
  train::FitOptions o;
  o.epochs_max = c.epochs;
  o.batch_size = c.batch_size;
  o.seed = c.seed;
  o.adam.lr = c.lr;
  o.early_stop = train::EarlyStopPolicy{c.patience, c.min_delta};
  o.on_epoch = [&out](const train::EpochRecord& r) {
    out << std::fixed << std::setprecision(4) << "epoch " << r.epoch << " train_loss "
        << r.train_loss << " train_acc " << r.train_acc << " val_loss " << r.val_loss
        << " val_acc " << r.val_acc << '\n';
  };
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

int cmd_train(const CliConfig& c, std::ostream& out, bool compare_mode) {
  const auto cfgs = resolve_models(c);
  if (!compare_mode && cfgs.size() != 1) throw UsageError("train takes exactly one --model");
  print_config(out, c, cfgs);
  const Splits s = load_splits(c, out);
  fs::create_directories(c.out_dir);
  const auto entries = train::compare(cfgs, s.train, s.val, &s.test, fit_options(c, out));

  std::vector<train::TrainReport> reports;
  std::string text;
  std::vector<std::string> used;
  for (const auto& e : entries) {
    reports.push_back(e.report);
    text += e.report.to_text() + "\n";
    std::string name = compare_mode ? e.report.model : "model";
    std::string candidate = name;
    for (int k = 2; std::find(used.begin(), used.end(), candidate) != used.end(); ++k) {
      candidate = name + "_" + std::to_string(k);
    }
    used.push_back(candidate);
    save_checkpoint(fs::path(c.out_dir) / (candidate + ".ckpt"), e.model, s.train.norm_stats);
  }
  write_text(fs::path(c.out_dir) / "report.txt", text);
  viz::export_history_csv(reports, fs::path(c.out_dir) / "history.csv");
  out << text;
  return kExitOk;
}

int cmd_eval(const CliConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) throw UsageError("eval requires --checkpoint");
  Checkpoint ck = load_checkpoint(c.checkpoint);
  print_config(out, c, {ck.model.config()});
  data::Dataset test = data::load_cifar(c.data_dir, ck.model.config().dataset, false);
  data::normalize(test, ck.norm_stats);
  const auto r = train::evaluate(ck.model, test);
  out << std::fixed << std::setprecision(6) << "test_loss " << r.loss << "\ntest_acc " << r.acc
      << '\n';
  return kExitOk;
}

int cmd_visualize(const CliConfig& c, std::ostream& out) {
  Model<float> model;
  data::NormStats stats;
  std::string ck_id = "untrained";
  data::Dataset test;
  if (!c.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(c.checkpoint);
    print_config(out, c, {ck.model.config()});
    model = std::move(ck.model);
    stats = ck.norm_stats;
    ck_id = checkpoint_id(c.checkpoint);
    test = data::load_cifar(c.data_dir, model.config().dataset, false);
  } else {
    const auto cfgs = resolve_models(c);
    if (cfgs.size() != 1) throw UsageError("visualize takes exactly one --model");
    print_config(out, c, cfgs);
    model = Model<float>::build(cfgs.front());
    test = data::load_cifar(c.data_dir, cfgs.front().dataset, false);
    stats = data::compute_norm_stats(test);
  }
  if (c.image_index >= test.size()) {
    throw UsageError("--image-index " + std::to_string(c.image_index) + " out of range (test set has " +
                     std::to_string(test.size()) + " images)");
  }
  data::normalize(test, stats);
  const std::vector<std::size_t> idx{c.image_index};
  const data::Batch b = data::gather_batch(test, idx);
  const auto layers = c.layers.empty() ? model.tap_names() : c.layers;
  const auto captures = viz::capture_feature_maps(model, b.images, layers, c.image_index, ck_id);
  const fs::path dir = fs::path(c.out_dir) / "featuremaps";
  std::size_t files = 0;
  for (const auto& fc : captures) {
    files += viz::export_channel_images(fc, dir).size();
    out << "captured " << fc.layer << ' ' << to_string(fc.snapshot.shape()) << '\n';
  }
  out << "wrote " << files << " images to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const CliConfig& c, std::ostream& out) {
  const auto cfgs = resolve_models(c);
  if (cfgs.size() != 1) throw UsageError("gradcheck takes exactly one --model");
  print_config(out, c, cfgs);
  const GradCheckReport report = check_model_gradients(cfgs.front());
  out << std::scientific << std::setprecision(3) << "coordinates " << report.coordinates
      << "\nmax_rel_err " << report.max_rel_err << "\nworst " << report.worst_param << '['
      << report.worst_index << "] analytic " << report.worst_analytic << " numeric "
      << report.worst_numeric << "\nflagged " << report.flagged.size() << '\n';
  for (const auto& f : report.flagged) {
    out << "  kink " << f.param << '[' << f.index << "] analytic " << f.analytic << " central "
        << f.central << " forward " << f.forward << " backward " << f.backward << '\n';
  }
  out << (report.pass ? "PASS" : "FAIL") << '\n';
  return report.pass ? kExitOk : kExitRuntime;
}

void add_common(CLI::App* sub, CliConfig& c) {
  sub->add_option("--data-dir", c.data_dir, "CIFAR binary directory (env CGMLP_DATA_DIR)");
  sub->add_option("--dataset", c.dataset, "cifar10 | cifar100")->capture_default_str();
  sub->add_option("--model", c.models, "gmlp4 | cgmlp1 | cgmlp2 | config file (repeatable)");
  sub->add_option("--seed", c.seed, "seed for init, split and shuffle")->capture_default_str();
  sub->add_option("--epochs", c.epochs, "maximum epochs")->capture_default_str();
  sub->add_option("--batch-size", c.batch_size, "batch size")->capture_default_str();
  sub->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--patience", c.patience, "early-stop patience (epochs)")->capture_default_str();
  sub->add_option("--min-delta", c.min_delta, "early-stop minimum val-acc gain")->capture_default_str();
  sub->add_option("--d-model", c.d_model, "model width; d_ffn = 2 d_model (0 = preset)")
      ->capture_default_str();
  sub->add_option("--stem-channels", c.stem_channels, "conv stem widths, comma separated")
      ->delimiter(',');
  sub->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
  sub->add_option("--checkpoint", c.checkpoint, "checkpoint file");
  sub->add_option("--layers", c.layers, "feature-map taps, comma separated")->delimiter(',');
  sub->add_option("--image-index", c.image_index, "test image to visualize")->capture_default_str();
  sub->add_option("--val-fraction", c.val_fraction, "validation share of the train set")
      ->capture_default_str();
  sub->add_option("--threads", c.threads, "kernel threads (1 = deterministic reference)")
      ->capture_default_str();
  sub->add_option("--precision", c.precision, "f32 | f64")->check(CLI::IsMember({"f32", "f64"}));
  sub->add_option("--max-train", c.max_train, "use only the first N training samples (0 = all)")
      ->capture_default_str();
  sub->add_option("--max-val", c.max_val, "use only the first N validation samples (0 = all)")
      ->capture_default_str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated MLP and convolutional gated MLP image classifiers"};
  app.require_subcommand(1);
  CliConfig c;
  c.data_dir = default_data_dir();
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"train", "train one model; writes report.txt, history.csv, model.ckpt"},
      {"compare", "train several models on identical data; writes report.txt, history.csv, <model>.ckpt"},
      {"eval", "evaluate a checkpoint on the test set"},
      {"visualize", "export conv-stem feature maps as PGM images under featuremaps/"},
      {"gradcheck", "compare tape gradients with finite differences on a 2-image batch"},
  };
  for (const auto& [name, desc] : subs) add_common(app.add_subcommand(name, desc), c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  c.subcommand = app.get_subcommands().front()->get_name();
  if (c.precision.empty()) c.precision = c.subcommand == "gradcheck" ? "f64" : "f32";
  if (c.models.empty()) {
    c.models = c.subcommand == "compare" ? std::vector<std::string>{"gmlp4", "cgmlp1", "cgmlp2"}
                                         : std::vector<std::string>{"cgmlp2"};
  }

  try {
    validate_common(c);
    if (c.subcommand != "gradcheck" && c.precision != "f32") {
      throw UsageError("--precision f64 is only available for gradcheck");
    }
    if (c.subcommand == "gradcheck" && c.precision != "f64") {
      throw UsageError("gradcheck runs in f64; --precision f32 is not supported");
    }
    // Resolve model specs up front so bad presets are usage errors.
    if (c.subcommand != "eval" && (c.subcommand != "visualize" || c.checkpoint.empty())) {
      resolve_models(c);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  set_num_threads(c.threads);
  try {
    if (c.subcommand == "train") return cmd_train(c, out, false);
    if (c.subcommand == "compare") return cmd_train(c, out, true);
    if (c.subcommand == "eval") return cmd_eval(c, out);
    if (c.subcommand == "visualize") return cmd_visualize(c, out);
    return cmd_gradcheck(c, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cgmlp::cli
