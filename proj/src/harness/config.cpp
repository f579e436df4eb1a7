#include "rfe/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace rfe::harness {

std::string to_string(PriorKind k) { return k == PriorKind::Perfect ? "perfect" : "ncc"; }

PriorKind parse_prior_kind(const std::string& s) {
  if (s == "perfect") return PriorKind::Perfect;
  if (s == "ncc") return PriorKind::Ncc;
  throw ConfigError("unknown prior kind '" + s + "' (expected perfect or ncc)");
}

void ExperimentConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (embedding_lr && !(*embedding_lr >= 0.0)) throw ConfigError("embedding_lr must be >= 0");
  if (epochs_lower < 1) throw ConfigError("epochs_lower must be >= 1");
  if (branch_epoch >= epochs_lower) throw ConfigError("branch_epoch must be < epochs_lower");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (source == target) throw ConfigError("source and target must differ");
  if (patch_size % (std::size_t{1} << depth) != 0) throw ConfigError("patch_size must be divisible by 2^depth");
  if (v1_images < 1 || train_images < 1 || patches_per_image < 1 || test_images < 1) {
    throw ConfigError("image and patch counts must be >= 1");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
  if (jsd_bins < 2) throw ConfigError("jsd_bins must be >= 2");
  try {
    loss_config().validate();
    sampling().validate();
    model_config(0).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

loss::LossConfig ExperimentConfig::loss_config() const {
  loss::LossConfig c = metric == loss::Metric::ACD ? loss::LossConfig::acd_defaults() : loss::LossConfig::l2_defaults();
  if (lambda) c.lambda = *lambda;
  if (margin) c.margin = *margin;
  c.reduction = reduction;
  return c;
}

double ExperimentConfig::embedding_gradient_scale() const {
  return loss_config().lambda * embedding_lr.value_or(lr) / lr;
}

model::ModelConfig ExperimentConfig::model_config(std::uint64_t seed) const {
  model::ModelConfig m;
  m.depth = depth;
  m.base_channels = base_channels;
  m.embed_channels = embed_channels;
  m.seed = seed;
  return m;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"work_dir", "directory for datasets, checkpoints, priors and CSVs"},
      {"source", "labeled source domain id (A-D)"},
      {"target", "target domain id (A-D)"},
      {"seeds", "comma-separated experiment seeds"},
      {"batch_size", "patches per optimisation step"},
      {"lr", "SGD learning rate of the Dice objective"},
      {"embedding_lr", "step size of the embedding objective (default: lr)"},
      {"epochs_lower", "epochs of lower-bound training; also the last fine-tuning epoch"},
      {"branch_epoch", "lower-bound epoch that upper-bound and semi-supervised runs start from"},
      {"metric", "embedding distance: acd or l2"},
      {"lambda", "embedding loss weight (default: 1 for acd, 0.01 for l2)"},
      {"margin", "hinge margin (default: 1 for acd, 1000 for l2)"},
      {"reduction", "pair reduction: sum, pair_mean or sample_mean"},
      {"strategy", "RFE sampling: 50/50, distribution-aware or 80/20"},
      {"n_embed", "sampled embeddings per batch (n_E)"},
      {"prior", "adjacency prior for target data: perfect or ncc"},
      {"template_k", "odd NCC template side length"},
      {"template_count", "number of NCC templates"},
      {"v1_images", "labeled images per domain reserved for NCC templates and threshold"},
      {"train_images", "images per domain that training patches are cropped from"},
      {"patches_per_image", "patches cropped per training image"},
      {"patch_size", "square patch side"},
      {"test_images", "held-out full-size images per domain for evaluation"},
      {"depth", "U-Net pooling levels"},
      {"base_channels", "channels of the first encoder level"},
      {"embed_channels", "channels of the embedding tap"},
      {"threshold", "binarisation threshold for F-scores"},
      {"jsd_bins", "histogram bins of the JSD diagnostic"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::uint64_t>("seeds", trim(item)));
  return out;
}

std::string format_double(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  try {
    if (key == "work_dir") c.work_dir = v;
    else if (key == "source") c.source = v;
    else if (key == "target") c.target = v;
    else if (key == "seeds") c.seeds = parse_seeds(v);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, v);
    else if (key == "lr") c.lr = parse_number<double>(key, v);
    else if (key == "embedding_lr") c.embedding_lr = parse_number<double>(key, v);
    else if (key == "epochs_lower") c.epochs_lower = parse_number<std::size_t>(key, v);
    else if (key == "branch_epoch") c.branch_epoch = parse_number<std::size_t>(key, v);
    else if (key == "metric") c.metric = loss::parse_metric(v);
    else if (key == "lambda") c.lambda = parse_number<double>(key, v);
    else if (key == "margin") c.margin = parse_number<double>(key, v);
    else if (key == "reduction") c.reduction = loss::parse_reduction(v);
    else if (key == "strategy") c.strategy = sampler::parse_strategy(v);
    else if (key == "n_embed") c.n_embed = parse_number<std::size_t>(key, v);
    else if (key == "prior") c.prior = parse_prior_kind(v);
    else if (key == "template_k") c.template_k = parse_number<std::size_t>(key, v);
    else if (key == "template_count") c.template_count = parse_number<std::size_t>(key, v);
    else if (key == "v1_images") c.v1_images = parse_number<std::size_t>(key, v);
    else if (key == "train_images") c.train_images = parse_number<std::size_t>(key, v);
    else if (key == "patches_per_image") c.patches_per_image = parse_number<std::size_t>(key, v);
    else if (key == "patch_size") c.patch_size = parse_number<std::size_t>(key, v);
    else if (key == "test_images") c.test_images = parse_number<std::size_t>(key, v);
    else if (key == "depth") c.depth = parse_number<std::size_t>(key, v);
    else if (key == "base_channels") c.base_channels = parse_number<std::size_t>(key, v);
    else if (key == "embed_channels") c.embed_channels = parse_number<std::size_t>(key, v);
    else if (key == "threshold") c.threshold = parse_number<double>(key, v);
    else if (key == "jsd_bins") c.jsd_bins = parse_number<std::size_t>(key, v);
    else throw ConfigError("unknown key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(cfg, trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  std::string seeds;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
  const auto lc = c.loss_config();
  o << "work_dir = " << c.work_dir << '\n'
    << "source = " << c.source << '\n'
    << "target = " << c.target << '\n'
    << "seeds = " << seeds << '\n'
    << "batch_size = " << c.batch_size << '\n'
    << "lr = " << format_double(c.lr) << '\n'
    << "embedding_lr = " << format_double(c.embedding_lr.value_or(c.lr)) << '\n'
    << "epochs_lower = " << c.epochs_lower << '\n'
    << "branch_epoch = " << c.branch_epoch << '\n'
    << "metric = " << loss::to_string(c.metric) << '\n'
    << "lambda = " << format_double(lc.lambda) << '\n'
    << "margin = " << format_double(lc.margin) << '\n'
    << "reduction = " << loss::to_string(c.reduction) << '\n'
    << "strategy = " << sampler::to_string(c.strategy) << '\n'
    << "n_embed = " << c.n_embed << '\n'
    << "prior = " << to_string(c.prior) << '\n'
    << "template_k = " << c.template_k << '\n'
    << "template_count = " << c.template_count << '\n'
    << "v1_images = " << c.v1_images << '\n'
    << "train_images = " << c.train_images << '\n'
    << "patches_per_image = " << c.patches_per_image << '\n'
    << "patch_size = " << c.patch_size << '\n'
    << "test_images = " << c.test_images << '\n'
    << "depth = " << c.depth << '\n'
    << "base_channels = " << c.base_channels << '\n'
    << "embed_channels = " << c.embed_channels << '\n'
    << "threshold = " << format_double(c.threshold) << '\n'
    << "jsd_bins = " << c.jsd_bins << '\n';
  return o.str();
}

}  // namespace rfe::harness
