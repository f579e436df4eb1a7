// Command-line front end for the experiment harness.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rfe/harness/config.hpp"
#include "rfe/harness/experiment.hpp"
#include "rfe/harness/metrics.hpp"

namespace fs = std::filesystem;
using namespace rfe;
using namespace rfe::harness;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::string target;
  std::string out;
  std::string checkpoint;
  std::string domain;
  std::string model_id;
  std::string strategy = "distribution-aware";
  std::string prior;
  std::vector<std::string> domains = {"A", "B", "C", "D"};
  std::size_t epoch = 0;
};

class Layout {
 public:
  explicit Layout(const ExperimentConfig& cfg) : root_(cfg.work_dir) {}

  fs::path data(const std::string& id) const { return root_ / "data" / id; }
  fs::path lower_dir(std::uint64_t seed) const { return root_ / "lower" / ("seed" + std::to_string(seed)); }
  fs::path lower_ckpt(std::uint64_t seed, std::size_t epoch) const {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
    return lower_dir(seed) / name;
  }
  fs::path upper_ckpt(const std::string& t, std::uint64_t seed) const {
    return root_ / "upper" / t / ("seed" + std::to_string(seed) + ".ckpt");
  }
  fs::path prior_base(const std::string& t, PriorKind k, std::uint64_t seed) const {
    return root_ / "priors" / t / to_string(k) / ("seed" + std::to_string(seed));
  }
  fs::path semi_ckpt(const std::string& t, const ExperimentConfig& cfg, std::uint64_t seed) const {
    const std::string tag = to_string(cfg.prior) + "_" + loss::to_string(cfg.metric) + "_" +
                            (cfg.strategy == sampler::StrategyKind::FiftyFifty          ? std::string("50-50")
                             : cfg.strategy == sampler::StrategyKind::EightyTwenty ? std::string("80-20")
                                                                                   : std::string("da")) +
                            "_n" + std::to_string(cfg.n_embed);
    return root_ / "semi" / t / tag / ("seed" + std::to_string(seed) + ".ckpt");
  }
  fs::path sweep_csv(const std::string& t) const { return root_ / ("sweep_" + t + ".csv"); }

 private:
  fs::path root_;
};

ExperimentConfig build_config(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    set_config_value(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (!o.target.empty()) cfg.target = o.target;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.prior.empty()) cfg.prior = parse_prior_kind(o.prior);
  cfg.validate();
  return cfg;
}

void save_model(const fs::path& p, const model::Model& m) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  model::save_checkpoint(tmp.string(), m);
  fs::rename(tmp, p);
}

model::Model load_branch(const Layout& layout, const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto p = layout.lower_ckpt(seed, cfg.branch_epoch);
  if (!fs::exists(p)) throw std::runtime_error("branch checkpoint '" + p.string() + "' missing; run train-lower");
  return model::load_checkpoint(p.string());
}

Tensor4 load_patch_prior(const Layout& layout, const ExperimentConfig& cfg, const DomainData& target,
                         std::uint64_t seed) {
  if (cfg.prior == PriorKind::Perfect) return make_prior(cfg, target, PriorKind::Perfect, seed).labels;
  const auto base = layout.prior_base(target.id, cfg.prior, seed);
  const auto t4f = base.string() + ".t4f";
  if (!fs::exists(t4f)) throw std::runtime_error("ncc prior '" + t4f + "' missing; run make-prior");
  return load_t4f(t4f);
}

void append_rows(const fs::path& csv, const std::vector<MetricsRow>& add) {
  std::vector<MetricsRow> rows;
  if (fs::exists(csv)) rows = parse_metrics_csv(read_file(csv.string()));
  for (const auto& r : add) {
    std::erase_if(rows, [&](const MetricsRow& x) { return x.model == r.model && x.domain == r.domain && x.seed == r.seed; });
    rows.push_back(r);
  }
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  write_file_atomic(csv.string(), metrics_csv(rows));
}

std::string loss_csv(const std::vector<EpochLog>& log) {
  std::string s = "epoch,primary,embedding\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.primary, e.embedding);
    s += buf;
  }
  return s;
}

int cmd_gen_data(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  for (const auto& id : o.domains) {
    const auto spec = data::default_domain_spec(id);
    const auto d = prepare_domain(spec, cfg);
    save_domain(layout.data(id).string(), d, spec);
    std::cout << "domain " << id << ": " << d.patches.size() << " patches -> " << layout.data(id).string() << "\n";
  }
  return 0;
}

int cmd_train_lower(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  const auto source = load_domain(layout.data(cfg.source).string());
  for (auto seed : cfg.seeds) {
    const auto run = train_lower_bound(cfg, source, seed, [&](std::size_t epoch, const model::Model& m, const EpochLog&) {
      save_model(layout.lower_ckpt(seed, epoch), m);
    });
    write_file_atomic((layout.lower_dir(seed) / "loss.csv").string(), loss_csv(run.log));
    std::cout << "lower seed " << seed << ": loss epoch 1 " << run.log.front().primary << ", epoch "
              << cfg.epochs_lower << " " << run.log.back().primary << "\n";
  }
  return 0;
}

int cmd_train_upper(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  const auto source = load_domain(layout.data(cfg.source).string());
  const auto target = load_domain(layout.data(cfg.target).string());
  for (auto seed : cfg.seeds) {
    const auto m = train_upper_bound(cfg, load_branch(layout, cfg, seed), source, target, seed);
    save_model(layout.upper_ckpt(cfg.target, seed), m);
    std::cout << "upper " << cfg.target << " seed " << seed << " -> " << layout.upper_ckpt(cfg.target, seed).string()
              << "\n";
  }
  return 0;
}

int cmd_make_prior(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  const auto target = load_domain(layout.data(cfg.target).string());
  for (auto seed : cfg.seeds) {
    const auto p = make_prior(cfg, target, cfg.prior, seed);
    const auto base = layout.prior_base(cfg.target, cfg.prior, seed);
    fs::create_directories(base.parent_path());
    prior::save_prior(base.string() + ".t4f", base.string() + ".txt", p.labels, p.manifest);
    std::cout << "prior " << to_string(cfg.prior) << " " << cfg.target << " seed " << seed << ": threshold "
              << p.manifest.threshold << ", V1 Dice " << p.manifest.source_dice << "\n";
  }
  return 0;
}

int cmd_finetune(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  const auto source = load_domain(layout.data(cfg.source).string());
  const auto target = load_domain(layout.data(cfg.target).string());
  for (auto seed : cfg.seeds) {
    const Tensor4 prior = load_patch_prior(layout, cfg, target, seed);
    std::vector<EpochLog> log;
    const auto m = finetune_semisupervised(cfg, load_branch(layout, cfg, seed), source, target, prior, seed, &log);
    const auto path = layout.semi_ckpt(cfg.target, cfg, seed);
    save_model(path, m);
    write_file_atomic(path.string() + ".loss.csv", loss_csv(log));
    std::cout << "finetune " << cfg.target << " seed " << seed << " -> " << path.string() << "\n";
  }
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  if (o.checkpoint.empty()) throw std::invalid_argument("eval requires --checkpoint");
  if (o.out.empty()) throw std::invalid_argument("eval requires --out");
  const auto m = model::load_checkpoint(o.checkpoint);
  const std::string id = o.model_id.empty() ? fs::path(o.checkpoint).stem().string() : o.model_id;
  const std::uint64_t seed = o.seeds.empty() ? m.config().seed : o.seeds.front();
  std::vector<MetricsRow> rows;
  const std::vector<std::string> domains = o.domain.empty() ? std::vector<std::string>{cfg.source, cfg.target}
                                                            : std::vector<std::string>{o.domain};
  for (const auto& d : domains) {
    rows.push_back(evaluate(m, load_domain(layout.data(d).string()), cfg.threshold, id, seed,
                            o.epoch != 0 ? o.epoch : cfg.epochs_lower));
    std::cout << id << " " << d << " F " << rows.back().f_score << "\n";
  }
  append_rows(o.out, rows);
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  const auto source = load_domain(layout.data(cfg.source).string());
  const auto target = load_domain(layout.data(cfg.target).string());
  const std::string csv = o.out.empty() ? layout.sweep_csv(cfg.target).string() : o.out;
  const auto cells = sweep_grid();
  run_sweep(
      cfg, source, target, [&](std::uint64_t seed) { return load_branch(layout, cfg, seed); }, csv, cells,
      [](const MetricsRow& r) { std::cout << r.model << " seed " << r.seed << " F " << r.f_score << " " << r.status << "\n"; });
  std::cout << "sweep -> " << csv << "\n";
  return 0;
}

int cmd_jsd(const Options& o) {
  const auto cfg = build_config(o);
  const Layout layout(cfg);
  if (o.out.empty()) throw std::invalid_argument("jsd-diag requires --out");
  const auto source = load_domain(layout.data(cfg.source).string());
  const model::Model m = o.checkpoint.empty() ? model::load_checkpoint(layout.lower_ckpt(cfg.seeds.front(), cfg.epochs_lower).string())
                                              : model::load_checkpoint(o.checkpoint);
  std::vector<std::uint64_t> seeds(10);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  const auto rows = jsd_diagnostic(cfg, m, source, sampler::parse_strategy(o.strategy), kSweepEmbedCounts, seeds);
  write_file_atomic(o.out, jsd_csv(rows));
  std::cout << "jsd-diag -> " << o.out << "\n";
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "diverged";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid";
  return "runtime";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

std::string config_footer() {
  std::map<std::string, std::string> defaults;
  std::istringstream lines(harness::to_text(harness::ExperimentConfig{}));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) defaults[line.substr(0, eq)] = line.substr(eq + 3);
  }
  std::ostringstream out;
  out << "Config keys (default in brackets):\n";
  for (const auto& k : harness::config_keys()) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-18s %s [%s]\n", k.name, k.help, defaults[k.name].c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random feature embedding experiments on synthetic MR domains"};
  app.require_subcommand(1);
  app.footer(config_footer());
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", o.sets, "override one config key, key=value");
    sub->add_option("--seed", o.seeds, "seeds to run (default: the config's list)");
    sub->add_option("-t,--target", o.target, "target domain id");
  };

  std::map<CLI::App*, int (*)(const Options&)> handlers;
  auto* gen = app.add_subcommand("gen-data", "generate domains and crop training patches");
  common(gen);
  gen->add_option("--domains", o.domains, "domain ids to generate");
  handlers[gen] = cmd_gen_data;

  auto* lower = app.add_subcommand("train-lower", "train the source-only lower bound, checkpointing every epoch");
  common(lower);
  handlers[lower] = cmd_train_lower;

  auto* upper = app.add_subcommand("train-upper", "fine-tune the branch checkpoint on labeled source and target");
  common(upper);
  handlers[upper] = cmd_train_upper;

  auto* mp = app.add_subcommand("make-prior", "build target priors for the embedding loss");
  common(mp);
  mp->add_option("--prior", o.prior, "perfect or ncc");
  handlers[mp] = cmd_make_prior;

  auto* ft = app.add_subcommand("finetune", "semi-supervised fine-tuning with the embedding loss");
  common(ft);
  ft->add_option("--prior", o.prior, "perfect or ncc");
  handlers[ft] = cmd_finetune;

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out images and record CSV rows");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  ev->add_option("--domain", o.domain, "domain to evaluate (default: source and target)");
  ev->add_option("--model-id", o.model_id, "model column value");
  ev->add_option("--epoch", o.epoch, "epoch column value");
  ev->add_option("-o,--out", o.out, "metrics CSV to update")->required();
  handlers[ev] = cmd_eval;

  auto* sw = app.add_subcommand("sweep", "strategy x metric x n_E grid with a perfect prior");
  common(sw);
  sw->add_option("-o,--out", o.out, "metrics CSV (default: <work_dir>/sweep_<target>.csv)");
  handlers[sw] = cmd_sweep;

  auto* jd = app.add_subcommand("jsd-diag", "JSD between sampled and full embedding distributions");
  common(jd);
  jd->add_option("--checkpoint", o.checkpoint, "model (default: final lower-bound checkpoint of the first seed)");
  jd->add_option("--strategy", o.strategy, "sampling strategy");
  jd->add_option("-o,--out", o.out, "JSD CSV")->required();
  handlers[jd] = cmd_jsd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=usage message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }
  try {
    for (auto& [sub, fn] : handlers) {
      if (sub->parsed()) return fn(o);
    }
  } catch (const std::exception& e) {
    std::cerr << "error kind=" << error_kind(e) << " message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 1;
}
