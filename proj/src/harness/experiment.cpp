#include "rfe/harness/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "rfe/autodiff/ops.hpp"
#include "rfe/losses/losses.hpp"
#include "rfe/sampler/sampler.hpp"

namespace rfe::harness {

namespace {

enum StreamTag : std::uint64_t {
  kCropStream = 1,
  kLowerOrder = 2,
  kSourceOrder = 3,
  kTargetOrder = 4,
  kSampling = 5,
  kUnionOrder = 6,
  kPriorTemplates = 7,
  kJsdSampling = 8,
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag),  static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> items, std::mt19937_64 rng) {
  std::shuffle(items.begin(), items.end(), rng);
  return items;
}

struct EmbeddingTerm {
  const Tensor4* prior = nullptr;  // aligned with the whole batch
  loss::LossConfig loss;
  double gradient_scale = 0.0;
  sampler::SamplingStrategy strategy;
  std::mt19937_64* rng = nullptr;
};

struct StepLoss {
  double primary = 0.0;
  double embedding = 0.0;
};

// Dice on the first n_labeled images of the batch, optional embedding term
// over the whole batch, one SGD step.
StepLoss train_step(model::Model& m, const Tensor4& batch, const Tensor4& labels, const EmbeddingTerm* emb,
                    float lr) {
  auto pass = model::forward_graph(m, batch);
  auto& g = pass.graph;
  const std::size_t n_labeled = labels.batch();
  ad::NodeId logits = pass.logits;
  if (n_labeled != batch.batch()) logits = ad::slice_batch(g, logits, 0, n_labeled);
  const ad::NodeId dice = loss::dice_loss(g, ad::sigmoid(g, logits), labels);

  StepLoss out{g.value(dice)[0], 0.0};
  if (!std::isfinite(out.primary)) throw TrainingDiverged("non-finite Dice loss");

  std::vector<ad::GradientSeed<float>> seeds;
  Tensor4 seed_grad;
  if (emb != nullptr && emb->gradient_scale > 0.0) {
    const Tensor4& embed = g.value(pass.embed);
    const auto positions = sampler::sample_positions(*emb->prior, emb->strategy, *emb->rng);
    const auto samples = sampler::gather(embed, *emb->prior, positions);
    const auto adjacency = sampler::build_adjacency<float>(samples);
    auto res = loss::embedding_loss<float>(samples, adjacency, emb->loss);
    out.embedding = res.loss;
    if (!std::isfinite(out.embedding)) throw TrainingDiverged("non-finite embedding loss");
    const float factor = static_cast<float>(emb->gradient_scale);
    for (auto& v : res.grads) {
      for (float& x : v) x *= factor;
    }
    seed_grad = sampler::mask_gradients<float>(embed.shape(), positions, res.grads);
    seeds.push_back({pass.embed, &seed_grad});
  }
  g.backward(dice, seeds);
  const auto grads = g.parameter_gradients(m.parameters());
  ad::sgd_step(m.parameters(), grads, lr);
  return out;
}

void require_patches(const DomainData& d, const char* role) {
  if (d.patches.size() == 0 || d.patches.train.empty()) {
    throw std::invalid_argument(std::string(role) + " domain '" + d.id + "' has no training patches");
  }
}

void check_branch(const ExperimentConfig& cfg, const model::Model& branch) {
  if (!(branch.config() == cfg.model_config(branch.config().seed))) {
    throw std::invalid_argument("branch checkpoint does not match the configured architecture");
  }
}

// Source-side schedule shared by the semi-supervised and source-only
// continuations: per epoch a fresh order of the source training split,
// consumed batch/2 at a time.
struct SourceSchedule {
  std::size_t per_step;
  std::size_t steps;
};

SourceSchedule source_schedule(const ExperimentConfig& cfg, const DomainData& source) {
  const std::size_t per_step = cfg.batch_size / 2;
  const std::size_t n = source.patches.train.size();
  return {per_step, (n + per_step - 1) / per_step};
}

std::vector<std::size_t> source_step(const std::vector<std::size_t>& order, std::size_t step, std::size_t per_step) {
  const std::size_t first = step * per_step;
  const std::size_t last = std::min(order.size(), first + per_step);
  return {order.begin() + static_cast<std::ptrdiff_t>(first), order.begin() + static_cast<std::ptrdiff_t>(last)};
}

model::Model continue_run(const ExperimentConfig& cfg, const model::Model& branch, const DomainData& source,
                          const DomainData* target, const Tensor4* target_prior, std::uint64_t seed,
                          std::vector<EpochLog>* log) {
  cfg.validate();
  check_branch(cfg, branch);
  require_patches(source, "source");
  model::Model m = branch;
  const auto sched = source_schedule(cfg, source);
  const std::size_t target_per_step = cfg.batch_size - sched.per_step;
  const float lr = static_cast<float>(cfg.lr);

  std::mt19937_64 sample_rng = stream(seed, kSampling);
  EmbeddingTerm term;
  if (target != nullptr) {
    require_patches(*target, "target");
    term.loss = cfg.loss_config();
    term.gradient_scale = cfg.embedding_gradient_scale();
    term.strategy = cfg.sampling();
    term.rng = &sample_rng;
  }

  for (std::size_t epoch = cfg.branch_epoch + 1; epoch <= cfg.epochs_lower; ++epoch) {
    const auto order = shuffled(source.patches.train, stream(seed, kSourceOrder, epoch));
    std::vector<std::size_t> target_order;
    if (target != nullptr) target_order = shuffled(target->patches.train, stream(seed, kTargetOrder, epoch));
    std::size_t target_cursor = 0;
    EpochLog entry{epoch, 0.0, 0.0};
    for (std::size_t step = 0; step < sched.steps; ++step) {
      const auto src = source_step(order, step, sched.per_step);
      Tensor4 src_images = data::select_batch(source.patches.patches, src);
      Tensor4 src_labels = data::select_batch(source.patches.labels, src);
      StepLoss sl;
      if (target == nullptr) {
        sl = train_step(m, src_images, src_labels, nullptr, lr);
      } else {
        std::vector<std::size_t> tgt(target_per_step);
        for (auto& t : tgt) t = target_order[target_cursor++ % target_order.size()];
        const std::vector<Tensor4> images{src_images, data::select_batch(target->patches.patches, tgt)};
        const std::vector<Tensor4> priors{src_labels, data::select_batch(*target_prior, tgt)};
        const Tensor4 batch = concat_batch<float>(images);
        const Tensor4 prior = concat_batch<float>(priors);
        term.prior = &prior;
        sl = train_step(m, batch, src_labels, &term, lr);
      }
      entry.primary += sl.primary;
      entry.embedding += sl.embedding;
    }
    entry.primary /= static_cast<double>(sched.steps);
    entry.embedding /= static_cast<double>(sched.steps);
    if (log != nullptr) log->push_back(entry);
  }
  return m;
}

}  // namespace

DomainData prepare_domain(const data::DomainSpec& spec, const ExperimentConfig& cfg) {
  spec.validate();
  DomainData d;
  d.id = spec.id;
  auto v1 = data::generate_domain(spec, cfg.v1_images, 0);
  auto train = data::generate_domain(spec, cfg.train_images, cfg.v1_images);
  auto test = data::generate_domain(spec, cfg.test_images, kTestImageOffset);
  auto rng = stream(spec.seed, kCropStream);
  d.patches = data::crop_patches(spec.id, train.images, train.labels, cfg.patch_size, cfg.patches_per_image, rng);
  d.patches.seed = spec.seed;
  d.train_images = std::move(train.images);
  d.train_labels = std::move(train.labels);
  d.v1_images = std::move(v1.images);
  d.v1_labels = std::move(v1.labels);
  d.test_images = std::move(test.images);
  d.test_labels = std::move(test.labels);
  return d;
}

void save_domain(const std::string& dir, const DomainData& d, const data::DomainSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  data::save_dataset(dir, d.patches, spec);
  save_t4f((fs::path(dir) / "train_images.t4f").string(), d.train_images);
  save_t4f((fs::path(dir) / "train_labels.t4f").string(), d.train_labels);
  save_t4f((fs::path(dir) / "v1_images.t4f").string(), d.v1_images);
  save_t4f((fs::path(dir) / "v1_labels.t4f").string(), d.v1_labels);
  save_t4f((fs::path(dir) / "test_images.t4f").string(), d.test_images);
  save_t4f((fs::path(dir) / "test_labels.t4f").string(), d.test_labels);
}

DomainData load_domain(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("domain data directory '" + dir + "' does not exist");
  DomainData d;
  d.patches = data::load_dataset(dir);
  d.id = d.patches.domain_id;
  d.train_images = load_t4f((fs::path(dir) / "train_images.t4f").string());
  d.train_labels = load_t4f((fs::path(dir) / "train_labels.t4f").string());
  d.v1_images = load_t4f((fs::path(dir) / "v1_images.t4f").string());
  d.v1_labels = load_t4f((fs::path(dir) / "v1_labels.t4f").string());
  d.test_images = load_t4f((fs::path(dir) / "test_images.t4f").string());
  d.test_labels = load_t4f((fs::path(dir) / "test_labels.t4f").string());
  return d;
}

PatchPrior make_prior(const ExperimentConfig& cfg, const DomainData& target, PriorKind kind, std::uint64_t seed) {
  PatchPrior out;
  out.manifest.source_id = target.id;
  out.manifest.seed = seed;
  out.manifest.images = target.patches.size();
  if (kind == PriorKind::Perfect) {
    out.labels = prior::perfect_prior(target.patches.labels);
    out.manifest.k = 0;
    out.manifest.count = 0;
    out.manifest.source_dice = 1.0;
    return out;
  }
  const auto v1_images = prior::channel_maps(target.v1_images, data::kFlairChannel);
  const auto v1_labels = prior::channel_maps(target.v1_labels, 0);
  const auto images = prior::channel_maps(target.train_images, data::kFlairChannel);
  auto rng = stream(seed, kPriorTemplates);
  const auto res =
      prior::generate_noisy_prior(v1_images, v1_labels, images, cfg.template_k, cfg.template_count, rng);
  std::vector<prior::Map2D> maps;
  maps.reserve(res.priors.size());
  for (const auto& p : res.priors) maps.push_back(p.labels);
  const Tensor4 full = prior::stack_maps(maps);
  out.labels = data::crop_at(full, target.patches.origins, cfg.patch_size);
  out.manifest.k = cfg.template_k;
  out.manifest.count = cfg.template_count;
  out.manifest.threshold = res.selection.threshold;
  out.manifest.source_dice = res.selection.dice;
  return out;
}

LowerBoundRun train_lower_bound(const ExperimentConfig& cfg, const DomainData& source, std::uint64_t seed,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  require_patches(source, "source");
  model::Model m(cfg.model_config(seed));
  const float lr = static_cast<float>(cfg.lr);
  const std::size_t n = source.patches.train.size();
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  LowerBoundRun run;
  for (std::size_t epoch = 1; epoch <= cfg.epochs_lower; ++epoch) {
    const auto order = shuffled(source.patches.train, stream(seed, kLowerOrder, epoch));
    EpochLog entry{epoch, 0.0, 0.0};
    for (std::size_t step = 0; step < steps; ++step) {
      const auto idx = source_step(order, step, cfg.batch_size);
      entry.primary += train_step(m, data::select_batch(source.patches.patches, idx),
                                  data::select_batch(source.patches.labels, idx), nullptr, lr)
                           .primary;
    }
    entry.primary /= static_cast<double>(steps);
    run.checkpoints.push_back(m);
    run.log.push_back(entry);
    if (on_epoch) on_epoch(epoch, m, entry);
  }
  return run;
}

model::Model train_upper_bound(const ExperimentConfig& cfg, const model::Model& branch, const DomainData& source,
                               const DomainData& target, std::uint64_t seed, std::vector<EpochLog>* log) {
  cfg.validate();
  check_branch(cfg, branch);
  require_patches(source, "source");
  require_patches(target, "target");
  model::Model m = branch;
  const float lr = static_cast<float>(cfg.lr);
  // Union index: i < ns refers to source train[i], otherwise target train[i - ns].
  const std::size_t ns = source.patches.train.size();
  const std::size_t total = ns + target.patches.train.size();
  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t steps = (total + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = cfg.branch_epoch + 1; epoch <= cfg.epochs_lower; ++epoch) {
    const auto order = shuffled(all, stream(seed, kUnionOrder, epoch));
    EpochLog entry{epoch, 0.0, 0.0};
    for (std::size_t step = 0; step < steps; ++step) {
      const auto idx = source_step(order, step, cfg.batch_size);
      Tensor4 images(Shape4{cfg.patch_size, cfg.patch_size, data::kImageChannels, idx.size()});
      Tensor4 labels(Shape4{cfg.patch_size, cfg.patch_size, 1, idx.size()});
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const bool from_source = idx[b] < ns;
        const auto& ds = from_source ? source.patches : target.patches;
        const std::size_t p = from_source ? ds.train[idx[b]] : ds.train[idx[b] - ns];
        std::ranges::copy(ds.patches.image(p), images.image(b).begin());
        std::ranges::copy(ds.labels.image(p), labels.image(b).begin());
      }
      entry.primary += train_step(m, images, labels, nullptr, lr).primary;
    }
    entry.primary /= static_cast<double>(steps);
    if (log != nullptr) log->push_back(entry);
  }
  return m;
}

model::Model finetune_semisupervised(const ExperimentConfig& cfg, const model::Model& branch,
                                     const DomainData& source, const DomainData& target, const Tensor4& target_prior,
                                     std::uint64_t seed, std::vector<EpochLog>* log) {
  const Shape4 expected{target.patches.labels.shape()};
  if (target_prior.empty()) throw std::invalid_argument("finetune: target prior is missing");
  require_same_shape(target_prior.shape(), expected, "finetune target prior");
  return continue_run(cfg, branch, source, &target, &target_prior, seed, log);
}

model::Model continue_supervised(const ExperimentConfig& cfg, const model::Model& branch, const DomainData& source,
                                 std::uint64_t seed, std::vector<EpochLog>* log) {
  return continue_run(cfg, branch, source, nullptr, nullptr, seed, log);
}

double evaluate_f(const model::Model& m, const Tensor4& images, const Tensor4& labels, double threshold) {
  return mean_f_score(model::predict(m, images), labels, threshold);
}

MetricsRow evaluate(const model::Model& m, const DomainData& d, double threshold, const std::string& model_id,
                    std::uint64_t seed, std::size_t epoch) {
  return MetricsRow{model_id, d.id, evaluate_f(m, d.test_images, d.test_labels, threshold), seed, epoch, "ok"};
}

std::string SweepCell::model_id() const {
  return "semi:perfect:" + loss::to_string(metric) + ":" + sampler::to_string(strategy) + ":" +
         std::to_string(n_embed);
}

std::vector<SweepCell> sweep_grid() {
  std::vector<SweepCell> cells;
  for (auto s : {sampler::StrategyKind::FiftyFifty, sampler::StrategyKind::DistributionAware,
                 sampler::StrategyKind::EightyTwenty}) {
    for (auto metric : {loss::Metric::L2, loss::Metric::ACD}) {
      for (std::size_t n : kSweepEmbedCounts) cells.push_back({s, metric, n});
    }
  }
  return cells;
}

ExperimentConfig cell_config(const ExperimentConfig& base, const SweepCell& cell) {
  ExperimentConfig c = base;
  c.strategy = cell.strategy;
  c.metric = cell.metric;
  c.n_embed = cell.n_embed;
  c.lambda.reset();
  c.margin.reset();
  c.prior = PriorKind::Perfect;
  return c;
}

std::vector<MetricsRow> run_sweep(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target,
                                  const BranchProvider& branch, const std::string& csv_path,
                                  std::span<const SweepCell> cells,
                                  const std::function<void(const MetricsRow&)>& progress) {
  cfg.validate();
  std::vector<MetricsRow> rows;
  if (std::filesystem::exists(csv_path)) rows = parse_metrics_csv(read_file(csv_path));
  auto done = [&](const std::string& id, std::uint64_t seed) {
    return std::ranges::any_of(rows, [&](const MetricsRow& r) {
      return r.ok() && r.model == id && r.seed == seed && r.domain == target.id;
    });
  };
  const PatchPrior prior = make_prior(cfg, target, PriorKind::Perfect, 0);
  for (std::uint64_t seed : cfg.seeds) {
    std::optional<model::Model> start;
    for (const auto& cell : cells) {
      const std::string id = cell.model_id();
      if (done(id, seed)) continue;
      MetricsRow row{id, target.id, 0.0, seed, cfg.epochs_lower, "ok"};
      try {
        if (!start) start = branch(seed);
        const auto m = finetune_semisupervised(cell_config(cfg, cell), *start, source, target, prior.labels, seed);
        row.f_score = evaluate_f(m, target.test_images, target.test_labels, cfg.threshold);
      } catch (const std::exception& e) {
        row.status = std::string("failed:") + e.what();
      }
      const auto previous = std::ranges::find_if(
          rows, [&](const MetricsRow& r) { return r.model == id && r.seed == seed && r.domain == target.id; });
      if (previous != rows.end()) {
        *previous = row;
      } else {
        rows.push_back(row);
      }
      write_file_atomic(csv_path, metrics_csv(rows));
      if (progress) progress(row);
    }
  }
  return rows;
}

std::vector<JsdRow> jsd_diagnostic(const ExperimentConfig& cfg, const model::Model& m, const DomainData& d,
                                   sampler::StrategyKind strategy, std::span<const std::size_t> n_values,
                                   std::span<const std::uint64_t> seeds) {
  require_patches(d, "diagnostic");
  const std::size_t count = std::min(cfg.batch_size, d.patches.train.size());
  const std::vector<std::size_t> idx(d.patches.train.begin(),
                                     d.patches.train.begin() + static_cast<std::ptrdiff_t>(count));
  const Tensor4 batch = data::select_batch(d.patches.patches, idx);
  const Tensor4 prior = data::select_batch(d.patches.labels, idx);
  const Tensor4 embed = model::forward(m, batch).embed;
  const auto population = sampler::all_embeddings(embed);
  std::vector<JsdRow> rows;
  for (std::size_t n : n_values) {
    for (std::uint64_t seed : seeds) {
      auto rng = stream(seed, kJsdSampling, n);
      const auto positions = sampler::sample_positions(prior, {strategy, n}, rng);
      const auto samples = sampler::gather(embed, prior, positions);
      std::vector<std::vector<float>> vectors;
      vectors.reserve(samples.size());
      for (const auto& s : samples) vectors.push_back(s.vector);
      rows.push_back({n, seed, sampler::js_divergence(vectors, population, cfg.jsd_bins)});
    }
  }
  return rows;
}

}  // namespace rfe::harness
