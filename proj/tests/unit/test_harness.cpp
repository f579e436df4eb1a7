#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "rfe/harness/config.hpp"
#include "rfe/harness/experiment.hpp"
#include "rfe/harness/metrics.hpp"
#include "test_support.hpp"

using namespace rfe;
using namespace rfe::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seeds = {3};
  c.lr = 0.01;
  c.epochs_lower = 3;
  c.branch_epoch = 1;
  c.v1_images = 1;
  c.train_images = 3;
  c.patches_per_image = 4;
  c.patch_size = 16;
  c.test_images = 2;
  c.n_embed = 20;
  c.batch_size = 4;
  c.reduction = loss::Reduction::SampleMean;
  return c;
}

const DomainData& domain(const std::string& id) {
  static std::map<std::string, DomainData> cache;
  auto it = cache.find(id);
  if (it == cache.end()) it = cache.emplace(id, prepare_domain(data::default_domain_spec(id), tiny_config())).first;
  return it->second;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rfe_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config text parses, round trips and rejects unknown keys") {
  const auto c = parse_config("# comment\nlr = 0.5\nseeds = 4, 5\n\nmetric = l2\nstrategy = 50/50\nprior = ncc\n");
  CHECK(c.lr == 0.5);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.metric == loss::Metric::L2);
  CHECK(c.loss_config().lambda == 0.01);
  CHECK(c.loss_config().margin == 1000.0);
  CHECK(c.strategy == sampler::StrategyKind::FiftyFifty);
  CHECK(c.prior == PriorKind::Ncc);
  CHECK(to_text(parse_config(to_text(c))) == to_text(c));
  CHECK(to_text(parse_config(to_text(ExperimentConfig{}))) == to_text(ExperimentConfig{}));

  CHECK_THROWS_WITH_AS(parse_config("lr = 1\nbogus = 2\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("bogus = 2\n"), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("branch_epoch = 50\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("metric = cosine\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("metric = acd\nmargin = 2\n"), ConfigError);
}

TEST_CASE("every documented key is accepted by the parser") {
  const std::string text = to_text(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    CAPTURE(k.name);
    CHECK(text.find(std::string(k.name) + " = ") != std::string::npos);
  }
}

TEST_CASE("config defaults") {
  const ExperimentConfig c;
  CHECK(c.batch_size == 12);
  CHECK(c.lr == 1e-6);
  CHECK(c.epochs_lower == 50);
  CHECK(c.branch_epoch == 35);
  CHECK(c.loss_config().lambda == 1.0);
  CHECK(c.loss_config().margin == 1.0);
  CHECK(c.embedding_gradient_scale() == 1.0);
  CHECK(c.reduction == loss::Reduction::Sum);
  const auto d = parse_config("lr = 0.01\nembedding_lr = 1e-6\nmetric = l2\n");
  CHECK(d.embedding_gradient_scale() == doctest::Approx(0.01 * 1e-6 / 0.01));
  CHECK_THROWS_AS(parse_config("lr = 0\n"), ConfigError);
}

TEST_CASE("F-score examples") {
  CHECK(f_score(2, 1, 1) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
  CHECK(f_score(0, 0, 0) == 1.0);
  CHECK(f_score(0, 0, 3) == 0.0);
  CHECK(f_score(0, 2, 0) == 0.0);

  Tensor4 labels(4, 4, 1, 2);
  labels(1, 1, 0, 0) = 1.0f;
  labels(2, 2, 0, 0) = 1.0f;
  CHECK(mean_f_score(labels, labels, 0.5) == 1.0);  // image 1 is empty vs empty
  const Tensor4 empty(4, 4, 1, 2);
  CHECK(f_score_image(empty, labels, 0, 0.5) == 0.0);
  CHECK(f_score_image(empty, labels, 1, 0.5) == 1.0);
  Tensor4 probs(4, 4, 1, 2, 0.2f);
  probs(1, 1, 0, 0) = 0.5f;  // threshold is inclusive
  CHECK(f_score_image(probs, labels, 0, 0.5) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("metrics and JSD CSV round trip losslessly") {
  std::vector<MetricsRow> rows = {
      {"lower", "A", 0.1 + 0.2, 1, 50, "ok"},
      {"semi:perfect:acd:80/20:100", "B", 1.0 / 3.0, 18446744073709551615ull, 36, "ok"},
      {"upper", "D", 0.0, 0, 0, "failed:bad, worse"},
  };
  const auto parsed = parse_metrics_csv(metrics_csv(rows));
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[0] == rows[0]);
  CHECK(parsed[1] == rows[1]);
  CHECK(parsed[2].status.find(',') == std::string::npos);
  CHECK(metrics_csv(rows).rfind("model,domain,f_score,seed,epoch,status\n", 0) == 0);

  std::vector<JsdRow> jrows = {{20, 0, 0.123456789012345678}, {2000, 9, 1e-300}};
  CHECK(parse_jsd_csv(jsd_csv(jrows)) == jrows);
  CHECK_THROWS(parse_metrics_csv("wrong,header\n"));
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{2, 4, 6, 8, 10}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1, 1, 1, 1, 1}) == 0.0);
  // ties get average ranks: y ranks (1.5, 1.5, 3, 4, 5)
  CHECK(spearman(x, std::vector<double>{0, 0, 1, 2, 3}) == doctest::Approx(0.9746794344808963));
}

TEST_CASE("atomic writes replace the file contents") {
  const auto dir = scratch_dir("atomic");
  const auto p = (dir / "x.csv").string();
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  CHECK(read_file(p) == "two");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
}

TEST_CASE("sweep grid covers 3 strategies x 2 metrics x 6 n_E") {
  const auto grid = sweep_grid();
  CHECK(grid.size() == 36);
  std::set<std::string> ids;
  for (const auto& c : grid) ids.insert(c.model_id());
  CHECK(ids.size() == 36);
  const auto cfg = cell_config(tiny_config(), {sampler::StrategyKind::FiftyFifty, loss::Metric::L2, 500});
  CHECK(cfg.loss_config().lambda == 0.01);
  CHECK(cfg.n_embed == 500);
  CHECK(cfg.prior == PriorKind::Perfect);
}

TEST_CASE("domain data is disjoint, persisted and reloaded bit-exactly") {
  const auto cfg = tiny_config();
  const auto& a = domain("A");
  CHECK(a.patches.size() == cfg.train_images * cfg.patches_per_image);
  CHECK(a.test_images.shape() == Shape4{64, 64, 3, cfg.test_images});
  CHECK(!(a.v1_images.image(0).front() == a.train_images.image(0).front() &&
          std::ranges::equal(a.v1_images.image(0), a.train_images.image(0))));
  CHECK(prepare_domain(data::default_domain_spec("A"), cfg).patches.patches == a.patches.patches);

  const auto dir = scratch_dir("domain");
  save_domain(dir.string(), a, data::default_domain_spec("A"));
  const auto b = load_domain(dir.string());
  CHECK(b.id == "A");
  CHECK(b.patches.patches == a.patches.patches);
  CHECK(b.patches.train == a.patches.train);
  CHECK(b.train_images == a.train_images);
  CHECK(b.v1_labels == a.v1_labels);
  CHECK(b.test_labels == a.test_labels);
  CHECK_THROWS(load_domain((dir / "missing").string()));
}

TEST_CASE("priors: perfect copies labels, ncc never reads target training labels") {
  const auto cfg = tiny_config();
  const auto& b = domain("B");
  CHECK(make_prior(cfg, b, PriorKind::Perfect, 1).labels == b.patches.labels);

  DomainData blind = b;
  blind.train_labels.fill(0.0f);
  blind.patches.labels.fill(0.0f);
  const auto p1 = make_prior(cfg, b, PriorKind::Ncc, 1);
  const auto p2 = make_prior(cfg, blind, PriorKind::Ncc, 1);
  CHECK(p1.labels == p2.labels);
  CHECK(p1.labels.shape() == b.patches.labels.shape());
  CHECK(p1.manifest.k == cfg.template_k);
  for (float v : p1.labels.data()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("lower bound: checkpoint per epoch, deterministic, loss decreases") {
  auto cfg = tiny_config();
  cfg.epochs_lower = 6;
  cfg.branch_epoch = 3;
  std::size_t calls = 0;
  const auto r1 = train_lower_bound(cfg, domain("A"), 3, [&](std::size_t e, const model::Model&, const EpochLog& l) {
    CHECK(e == ++calls);
    CHECK(l.epoch == e);
  });
  CHECK(calls == 6);
  REQUIRE(r1.checkpoints.size() == 6);
  CHECK(!(r1.at(1) == r1.at(6)));
  const auto r2 = train_lower_bound(cfg, domain("A"), 3);
  for (std::size_t e = 1; e <= 6; ++e) CHECK(testing::bit_equal(r1.at(e).parameters(), r2.at(e).parameters()));
  CHECK(r1.log.back().primary < r1.log.front().primary);
  CHECK(!(train_lower_bound(cfg, domain("A"), 4).at(6) == r1.at(6)));

  DomainData empty;
  empty.id = "X";
  CHECK_THROWS_WITH(train_lower_bound(cfg, empty, 1), doctest::Contains("no training patches"));
}

TEST_CASE("lambda = 0 fine-tuning equals continued supervised training bit-exactly") {
  auto cfg = tiny_config();
  const auto branch = train_lower_bound(cfg, domain("A"), 3).at(cfg.branch_epoch);
  const auto prior = make_prior(cfg, domain("B"), PriorKind::Perfect, 3).labels;
  cfg.lambda = 0.0;
  const auto semi = finetune_semisupervised(cfg, branch, domain("A"), domain("B"), prior, 3);
  const auto cont = continue_supervised(cfg, branch, domain("A"), 3);
  CHECK(testing::bit_equal(semi.parameters(), cont.parameters()));

  cfg.lambda = 1.0;
  std::vector<EpochLog> log;
  const auto with = finetune_semisupervised(cfg, branch, domain("A"), domain("B"), prior, 3, &log);
  CHECK(!testing::bit_equal(with.parameters(), cont.parameters()));
  CHECK(log.size() == cfg.epochs_lower - cfg.branch_epoch);
  CHECK(log.front().epoch == cfg.branch_epoch + 1);
  CHECK(log.front().embedding > 0.0);
  CHECK(testing::bit_equal(with.parameters(),
                           finetune_semisupervised(cfg, branch, domain("A"), domain("B"), prior, 3).parameters()));
}

TEST_CASE("fine-tuning rejects missing or misaligned priors and foreign branches") {
  const auto cfg = tiny_config();
  const model::Model branch(cfg.model_config(1));
  CHECK_THROWS_WITH(finetune_semisupervised(cfg, branch, domain("A"), domain("B"), Tensor4(), 1),
                    doctest::Contains("prior"));
  CHECK_THROWS_AS(finetune_semisupervised(cfg, branch, domain("A"), domain("B"), Tensor4(16, 16, 1, 3), 1),
                  ShapeError);
  auto other = cfg;
  other.base_channels = 4;
  CHECK_THROWS(continue_supervised(other, branch, domain("A"), 1));
}

TEST_CASE("upper bound trains from the branch and evaluates on full-size images") {
  const auto cfg = tiny_config();
  const auto branch = train_lower_bound(cfg, domain("A"), 3).at(cfg.branch_epoch);
  std::vector<EpochLog> log;
  const auto up = train_upper_bound(cfg, branch, domain("A"), domain("B"), 3, &log);
  CHECK(log.size() == cfg.epochs_lower - cfg.branch_epoch);
  CHECK(!(up == branch));
  const auto row = evaluate(up, domain("B"), 0.5, "upper", 3, cfg.epochs_lower);
  CHECK(row.domain == "B");
  CHECK(row.f_score >= 0.0);
  CHECK(row.f_score <= 1.0);
  CHECK(row.ok());
  CHECK(testing::bit_equal(train_upper_bound(cfg, branch, domain("A"), domain("B"), 3).parameters(), up.parameters()));
}

TEST_CASE("sweep writes deterministic CSVs, resumes and records failures") {
  const auto cfg = tiny_config();
  const auto grid = sweep_grid();
  const std::vector<SweepCell> cells(grid.begin(), grid.begin() + 2);
  std::size_t branch_calls = 0;
  const BranchProvider provider = [&](std::uint64_t seed) {
    ++branch_calls;
    return train_lower_bound(cfg, domain("A"), seed).at(cfg.branch_epoch);
  };
  const auto dir = scratch_dir("sweep");
  const auto p1 = (dir / "a.csv").string();
  const auto p2 = (dir / "b.csv").string();
  const auto rows = run_sweep(cfg, domain("A"), domain("B"), provider, p1, cells);
  CHECK(rows.size() == 2);
  CHECK(branch_calls == 1);
  run_sweep(cfg, domain("A"), domain("B"), provider, p2, cells);
  CHECK(read_file(p1) == read_file(p2));
  CHECK(parse_metrics_csv(read_file(p1)) == rows);

  // resumption: only the new cell runs, existing rows are kept verbatim
  std::size_t ran = 0;
  const std::vector<SweepCell> more(grid.begin(), grid.begin() + 3);
  const auto resumed = run_sweep(cfg, domain("A"), domain("B"), provider, p1, more, [&](const MetricsRow&) { ++ran; });
  CHECK(ran == 1);
  CHECK(resumed.size() == 3);
  CHECK(std::equal(rows.begin(), rows.end(), resumed.begin()));

  // failures are flushed as rows and retried on the next run
  const auto p3 = (dir / "c.csv").string();
  const BranchProvider broken = [](std::uint64_t) -> model::Model { throw std::runtime_error("no branch"); };
  const auto failed = run_sweep(cfg, domain("A"), domain("B"), broken, p3, cells);
  REQUIRE(failed.size() == 2);
  CHECK(failed[0].status == "failed:no branch");
  CHECK(parse_metrics_csv(read_file(p3)).size() == 2);
  const auto retried = run_sweep(cfg, domain("A"), domain("B"), provider, p3, cells);
  CHECK(std::ranges::all_of(retried, [](const MetricsRow& r) { return r.ok(); }));
  CHECK(read_file(p3) == read_file(p2));

  // a retried row keeps its place
  auto partial = parse_metrics_csv(read_file(p2));
  partial[0].status = "failed:earlier";
  const auto p4 = (dir / "d.csv").string();
  write_file_atomic(p4, metrics_csv(partial));
  run_sweep(cfg, domain("A"), domain("B"), provider, p4, cells);
  CHECK(read_file(p4) == read_file(p2));
}

TEST_CASE("JSD diagnostic rows") {
  const auto cfg = tiny_config();
  const model::Model m(cfg.model_config(2));
  const std::vector<std::size_t> ns{20, 200};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto rows = jsd_diagnostic(cfg, m, domain("A"), sampler::StrategyKind::DistributionAware, ns, seeds);
  CHECK(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.jsd >= 0.0);
    CHECK(r.jsd <= 1.0);
  }
  CHECK(rows == jsd_diagnostic(cfg, m, domain("A"), sampler::StrategyKind::DistributionAware, ns, seeds));
}
