#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rfe/tensor.hpp"

namespace rfe::harness {

/// 2 TP / (2 TP + FP + FN); 1 when prediction and truth are both empty.
double f_score(std::size_t tp, std::size_t fp, std::size_t fn);

/// F-score of [probs >= threshold] against binary labels for one image.
double f_score_image(const Tensor4& probs, const Tensor4& labels, std::size_t n, double threshold);

/// Per-image F-scores averaged over the batch.
double mean_f_score(const Tensor4& probs, const Tensor4& labels, double threshold);

struct MetricsRow {
  std::string model;   // e.g. "lower", "upper", "semi:ncc:acd:80/20:100"
  std::string domain;
  double f_score = 0.0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string status = "ok";  // "ok" or "failed:<reason>"

  bool ok() const { return status == "ok"; }
  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// Header plus one line per row; doubles use 17 significant digits.
std::string metrics_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

struct JsdRow {
  std::size_t n_embed = 0;
  std::uint64_t seed = 0;
  double jsd = 0.0;
  friend bool operator==(const JsdRow&, const JsdRow&) = default;
};

std::string jsd_csv(std::span<const JsdRow> rows);
std::vector<JsdRow> parse_jsd_csv(const std::string& text);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace rfe::harness
