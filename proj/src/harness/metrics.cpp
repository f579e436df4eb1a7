#include "rfe/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rfe::harness {

double f_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double f_score_image(const Tensor4& probs, const Tensor4& labels, std::size_t n, double threshold) {
  if (probs.height() != labels.height() || probs.width() != labels.width() || probs.batch() != labels.batch() ||
      probs.channels() != 1 || labels.channels() != 1) {
    throw ShapeError("f_score: prediction " + to_string(probs.shape()) + " vs labels " + to_string(labels.shape()));
  }
  const auto p = probs.plane(0, n);
  const auto g = labels.plane(0, n);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = p[i] >= threshold;
    const bool gt = g[i] != 0.0f;
    tp += pred && gt;
    fp += pred && !gt;
    fn += !pred && gt;
  }
  return f_score(tp, fp, fn);
}

double mean_f_score(const Tensor4& probs, const Tensor4& labels, double threshold) {
  double s = 0.0;
  for (std::size_t n = 0; n < probs.batch(); ++n) s += f_score_image(probs, labels, n, threshold);
  return s / static_cast<double>(probs.batch());
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

template <typename Row, typename Parse>
std::vector<Row> parse_rows(const std::string& text, const std::string& header, std::size_t columns, Parse parse) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw std::runtime_error("csv: expected header '" + header + "'");
  std::vector<Row> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != columns) {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                               " fields, got " + std::to_string(cells.size()));
    }
    try {
      rows.push_back(parse(cells));
    } catch (const std::logic_error& e) {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

constexpr const char* kMetricsHeader = "model,domain,f_score,seed,epoch,status";
constexpr const char* kJsdHeader = "n_embed,seed,jsd";

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += sanitize(r.model) + "," + sanitize(r.domain) + "," + fmt(r.f_score) + "," + std::to_string(r.seed) + "," +
           std::to_string(r.epoch) + "," + sanitize(r.status) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  return parse_rows<MetricsRow>(text, kMetricsHeader, 6, [](const std::vector<std::string>& c) {
    MetricsRow r;
    r.model = c[0];
    r.domain = c[1];
    r.f_score = std::stod(c[2]);
    r.seed = std::stoull(c[3]);
    r.epoch = std::stoull(c[4]);
    r.status = c[5];
    return r;
  });
}

std::string jsd_csv(std::span<const JsdRow> rows) {
  std::string out = std::string(kJsdHeader) + "\n";
  for (const auto& r : rows) out += std::to_string(r.n_embed) + "," + std::to_string(r.seed) + "," + fmt(r.jsd) + "\n";
  return out;
}

std::vector<JsdRow> parse_jsd_csv(const std::string& text) {
  return parse_rows<JsdRow>(text, kJsdHeader, 3, [](const std::vector<std::string>& c) {
    return JsdRow{std::stoull(c[0]), std::stoull(c[1]), std::stod(c[2])};
  });
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace rfe::harness
