#include "rfe/prior/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rfe::prior {

Map2D channel_map(const Tensor4& t, std::size_t c, std::size_t n) {
  Map2D m(t.height(), t.width());
  auto src = t.plane(c, n);
  std::copy(src.begin(), src.end(), m.data.begin());
  return m;
}

std::vector<Map2D> channel_maps(const Tensor4& t, std::size_t c) {
  std::vector<Map2D> out;
  out.reserve(t.batch());
  for (std::size_t n = 0; n < t.batch(); ++n) out.push_back(channel_map(t, c, n));
  return out;
}

Tensor4 stack_maps(std::span<const Map2D> maps) {
  if (maps.empty()) throw std::invalid_argument("stack_maps: no maps");
  Tensor4 out(maps[0].height, maps[0].width, 1, maps.size());
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n].height != maps[0].height || maps[n].width != maps[0].width) {
      throw ShapeError("stack_maps: map " + std::to_string(n) + " differs in size");
    }
    std::copy(maps[n].data.begin(), maps[n].data.end(), out.plane(0, n).begin());
  }
  return out;
}

Tensor4 perfect_prior(const Tensor4& labels) { return labels; }

TemplateSet extract_templates(std::span<const Map2D> images, std::span<const Map2D> labels, std::size_t k,
                              std::size_t count, std::mt19937_64& rng) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("extract_templates: k must be odd, got " + std::to_string(k));
  if (images.size() != labels.size() || images.empty()) {
    throw std::invalid_argument("extract_templates: need one label map per image");
  }
  if (count == 0) throw std::invalid_argument("extract_templates: count must be >= 1");
  const std::size_t half = k / 2;
  std::vector<PixelPosition> centers;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    const auto& lab = labels[n];
    if (lab.height != img.height || lab.width != img.width) {
      throw ShapeError("extract_templates: label map " + std::to_string(n) + " differs in size from its image");
    }
    if (k > img.height || k > img.width) {
      throw std::invalid_argument("extract_templates: k = " + std::to_string(k) + " exceeds image size " +
                                  std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    for (std::size_t r = half; r + half < img.height; ++r) {
      for (std::size_t c = half; c + half < img.width; ++c) {
        if (lab.at(r, c) != 0.0f) centers.push_back(PixelPosition{n, r, c});
      }
    }
  }
  if (centers.empty()) throw std::invalid_argument("extract_templates: no lesion pixel with an in-bounds window");

  TemplateSet out;
  out.k = k;
  if (centers.size() >= count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, centers.size() - 1);
      std::swap(centers[i], centers[pick(rng)]);
      out.centers.push_back(centers[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.centers.push_back(centers[pick(rng)]);
  }
  for (const auto& p : out.centers) {
    Map2D t(k, k);
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) t.at(dy, dx) = images[p.batch].at(p.row + dy - half, p.col + dx - half);
    }
    out.templates.push_back(std::move(t));
  }
  return out;
}

Map2D ncc_match(const Map2D& image, const Map2D& templ) {
  const std::size_t kh = templ.height;
  const std::size_t kw = templ.width;
  if (kh == 0 || kw == 0 || kh > image.height || kw > image.width) {
    throw std::invalid_argument("ncc_match: template " + std::to_string(kh) + "x" + std::to_string(kw) +
                                " does not fit image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width));
  }
  const double n = static_cast<double>(kh * kw);
  double tmean = 0.0;
  for (float v : templ.data) tmean += v;
  tmean /= n;
  std::vector<double> tz(templ.data.size());
  double tvar = 0.0, tsq = 0.0;
  for (std::size_t i = 0; i < tz.size(); ++i) {
    tz[i] = templ.data[i] - tmean;
    tvar += tz[i] * tz[i];
    tsq += static_cast<double>(templ.data[i]) * templ.data[i];
  }
  Map2D out(image.height, image.width, 0.0f);
  if (!(tvar > 1e-12 * std::max(1.0, tsq))) return out;

  const std::size_t cy = kh / 2;
  const std::size_t cx = kw / 2;
  for (std::size_t r = 0; r + kh <= image.height; ++r) {
    for (std::size_t c = 0; c + kw <= image.width; ++c) {
      double wmean = 0.0, wsq = 0.0;
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const float* row = &image.data[(r + dy) * image.width + c];
        for (std::size_t dx = 0; dx < kw; ++dx) {
          wmean += row[dx];
          wsq += static_cast<double>(row[dx]) * row[dx];
        }
      }
      wmean /= n;
      double cross = 0.0, wvar = 0.0;
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const float* row = &image.data[(r + dy) * image.width + c];
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const double wz = row[dx] - wmean;
          cross += wz * tz[dy * kw + dx];
          wvar += wz * wz;
        }
      }
      if (!(wvar > 1e-12 * std::max(1.0, wsq))) continue;
      const double v = cross / std::sqrt(wvar * tvar);
      out.at(r + cy, c + cx) = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return out;
}

Map2D aggregate_responses(std::span<const Map2D> responses) {
  if (responses.empty()) throw std::invalid_argument("aggregate_responses: no response maps");
  const auto& first = responses.front();
  for (const auto& r : responses) {
    if (r.height != first.height || r.width != first.width) {
      throw ShapeError("aggregate_responses: response maps differ in size");
    }
  }
  Map2D out(first.height, first.width);
  const double inv = 1.0 / static_cast<double>(responses.size());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double log_sum = 0.0;
    bool zero = false;
    for (const auto& r : responses) {
      const double v = (static_cast<double>(r.data[i]) + 1.0) * 0.5;
      if (!(v > 0.0)) {
        zero = true;
        break;
      }
      log_sum += std::log(v);
    }
    out.data[i] = zero ? 0.0f : static_cast<float>(std::clamp(std::exp(log_sum * inv), 0.0, 1.0));
  }
  return out;
}

double dice_at_threshold(std::span<const Map2D> scores, std::span<const Map2D> truth, float threshold) {
  if (scores.size() != truth.size()) throw std::invalid_argument("dice_at_threshold: map count mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t m = 0; m < scores.size(); ++m) {
    if (scores[m].data.size() != truth[m].data.size()) {
      throw ShapeError("dice_at_threshold: map " + std::to_string(m) + " size mismatch");
    }
    for (std::size_t i = 0; i < scores[m].data.size(); ++i) {
      const bool pred = scores[m].data[i] >= threshold;
      const bool gt = truth[m].data[i] != 0.0f;
      tp += pred && gt;
      fp += pred && !gt;
      fn += !pred && gt;
    }
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

float threshold_grid_value(std::size_t i) { return static_cast<float>(static_cast<double>(i) / 255.0); }

ThresholdChoice select_threshold(std::span<const Map2D> aggregates, std::span<const Map2D> truth) {
  bool any = false;
  for (const auto& t : truth) {
    any = any || std::any_of(t.data.begin(), t.data.end(), [](float v) { return v != 0.0f; });
  }
  if (!any) throw std::invalid_argument("select_threshold: ground truth has no positive pixel");
  ThresholdChoice best{threshold_grid_value(0), -1.0};
  for (std::size_t i = 0; i < kThresholdGridSize; ++i) {
    const float t = threshold_grid_value(i);
    const double d = dice_at_threshold(aggregates, truth, t);
    if (d >= best.dice) best = ThresholdChoice{t, d};  // >= : ties go to the larger threshold
  }
  return best;
}

NoisyPriorResult generate_noisy_prior(std::span<const Map2D> source_images, std::span<const Map2D> source_labels,
                                      std::span<const Map2D> target_images, std::size_t k, std::size_t count,
                                      std::mt19937_64& rng) {
  NoisyPriorResult out;
  out.templates = extract_templates(source_images, source_labels, k, count, rng);
  auto respond = [&](const Map2D& image) {
    std::vector<Map2D> responses;
    responses.reserve(out.templates.templates.size());
    for (const auto& t : out.templates.templates) responses.push_back(ncc_match(image, t));
    return aggregate_responses(responses);
  };
  std::vector<Map2D> source_agg;
  for (const auto& img : source_images) source_agg.push_back(respond(img));
  out.selection = select_threshold(source_agg, source_labels);
  for (const auto& img : target_images) {
    NoisyPrior p;
    p.response = respond(img);
    p.threshold = out.selection.threshold;
    p.labels = Map2D(img.height, img.width);
    for (std::size_t i = 0; i < p.labels.data.size(); ++i) {
      p.labels.data[i] = p.response.data[i] >= p.threshold ? 1.0f : 0.0f;
    }
    out.priors.push_back(std::move(p));
  }
  return out;
}

void save_prior(const std::string& t4f_path, const std::string& manifest_path, const Tensor4& labels,
                const PriorManifest& m) {
  save_t4f(t4f_path, labels);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw FormatError("prior manifest: cannot open '" + manifest_path + "'");
  out.precision(9);
  out << "source_id = " << m.source_id << '\n'
      << "k = " << m.k << '\n'
      << "count = " << m.count << '\n'
      << "threshold = " << m.threshold << '\n'
      << "seed = " << m.seed << '\n'
      << "images = " << m.images << '\n'
      << "source_dice = " << m.source_dice << '\n';
}

PriorManifest load_prior_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("prior manifest: cannot open '" + manifest_path + "'");
  PriorManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("prior manifest: line " + std::to_string(lineno) + " malformed");
    const std::string key = line.substr(0, eq);
    std::istringstream val(line.substr(eq + 3));
    bool ok = true;
    if (key == "source_id") ok = static_cast<bool>(val >> m.source_id);
    else if (key == "k") ok = static_cast<bool>(val >> m.k);
    else if (key == "count") ok = static_cast<bool>(val >> m.count);
    else if (key == "threshold") ok = static_cast<bool>(val >> m.threshold);
    else if (key == "seed") ok = static_cast<bool>(val >> m.seed);
    else if (key == "images") ok = static_cast<bool>(val >> m.images);
    else if (key == "source_dice") ok = static_cast<bool>(val >> m.source_dice);
    else throw FormatError("prior manifest: unknown key '" + key + "' on line " + std::to_string(lineno));
    if (!ok) throw FormatError("prior manifest: bad value on line " + std::to_string(lineno));
  }
  return m;
}

}  // namespace rfe::prior
