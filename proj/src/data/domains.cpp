#include "rfe/data/domains.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rfe::data {

void DomainSpec::validate() const {
  if (id.empty() || id.find_first_of(" \t\n=") != std::string::npos) {
    throw std::invalid_argument("domain spec: id must be a non-empty token");
  }
  if (!(lesion_radius_min > 0.0) || !(lesion_radius_max >= lesion_radius_min)) {
    throw std::invalid_argument("domain spec " + id + ": lesion radius range must be positive and ordered");
  }
  if (!(background_noise_sd >= 0.0)) throw std::invalid_argument("domain spec " + id + ": noise sd must be >= 0");
  if (image_size < 16) throw std::invalid_argument("domain spec " + id + ": image_size must be >= 16");
}

std::vector<DomainSpec> default_domain_specs() {
  std::vector<DomainSpec> specs(4);
  auto& a = specs[0];
  a.id = "A";
  a.seed = 101;

  auto& b = specs[1];  // low-field scanner: weaker contrast, channel crosstalk
  b.id = "B";
  b.background_mean = 0.7;
  b.background_noise_sd = 0.07;
  b.lesion_intensity_shift = 0.45;
  b.bias_field_amplitude = 0.25;
  b.channel_mixing = {0.8, 0.2, 0.0, 0.1, 0.7, 0.2, 0.0, 0.35, 0.65};
  b.seed = 202;

  auto& c = specs[2];  // T2/FLAIR-like channels largely exchanged, weaker lesion contrast
  c.id = "C";
  c.background_mean = 1.1;
  c.background_noise_sd = 0.06;
  c.lesion_intensity_shift = 0.5;
  c.bias_field_amplitude = 0.3;
  c.channel_mixing = {1.0, 0.0, 0.0, 0.0, 0.3, 0.7, 0.0, 0.7, 0.3};
  c.seed = 303;

  auto& d = specs[3];  // noisy acquisition, brighter background
  d.id = "D";
  d.background_mean = 1.35;
  d.background_noise_sd = 0.1;
  d.lesion_intensity_shift = 0.65;
  d.bias_field_amplitude = 0.15;
  d.channel_mixing = {0.9, 0.0, 0.1, 0.0, 1.0, 0.0, 0.25, 0.0, 0.75};
  d.seed = 404;
  return specs;
}

DomainSpec default_domain_spec(const std::string& id) {
  for (auto& s : default_domain_specs()) {
    if (s.id == id) return s;
  }
  throw std::invalid_argument("no default domain spec with id '" + id + "' (expected A, B, C or D)");
}

namespace {

constexpr std::array<double, 3> kTissueWeight = {1.0, -0.6, -0.3};
constexpr std::array<double, 3> kLesionWeight = {-0.5, 1.0, 1.0};
constexpr std::array<double, 3> kDistractorWeight = {0.0, 1.0, 0.0};

struct Blob {
  double cy, cx, ra, rb, theta;
};

double blob_rho2(const Blob& b, double y, double x) {
  const double dy = y - b.cy;
  const double dx = x - b.cx;
  const double u = dx * std::cos(b.theta) + dy * std::sin(b.theta);
  const double v = -dx * std::sin(b.theta) + dy * std::cos(b.theta);
  return (u * u) / (b.ra * b.ra) + (v * v) / (b.rb * b.rb);
}

struct Field {
  std::array<double, 4> amp{}, fu{}, fv{}, phase{};
  double eval(double y, double x, double size) const {
    double s = 0.0;
    for (std::size_t k = 0; k < amp.size(); ++k) {
      s += amp[k] * std::cos(2.0 * std::numbers::pi * (fu[k] * x + fv[k] * y) / size + phase[k]);
    }
    return s;
  }
};

Field random_field(std::mt19937_64& rng, double max_freq) {
  std::uniform_real_distribution<double> freq(-max_freq, max_freq);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  Field f;
  double total = 0.0;
  for (std::size_t k = 0; k < f.amp.size(); ++k) {
    f.amp[k] = amp(rng);
    f.fu[k] = freq(rng);
    f.fv[k] = freq(rng);
    f.phase[k] = phase(rng);
    total += f.amp[k];
  }
  for (auto& a : f.amp) a /= total;  // |field| <= 1
  return f;
}

void render_image(const DomainSpec& spec, std::uint64_t image_index, Tensor4& images, Tensor4& labels,
                  std::size_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(image_index), static_cast<std::uint32_t>(image_index >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t S = spec.image_size;
  const double size = static_cast<double>(S);

  const Field tissue = random_field(rng, 3.0);
  const Field bias = random_field(rng, 0.8);

  std::uniform_real_distribution<double> pos(4.0, size - 4.0);
  std::uniform_real_distribution<double> radius(spec.lesion_radius_min, spec.lesion_radius_max);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_int_distribution<int> lesion_count(1, 6);

  std::vector<std::uint8_t> mask(S * S, 0);
  std::vector<double> lesion(S * S, 0.0);
  std::vector<double> distractor(S * S, 0.0);
  const auto cap = static_cast<std::size_t>(kMaxLesionFraction * static_cast<double>(S * S));
  std::size_t fg = 0;

  const int wanted = lesion_count(rng);
  for (int l = 0; l < wanted; ++l) {
    const Blob b{pos(rng), pos(rng), radius(rng), radius(rng), angle(rng)};
    std::vector<std::size_t> added;
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        if (!mask[y * S + x] && blob_rho2(b, static_cast<double>(y), static_cast<double>(x)) <= 1.0) {
          added.push_back(y * S + x);
        }
      }
    }
    if (added.empty() || fg + added.size() >= cap) continue;
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const double r2 = blob_rho2(b, static_cast<double>(y), static_cast<double>(x));
        if (r2 <= 1.0) lesion[y * S + x] = std::max(lesion[y * S + x], 0.7 + 0.3 * (1.0 - r2));
      }
    }
    for (std::size_t i : added) mask[i] = 1;
    fg += added.size();
  }
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    const double r = radius(rng);
    const Blob b{pos(rng), pos(rng), r, r, 0.0};
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const double r2 = blob_rho2(b, static_cast<double>(y), static_cast<double>(x));
        if (r2 <= 1.0) distractor[y * S + x] = std::max(distractor[y * S + x], 0.7 + 0.3 * (1.0 - r2));
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const std::size_t i = y * S + x;
      const double t = tissue.eval(static_cast<double>(y), static_cast<double>(x), size);
      const double bf = 1.0 + spec.bias_field_amplitude * bias.eval(static_cast<double>(y), static_cast<double>(x), size);
      std::array<double, 3> latent{};
      for (std::size_t c = 0; c < 3; ++c) {
        latent[c] = spec.background_mean + spec.tissue_contrast * kTissueWeight[c] * t +
                    spec.lesion_intensity_shift * (kLesionWeight[c] * lesion[i] + kDistractorWeight[c] * distractor[i]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.0;
        for (std::size_t k = 0; k < 3; ++k) v += spec.channel_mixing[c * 3 + k] * latent[k];
        v = v * bf + spec.background_noise_sd * noise(rng);
        images(y, x, c, slot) = static_cast<float>(v);
      }
      labels(y, x, 0, slot) = mask[i] ? 1.0f : 0.0f;
    }
  }
}

}  // namespace

GeneratedImages generate_domain(const DomainSpec& spec, std::size_t n_images, std::size_t first_index) {
  spec.validate();
  if (n_images < 1) throw std::invalid_argument("generate_domain: n_images must be >= 1");
  const std::size_t S = spec.image_size;
  GeneratedImages out{Tensor4(S, S, kImageChannels, n_images), Tensor4(S, S, 1, n_images)};
  for (std::size_t i = 0; i < n_images; ++i) render_image(spec, first_index + i, out.images, out.labels, i);
  return out;
}

void split_train_validation(std::size_t n, std::mt19937_64& rng, std::vector<std::size_t>& train,
                            std::vector<std::size_t>& validation) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  const std::size_t n_train = (7 * n + 5) / 10;  // round_half_up(0.7 n)
  train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());
}

Tensor4 crop_at(const Tensor4& maps, std::span<const PatchOrigin> origins, std::size_t size) {
  if (origins.empty()) throw std::invalid_argument("crop_at: no origins");
  Tensor4 out(size, size, maps.channels(), origins.size());
  for (std::size_t p = 0; p < origins.size(); ++p) {
    const auto& o = origins[p];
    if (o.image >= maps.batch() || o.row + size > maps.height() || o.col + size > maps.width()) {
      throw std::out_of_range("crop_at: window " + std::to_string(p) + " outside " + to_string(maps.shape()));
    }
    for (std::size_t c = 0; c < maps.channels(); ++c) {
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) out(y, x, c, p) = maps(o.row + y, o.col + x, c, o.image);
      }
    }
  }
  return out;
}

Tensor4 select_batch(const Tensor4& t, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("select_batch: no indices");
  Shape4 s = t.shape();
  s.batch = indices.size();
  Tensor4 out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.batch()) throw std::out_of_range("select_batch: index out of range");
    auto src = t.image(indices[i]);
    std::copy(src.begin(), src.end(), out.image(i).begin());
  }
  return out;
}

DomainDataset crop_patches(const std::string& domain_id, const Tensor4& images, const Tensor4& labels,
                           std::size_t size, std::size_t per_image, std::mt19937_64& rng) {
  if (size == 0 || size > images.height() || size > images.width()) {
    throw std::invalid_argument("crop_patches: patch size " + std::to_string(size) + " exceeds image " +
                                to_string(images.shape()));
  }
  if (labels.height() != images.height() || labels.width() != images.width() || labels.batch() != images.batch() ||
      labels.channels() != 1) {
    throw ShapeError("crop_patches: labels " + to_string(labels.shape()) + " do not match images " +
                     to_string(images.shape()));
  }
  DomainDataset ds;
  ds.domain_id = domain_id;
  const auto H = static_cast<std::ptrdiff_t>(images.height());
  const auto W = static_cast<std::ptrdiff_t>(images.width());
  const auto half = static_cast<std::ptrdiff_t>(size / 2);
  const auto jit = static_cast<std::ptrdiff_t>(size / 4);
  const auto sz = static_cast<std::ptrdiff_t>(size);
  std::uniform_int_distribution<std::ptrdiff_t> jitter(-jit, jit);
  for (std::size_t n = 0; n < images.batch(); ++n) {
    std::vector<std::pair<std::size_t, std::size_t>> lesion;
    for (std::size_t y = 0; y < images.height(); ++y) {
      for (std::size_t x = 0; x < images.width(); ++x) {
        if (labels(y, x, 0, n) != 0.0f) lesion.emplace_back(y, x);
      }
    }
    if (lesion.empty()) {
      std::cerr << "warning: crop_patches: image " << n << " of domain " << domain_id << " has no lesion; skipped\n";
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, lesion.size() - 1);
    for (std::size_t k = 0; k < per_image; ++k) {
      const auto [ly, lx] = lesion[pick(rng)];
      const std::ptrdiff_t top = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ly) - half + jitter(rng), 0, H - sz);
      const std::ptrdiff_t left = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(lx) - half + jitter(rng), 0, W - sz);
      ds.origins.push_back(PatchOrigin{n, static_cast<std::size_t>(top), static_cast<std::size_t>(left)});
    }
  }
  if (ds.origins.empty()) throw std::invalid_argument("crop_patches: no image of domain " + domain_id + " has lesions");
  ds.patches = crop_at(images, ds.origins, size);
  ds.labels = crop_at(labels, ds.origins, size);
  split_train_validation(ds.origins.size(), rng, ds.train, ds.validation);
  return ds;
}

double foreground_fraction(const Tensor4& labels) {
  double s = 0.0;
  for (float v : labels.data()) s += v;
  return s / static_cast<double>(labels.size());
}

std::string describe(const DomainSpec& s) {
  std::ostringstream o;
  o.precision(17);
  o << "background_mean=" << s.background_mean << " background_noise_sd=" << s.background_noise_sd
    << " lesion_intensity_shift=" << s.lesion_intensity_shift << " lesion_radius=" << s.lesion_radius_min << ","
    << s.lesion_radius_max << " bias_field_amplitude=" << s.bias_field_amplitude << " channel_mixing=";
  for (std::size_t i = 0; i < 9; ++i) o << (i ? "," : "") << s.channel_mixing[i];
  o << " tissue_contrast=" << s.tissue_contrast << " distractors=" << s.distractors << " image_size=" << s.image_size
    << " seed=" << s.seed;
  return o.str();
}

namespace {

template <typename Seq>
std::string join(const Seq& v) {
  std::ostringstream o;
  bool first = true;
  for (const auto& x : v) {
    o << (first ? "" : " ") << x;
    first = false;
  }
  return o.str();
}

}  // namespace

void save_dataset(const std::string& dir, const DomainDataset& ds, const DomainSpec& spec) {
  save_t4f(dir + "/patches.t4f", ds.patches);
  save_t4f(dir + "/patch_labels.t4f", ds.labels);
  std::ofstream out(dir + "/dataset.txt", std::ios::trunc);
  if (!out) throw FormatError("dataset manifest: cannot open '" + dir + "/dataset.txt'");
  out << "domain = " << ds.domain_id << '\n'
      << "patches = " << ds.size() << '\n'
      << "seed = " << ds.seed << '\n'
      << "spec = " << describe(spec) << '\n';
  std::vector<std::size_t> flat;
  for (const auto& o : ds.origins) flat.insert(flat.end(), {o.image, o.row, o.col});
  out << "origins = " << join(flat) << '\n'
      << "train = " << join(ds.train) << '\n'
      << "validation = " << join(ds.validation) << '\n';
}

DomainDataset load_dataset(const std::string& dir) {
  DomainDataset ds;
  std::ifstream in(dir + "/dataset.txt");
  if (!in) throw FormatError("dataset manifest: cannot open '" + dir + "/dataset.txt'");
  std::string line;
  std::size_t count = 0;
  std::size_t lineno = 0;
  bool have_origins = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) {
      if (line.empty()) continue;
      throw FormatError("dataset manifest: line " + std::to_string(lineno) + " malformed");
    }
    const std::string key = line.substr(0, eq);
    std::istringstream val(line.substr(eq + 3));
    if (key == "domain") {
      val >> ds.domain_id;
    } else if (key == "patches") {
      val >> count;
    } else if (key == "seed") {
      val >> ds.seed;
    } else if (key == "spec") {
      // informational
    } else if (key == "origins") {
      std::size_t a, b, c;
      while (val >> a >> b >> c) ds.origins.push_back(PatchOrigin{a, b, c});
      have_origins = true;
    } else if (key == "train" || key == "validation") {
      auto& dst = key == "train" ? ds.train : ds.validation;
      std::size_t v;
      while (val >> v) dst.push_back(v);
    } else {
      throw FormatError("dataset manifest: unknown key '" + key + "' on line " + std::to_string(lineno));
    }
  }
  if (!have_origins || ds.origins.size() != count) {
    throw FormatError("dataset manifest: origin count does not match patches = " + std::to_string(count));
  }
  ds.patches = load_t4f(dir + "/patches.t4f");
  ds.labels = load_t4f(dir + "/patch_labels.t4f");
  if (ds.patches.batch() != count || ds.labels.batch() != count) {
    throw FormatError("dataset: tensor batch sizes do not match manifest count " + std::to_string(count));
  }
  for (std::size_t i : ds.train) {
    if (i >= count) throw FormatError("dataset manifest: train index out of range");
  }
  for (std::size_t i : ds.validation) {
    if (i >= count) throw FormatError("dataset manifest: validation index out of range");
  }
  return ds;
}

}  // namespace rfe::data
