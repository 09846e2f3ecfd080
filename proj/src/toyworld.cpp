#include "flowpref/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "flowpref/binio.hpp"
#include "flowpref/rng.hpp"

namespace flowpref {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Substream tags for the per-pair RNG derivations.
enum : uint64_t { kStreamPattern = 0, kStreamSpec = 1, kStreamDegrade = 2 };

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}
}  // namespace

ToyImage make_image(int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("toy image: non-positive dimensions");
  ToyImage img;
  img.width = width;
  img.height = height;
  img.pixels = Eigen::VectorXf::Zero(static_cast<long>(width) * height);
  return img;
}

void validate_image(const ToyImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("toy image: non-positive dimensions");
  if (img.pixels.size() != img.size()) throw ValidationError("toy image: pixel count does not match dimensions");
  for (long i = 0; i < img.pixels.size(); ++i) {
    const float v = img.pixels(i);
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("toy image: intensity outside [0,1]");
  }
}

double image_variance(const ToyImage& img) {
  const double mean = img.pixels.cast<double>().mean();
  return (img.pixels.cast<double>().array() - mean).square().mean();
}

double image_mse(const ToyImage& a, const ToyImage& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("image_mse: dimensions differ");
  return (a.pixels.cast<double>() - b.pixels.cast<double>()).squaredNorm() / static_cast<double>(a.size());
}

ToyImage pattern_grating(int w, int h, double frequency, double phase) {
  ToyImage img = make_image(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = clamp01(static_cast<float>(0.5 + 0.45 * std::sin(2.0 * kPi * frequency * x / w + phase)));
  return img;
}

ToyImage pattern_checkerboard(int w, int h, int cell, float lo, float hi) {
  if (cell <= 0) throw ValidationError("checkerboard: non-positive cell size");
  ToyImage img = make_image(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = (((x / cell) + (y / cell)) % 2 == 0) ? lo : hi;
  return img;
}

ToyImage pattern_blob(int w, int h, uint64_t seed) {
  Rng rng(seed);
  ToyImage img = make_image(w, h);
  const int n_blobs = 2 + static_cast<int>(rng.uniform_index(3));
  struct Blob {
    double cx, cy, s, amp;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < n_blobs; ++b)
    blobs.push_back({rng.uniform(0.15, 0.85) * w, rng.uniform(0.15, 0.85) * h, rng.uniform(0.08, 0.22) * w,
                     rng.uniform(0.5, 1.0)});
  const double base = rng.uniform(0.02, 0.15);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = base;
      for (const auto& b : blobs) {
        const double dx = x - b.cx, dy = y - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.s * b.s));
      }
      img.at(x, y) = clamp01(static_cast<float>(v));
    }
  return img;
}

ToyImage pattern_edge(int w, int h, uint64_t seed) {
  Rng rng(seed);
  ToyImage img = make_image(w, h);
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  const double nx = std::cos(angle), ny = std::sin(angle);
  const double offset = rng.uniform(-0.2, 0.2) * w;
  const float lo = static_cast<float>(rng.uniform(0.05, 0.35));
  const float hi = static_cast<float>(rng.uniform(0.65, 0.95));
  const double softness = rng.uniform(0.6, 1.6);  // transition width in pixels
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = (x - w / 2.0) * nx + (y - h / 2.0) * ny - offset;
      const double t = 1.0 / (1.0 + std::exp(-d / softness));
      img.at(x, y) = clamp01(static_cast<float>(lo + (hi - lo) * t));
    }
  return img;
}

ToyImage make_clean_image(PatternFamily family, uint64_t seed, int width, int height) {
  Rng rng(derive_seed(seed, static_cast<uint64_t>(family)));
  switch (family) {
    case PatternFamily::Grating: {
      const double freq = 1.0 + static_cast<double>(rng.uniform_index(6));
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      return pattern_grating(width, height, freq, phase);
    }
    case PatternFamily::Checkerboard: {
      static const int cells[] = {2, 4, 8, 16};
      const int cell = cells[rng.uniform_index(4)];
      const float lo = static_cast<float>(rng.uniform(0.05, 0.35));
      const float hi = static_cast<float>(rng.uniform(0.65, 0.95));
      return pattern_checkerboard(width, height, cell, lo, hi);
    }
    case PatternFamily::Blob:
      return pattern_blob(width, height, rng.next_u64());
    case PatternFamily::Edge:
      return pattern_edge(width, height, rng.next_u64());
    case PatternFamily::Mixture: {
      // Blend two distinct base families.
      const auto fam_a = static_cast<PatternFamily>(rng.uniform_index(4));
      auto fam_b = static_cast<PatternFamily>(rng.uniform_index(4));
      if (fam_b == fam_a) fam_b = static_cast<PatternFamily>((static_cast<int>(fam_b) + 1) % 4);
      const float alpha = static_cast<float>(rng.uniform(0.3, 0.7));
      const ToyImage a = make_clean_image(fam_a, rng.next_u64(), width, height);
      const ToyImage b = make_clean_image(fam_b, rng.next_u64(), width, height);
      ToyImage img = make_image(width, height);
      img.pixels = alpha * a.pixels + (1.0f - alpha) * b.pixels;
      for (long i = 0; i < img.pixels.size(); ++i) img.pixels(i) = clamp01(img.pixels(i));
      return img;
    }
  }
  throw ValidationError("make_clean_image: unknown pattern family");
}

void DegradationSpec::validate() const {
  if (!(blur_sigma >= 0.0f) || !std::isfinite(blur_sigma))
    throw ValidationError("degradation spec: blur_sigma must be finite and >= 0");
  if (!(noise_sigma >= 0.0f) || !std::isfinite(noise_sigma))
    throw ValidationError("degradation spec: noise_sigma must be finite and >= 0");
  if (downsample_factor < 1) throw ValidationError("degradation spec: downsample_factor must be >= 1");
  if (quant_levels == 1) throw ValidationError("degradation spec: quant_levels must be >= 2 (or 0 for off)");
}

ToyImage gaussian_blur(const ToyImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    ksum += kernel[static_cast<size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  const int w = img.width, h = img.height;
  // Horizontal then vertical pass, reflecting at the borders.
  std::vector<double> tmp(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * img.at(reflect_index(x + i, w), y);
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  ToyImage out = make_image(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(reflect_index(y + i, h)) * w + x];
      out.at(x, y) = static_cast<float>(acc);
    }
  return out;
}

ToyImage box_resample(const ToyImage& img, uint32_t factor) {
  if (factor <= 1) return img;
  const int w = img.width, h = img.height, f = static_cast<int>(factor);
  ToyImage out = make_image(w, h);
  for (int by = 0; by < h; by += f)
    for (int bx = 0; bx < w; bx += f) {
      double acc = 0.0;
      int count = 0;
      for (int y = by; y < std::min(by + f, h); ++y)
        for (int x = bx; x < std::min(bx + f, w); ++x) {
          acc += img.at(x, y);
          ++count;
        }
      const float v = static_cast<float>(acc / count);
      for (int y = by; y < std::min(by + f, h); ++y)
        for (int x = bx; x < std::min(bx + f, w); ++x) out.at(x, y) = v;
    }
  return out;
}

ToyImage add_noise(const ToyImage& img, double sigma, uint64_t seed) {
  if (sigma <= 0.0) return img;
  Rng rng(derive_seed(seed, 0x6e6f6973));  // noise-stage substream
  ToyImage out = img;
  for (long i = 0; i < out.pixels.size(); ++i)
    out.pixels(i) = static_cast<float>(out.pixels(i) + sigma * rng.normal());
  return out;
}

ToyImage quantize(const ToyImage& img, uint32_t levels) {
  if (levels < 2) return img;
  const float steps = static_cast<float>(levels - 1);
  ToyImage out = img;
  for (long i = 0; i < out.pixels.size(); ++i) out.pixels(i) = std::round(out.pixels(i) * steps) / steps;
  return out;
}

ToyImage degrade(const ToyImage& clean, const DegradationSpec& spec) {
  validate_image(clean);
  spec.validate();
  ToyImage img = gaussian_blur(clean, spec.blur_sigma);
  img = box_resample(img, spec.downsample_factor);
  img = add_noise(img, spec.noise_sigma, spec.seed);
  img = quantize(img, spec.quant_levels);
  for (long i = 0; i < img.pixels.size(); ++i) img.pixels(i) = clamp01(img.pixels(i));
  return img;
}

Split split_of_index(size_t index) {
  switch (index % 10) {
    case 8:
      return Split::Val;
    case 9:
      return Split::Test;
    default:
      return Split::Train;
  }
}

std::vector<size_t> Corpus::split_indices(Split split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < pairs.size(); ++i)
    if (split_of_index(i) == split) out.push_back(i);
  return out;
}

void SpecDistribution::validate() const {
  if (components.empty()) throw ValidationError("spec distribution: no components");
  double total = 0.0;
  for (const auto& [w, r] : components) {
    if (!(w > 0.0)) throw ValidationError("spec distribution: non-positive component weight");
    if (r.blur_hi < r.blur_lo || r.noise_hi < r.noise_lo)
      throw ValidationError("spec distribution: inverted range");
    if (r.factors.empty()) throw ValidationError("spec distribution: empty factor choices");
    if (r.quant_prob < 0.0 || r.quant_prob > 1.0) throw ValidationError("spec distribution: quant_prob outside [0,1]");
    if (r.quant_prob > 0.0 && r.quant_choices.empty())
      throw ValidationError("spec distribution: quant_prob > 0 with no quant choices");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("spec distribution: zero total weight");
}

SpecDistribution SpecDistribution::easy() {
  SpecRange r;
  r.blur_lo = 0.4f;
  r.blur_hi = 1.0f;
  r.noise_lo = 0.01f;
  r.noise_hi = 0.05f;
  r.factors = {1, 2};
  return SpecDistribution{{{1.0, r}}};
}

SpecDistribution SpecDistribution::hard() {
  SpecRange r;
  r.blur_lo = 1.0f;
  r.blur_hi = 2.5f;
  r.noise_lo = 0.05f;
  r.noise_hi = 0.15f;
  r.factors = {2, 4};
  r.quant_choices = {8, 16, 32};
  r.quant_prob = 0.5;
  return SpecDistribution{{{1.0, r}}};
}

SpecDistribution SpecDistribution::mixed() {
  SpecDistribution d;
  d.components.push_back({0.5, SpecDistribution::easy().components[0].second});
  d.components.push_back({0.5, SpecDistribution::hard().components[0].second});
  return d;
}

SpecDistribution SpecDistribution::fixed(const DegradationSpec& spec) {
  spec.validate();
  SpecRange r;
  r.blur_lo = r.blur_hi = spec.blur_sigma;
  r.noise_lo = r.noise_hi = spec.noise_sigma;
  r.factors = {spec.downsample_factor};
  if (spec.quant_levels >= 2) {
    r.quant_choices = {spec.quant_levels};
    r.quant_prob = 1.0;
  }
  return SpecDistribution{{{1.0, r}}};
}

SpecDistribution SpecDistribution::profile(const std::string& name) {
  if (name == "easy") return easy();
  if (name == "hard") return hard();
  if (name == "mixed") return mixed();
  throw ValidationError("unknown degradation profile: " + name);
}

namespace {
DegradationSpec sample_spec(const SpecDistribution& dist, Rng& rng, uint64_t pair_seed) {
  double total = 0.0;
  for (const auto& [w, r] : dist.components) total += w;
  double pick = rng.uniform(0.0, total);
  const SpecRange* range = &dist.components.back().second;
  for (const auto& [w, r] : dist.components) {
    if (pick < w) {
      range = &r;
      break;
    }
    pick -= w;
  }
  DegradationSpec spec;
  spec.blur_sigma = static_cast<float>(rng.uniform(range->blur_lo, range->blur_hi));
  spec.noise_sigma = static_cast<float>(rng.uniform(range->noise_lo, range->noise_hi));
  spec.downsample_factor = range->factors[rng.uniform_index(range->factors.size())];
  if (!range->quant_choices.empty() && rng.uniform() < range->quant_prob)
    spec.quant_levels = range->quant_choices[rng.uniform_index(range->quant_choices.size())];
  spec.seed = pair_seed;
  return spec;
}
}  // namespace

CorpusBuild build_corpus(size_t n, const SpecDistribution& dist, uint64_t seed, int width, int height, int workers) {
  if (n < 1) throw ValidationError("build_corpus: n must be >= 1");
  dist.validate();
  Corpus corpus;
  corpus.width = width;
  corpus.height = height;
  corpus.pairs.resize(n);

  // Each pair derives its own streams from (seed, i); generation order is
  // irrelevant, so the fan-out stays deterministic for any worker count.
  auto build_pair = [&](size_t i) {
    Rng pattern_rng(derive_seed(seed, i, kStreamPattern));
    const auto family = static_cast<PatternFamily>(pattern_rng.uniform_index(5));
    DegradedPair& pair = corpus.pairs[i];
    pair.clean = make_clean_image(family, pattern_rng.next_u64(), width, height);
    Rng spec_rng(derive_seed(seed, i, kStreamSpec));
    pair.spec = sample_spec(dist, spec_rng, derive_seed(seed, i, kStreamDegrade));
    pair.degraded = degrade(pair.clean, pair.spec);
  };

  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) build_pair(i);
  } else {
    std::vector<std::thread> pool;
    const size_t nw = std::min<size_t>(static_cast<size_t>(workers), n);
    for (size_t t = 0; t < nw; ++t)
      pool.emplace_back([&, t]() {
        for (size_t i = t; i < n; i += nw) build_pair(i);
      });
    for (auto& th : pool) th.join();
  }

  DiversitySummary summary = summarize_corpus(corpus);
  return CorpusBuild{std::move(corpus), summary};
}

DiversitySummary summarize_corpus(const Corpus& corpus) {
  DiversitySummary s;
  s.n_pairs = corpus.pairs.size();
  std::set<float> blurs, noises;
  for (const auto& p : corpus.pairs) {
    if (p.spec.blur_sigma > 0.0f) ++s.blur_active;
    if (p.spec.noise_sigma > 0.0f) ++s.noise_active;
    if (p.spec.downsample_factor > 1) ++s.downsample_active;
    if (p.spec.quant_levels >= 2) ++s.quant_active;
    blurs.insert(p.spec.blur_sigma);
    noises.insert(p.spec.noise_sigma);
  }
  s.distinct_blur_sigmas = blurs.size();
  s.distinct_noise_sigmas = noises.size();
  return s;
}

namespace {
constexpr uint16_t kCorpusVersion = 1;

void write_pixels(std::ostream& os, const ToyImage& img) {
  for (long i = 0; i < img.pixels.size(); ++i) write_f32_le(os, img.pixels(i));
}

ToyImage read_pixels(std::istream& is, int w, int h) {
  ToyImage img = make_image(w, h);
  for (long i = 0; i < img.pixels.size(); ++i) img.pixels(i) = read_f32_le(is);
  return img;
}
}  // namespace

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open corpus for writing: " + path);
  f.write("FPCR", 4);
  write_le<uint16_t>(f, kCorpusVersion);
  write_le<uint32_t>(f, static_cast<uint32_t>(corpus.pairs.size()));
  write_le<uint16_t>(f, static_cast<uint16_t>(corpus.width));
  write_le<uint16_t>(f, static_cast<uint16_t>(corpus.height));
  for (const auto& p : corpus.pairs) {
    write_f32_le(f, p.spec.blur_sigma);
    write_f32_le(f, p.spec.noise_sigma);
    write_le<uint32_t>(f, p.spec.downsample_factor);
    write_le<uint32_t>(f, p.spec.quant_levels);
    write_le<uint64_t>(f, p.spec.seed);
    write_pixels(f, p.clean);
    write_pixels(f, p.degraded);
  }
  if (!f) throw IoError("write failed for corpus: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open corpus for reading: " + path);
  expect_magic(f, "FPCR", "corpus " + path);
  const uint16_t version = read_le<uint16_t>(f);
  if (version != kCorpusVersion)
    throw ValidationError("corpus " + path + ": unsupported version " + std::to_string(version));
  const uint32_t count = read_le<uint32_t>(f);
  const int w = read_le<uint16_t>(f);
  const int h = read_le<uint16_t>(f);
  if (w <= 0 || h <= 0) throw ValidationError("corpus " + path + ": non-positive dimensions");
  Corpus corpus;
  corpus.width = w;
  corpus.height = h;
  corpus.pairs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    DegradedPair p;
    p.spec.blur_sigma = read_f32_le(f);
    p.spec.noise_sigma = read_f32_le(f);
    p.spec.downsample_factor = read_le<uint32_t>(f);
    p.spec.quant_levels = read_le<uint32_t>(f);
    p.spec.seed = read_le<uint64_t>(f);
    p.clean = read_pixels(f, w, h);
    p.degraded = read_pixels(f, w, h);
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace flowpref
