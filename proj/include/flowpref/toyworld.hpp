// Synthetic restoration world: procedural grayscale patterns, a seeded
// degradation pipeline (blur -> resample -> noise -> quantize), and corpora
// of (clean, degraded) pairs persisted in the .fpcr binary format.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "flowpref/errors.hpp"

namespace flowpref {

struct ToyImage {
  int width = 0;
  int height = 0;
  Eigen::VectorXf pixels;  // row-major, intensities in [0,1]

  float at(int x, int y) const { return pixels(y * width + x); }
  float& at(int x, int y) { return pixels(y * width + x); }
  long size() const { return static_cast<long>(width) * height; }
};

ToyImage make_image(int width, int height);
void validate_image(const ToyImage& img);
double image_variance(const ToyImage& img);
double image_mse(const ToyImage& a, const ToyImage& b);

enum class PatternFamily : uint8_t { Grating = 0, Checkerboard, Blob, Edge, Mixture };

// Deterministic pattern builders with explicit parameters; make_clean_image
// draws the parameters from the seed.
ToyImage pattern_grating(int w, int h, double frequency, double phase);
ToyImage pattern_checkerboard(int w, int h, int cell, float lo, float hi);
ToyImage pattern_blob(int w, int h, uint64_t seed);
ToyImage pattern_edge(int w, int h, uint64_t seed);

ToyImage make_clean_image(PatternFamily family, uint64_t seed, int width = 32, int height = 32);

struct DegradationSpec {
  float blur_sigma = 0.0f;       // Gaussian blur std in pixels, >= 0
  float noise_sigma = 0.0f;      // additive Gaussian noise std, >= 0
  uint32_t downsample_factor = 1;  // box average then nearest re-upsample, >= 1
  uint32_t quant_levels = 0;     // uniform quantization levels, >= 2; 0 = off
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const DegradationSpec&) const = default;
};

// Individual pipeline stages, each a pure function.
ToyImage gaussian_blur(const ToyImage& img, double sigma);
ToyImage box_resample(const ToyImage& img, uint32_t factor);
ToyImage add_noise(const ToyImage& img, double sigma, uint64_t seed);
ToyImage quantize(const ToyImage& img, uint32_t levels);

// Full pipeline in the fixed order blur, resample, noise, quantize; output
// clamped to [0,1].
ToyImage degrade(const ToyImage& clean, const DegradationSpec& spec);

struct DegradedPair {
  ToyImage clean;
  ToyImage degraded;
  DegradationSpec spec;
};

enum class Split : uint8_t { Train = 0, Val, Test };

// Deterministic 80/10/10 split by pair index; the corpus file stores no
// split tags, so membership is a pure function of the index.
Split split_of_index(size_t index);

struct Corpus {
  int width = 32;
  int height = 32;
  std::vector<DegradedPair> pairs;

  std::vector<size_t> split_indices(Split split) const;
};

struct SpecRange {
  float blur_lo = 0.0f, blur_hi = 0.0f;
  float noise_lo = 0.0f, noise_hi = 0.0f;
  std::vector<uint32_t> factors{1};
  std::vector<uint32_t> quant_choices{};
  double quant_prob = 0.0;
};

struct SpecDistribution {
  std::vector<std::pair<double, SpecRange>> components;  // weight, range

  void validate() const;
  static SpecDistribution easy();
  static SpecDistribution hard();
  static SpecDistribution mixed();
  static SpecDistribution fixed(const DegradationSpec& spec);
  static SpecDistribution profile(const std::string& name);
};

struct DiversitySummary {
  size_t n_pairs = 0;
  size_t blur_active = 0;
  size_t noise_active = 0;
  size_t downsample_active = 0;
  size_t quant_active = 0;
  size_t distinct_blur_sigmas = 0;
  size_t distinct_noise_sigmas = 0;
};

struct CorpusBuild {
  Corpus corpus;
  DiversitySummary summary;
};

CorpusBuild build_corpus(size_t n, const SpecDistribution& dist, uint64_t seed, int width = 32, int height = 32,
                         int workers = 1);

DiversitySummary summarize_corpus(const Corpus& corpus);

// .fpcr file: magic "FPCR", version u16, pair count u32, dims u16 x u16,
// then per pair the spec fields (f32 blur, f32 noise, u32 factor, u32 quant
// with 0 = absent, u64 seed), clean pixels f32 LE, degraded pixels f32 LE.
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace flowpref
