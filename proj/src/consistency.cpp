#include "flowpref/consistency.hpp"

#include <algorithm>
#include <cmath>

#include "flowpref/binio.hpp"

namespace flowpref {

namespace {
constexpr int kHistBins = 8;
constexpr double kGradHistMax = 1.5;
const int kBlockScales[] = {4, 8, 16};
}  // namespace

Featurizer::Featurizer(int width, int height, int embedding_dim, uint64_t seed)
    : width_(width), height_(height), embedding_dim_(embedding_dim) {
  if (width <= 0 || height <= 0) throw ValidationError("featurizer: non-positive image dimensions");
  if (embedding_dim <= 0) throw ValidationError("featurizer: non-positive embedding dimension");
  int block_dims = 0;
  for (int s : kBlockScales) block_dims += ((width + s - 1) / s) * ((height + s - 1) / s);
  descriptor_dim_ = block_dims + 2 * kHistBins;
  projection_.resize(embedding_dim_, descriptor_dim_);
  Rng rng(derive_seed(seed, 0x70726f6a));
  const double scale = 1.0 / std::sqrt(static_cast<double>(descriptor_dim_));
  rng.fill_normal(projection_, scale);
}

Eigen::VectorXf Featurizer::descriptor(const ToyImage& img) const {
  if (img.width != width_ || img.height != height_)
    throw DimensionError("featurizer: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " but featurizer expects " + std::to_string(width_) + "x" + std::to_string(height_));
  Eigen::VectorXf d(descriptor_dim_);
  long pos = 0;
  // Block means per scale, centered at mid-gray so the common DC component
  // does not dominate cosine similarity.
  for (int s : kBlockScales) {
    for (int by = 0; by < height_; by += s)
      for (int bx = 0; bx < width_; bx += s) {
        double acc = 0.0;
        int count = 0;
        for (int y = by; y < std::min(by + s, height_); ++y)
          for (int x = bx; x < std::min(bx + s, width_); ++x) {
            acc += img.at(x, y);
            ++count;
          }
        d(pos++) = static_cast<float>(acc / count - 0.5);
      }
  }
  // Gradient-magnitude histogram over forward differences.
  double ghist[kHistBins] = {0};
  int gcount = 0;
  for (int y = 0; y + 1 < height_; ++y)
    for (int x = 0; x + 1 < width_; ++x) {
      const double gx = img.at(x + 1, y) - img.at(x, y);
      const double gy = img.at(x, y + 1) - img.at(x, y);
      const double m = std::sqrt(gx * gx + gy * gy);
      int bin = static_cast<int>(m / kGradHistMax * kHistBins);
      bin = std::min(bin, kHistBins - 1);
      ghist[bin] += 1.0;
      ++gcount;
    }
  for (int b = 0; b < kHistBins; ++b) d(pos++) = static_cast<float>(ghist[b] / std::max(1, gcount) - 1.0 / kHistBins);
  // Intensity histogram.
  double ihist[kHistBins] = {0};
  for (long i = 0; i < img.pixels.size(); ++i) {
    int bin = static_cast<int>(img.pixels(i) * kHistBins);
    bin = std::min(std::max(bin, 0), kHistBins - 1);
    ihist[bin] += 1.0;
  }
  for (int b = 0; b < kHistBins; ++b)
    d(pos++) = static_cast<float>(ihist[b] / static_cast<double>(img.pixels.size()) - 1.0 / kHistBins);
  return d;
}

Eigen::VectorXf Featurizer::embed(const ToyImage& img) const { return projection_ * descriptor(img); }

uint64_t Featurizer::fingerprint() const {
  uint64_t h = fnv1a64(&width_, sizeof(width_));
  h = fnv1a64(&height_, sizeof(height_), h);
  h = fnv1a64(&embedding_dim_, sizeof(embedding_dim_), h);
  h = fnv1a64(projection_.data(), sizeof(float) * static_cast<size_t>(projection_.size()), h);
  return h;
}

double consistency_score(const ToyImage& a, const ToyImage& b, const Featurizer& featurizer,
                         const Mlp<float>& head) {
  using Mat = Tensor<float>::Mat;
  Mat za(1, featurizer.embedding_dim());
  za.row(0) = featurizer.embed(a);
  Mat zb(1, featurizer.embedding_dim());
  zb.row(0) = featurizer.embed(b);
  const Tensor<float> ea = project_batch(head, Tensor<float>::from_matrix(std::move(za)));
  const Tensor<float> eb = project_batch(head, Tensor<float>::from_matrix(std::move(zb)));
  const double c = static_cast<double>(ea.value().row(0).dot(eb.value().row(0)));
  return std::min(1.0, std::max(-1.0, c));
}

LossTrace train_projection(Mlp<float>& head, const Featurizer& featurizer, const Corpus& corpus,
                           const ConsistencyTrainOptions& opt) {
  if (!(opt.tau > 0.0)) throw DomainError("train_projection: tau must be > 0");
  const std::vector<size_t> pool = corpus.split_indices(Split::Train);
  if (pool.empty()) throw ContractError("train_projection: corpus has no train split");
  LossTrace trace;
  if (opt.steps <= 0) return trace;
  Rng rng(derive_seed(opt.seed, 0x636f6e73));
  AdamW<float>::Options aopt;
  aopt.lr = opt.lr;
  aopt.weight_decay = opt.weight_decay;
  AdamW<float> optimizer(aopt);
  auto params = head.parameters();
  const int dim = featurizer.embedding_dim();
  for (long step = 0; step < opt.steps; ++step) {
    Tensor<float>::Mat z_lr(opt.batch_size, dim);
    Tensor<float>::Mat z_hr(opt.batch_size, dim);
    for (long i = 0; i < opt.batch_size; ++i) {
      const auto& pair = corpus.pairs[pool[rng.uniform_index(pool.size())]];
      z_lr.row(i) = featurizer.embed(pair.degraded);
      z_hr.row(i) = featurizer.embed(pair.clean);
    }
    Tensor<float> e_lr = project_batch(head, Tensor<float>::from_matrix(std::move(z_lr)));
    Tensor<float> e_hr = project_batch(head, Tensor<float>::from_matrix(std::move(z_hr)));
    Tensor<float> loss = info_nce_symmetric(e_lr, e_hr, opt.tau);
    const double lv = static_cast<double>(loss.value()(0, 0));
    if (!std::isfinite(lv))
      throw TrainingError("train_projection: non-finite loss at step " + std::to_string(step));
    head.zero_grad();
    backward(loss);
    optimizer.step(params);
    trace.entries.emplace_back(step, lv);
  }
  return trace;
}

PairScores evaluate_pair_scores(const Featurizer& featurizer, const Mlp<float>& head, const Corpus& corpus,
                                Split split) {
  const std::vector<size_t> idx = corpus.split_indices(split);
  if (idx.empty()) throw ContractError("evaluate_pair_scores: empty split");
  PairScores s;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& pair = corpus.pairs[idx[k]];
    const auto& other = corpus.pairs[idx[(k + 1) % idx.size()]];
    s.matched.push_back(consistency_score(pair.degraded, pair.clean, featurizer, head));
    s.swapped.push_back(consistency_score(pair.degraded, other.clean, featurizer, head));
  }
  for (double v : s.matched) s.mean_matched += v;
  for (double v : s.swapped) s.mean_swapped += v;
  s.mean_matched /= static_cast<double>(s.matched.size());
  s.mean_swapped /= static_cast<double>(s.swapped.size());
  return s;
}

}  // namespace flowpref
