// Degradation-robust consistency evaluation: a frozen deterministic
// featurizer (handcrafted multi-scale statistics behind a fixed random
// projection) plus a trainable projection head aligned with symmetric
// InfoNCE. The resulting score C(a, b) is the cosine similarity of the
// projected embeddings, used both as an evaluation metric and as a reward.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "flowpref/adamw.hpp"
#include "flowpref/mlp.hpp"
#include "flowpref/rng.hpp"
#include "flowpref/tensor.hpp"
#include "flowpref/toyworld.hpp"
#include "flowpref/trace.hpp"

namespace flowpref {

inline constexpr uint64_t kDefaultFeaturizerSeed = 0xfea7;
inline constexpr int kDefaultEmbeddingDim = 64;

// Frozen after construction. The descriptor concatenates block means at
// three scales with gradient-magnitude and intensity histograms; a seeded
// Gaussian matrix projects it to the embedding dimension.
class Featurizer {
 public:
  Featurizer(int width = 32, int height = 32, int embedding_dim = kDefaultEmbeddingDim,
             uint64_t seed = kDefaultFeaturizerSeed);

  Eigen::VectorXf descriptor(const ToyImage& img) const;
  Eigen::VectorXf embed(const ToyImage& img) const;

  int embedding_dim() const { return embedding_dim_; }
  int descriptor_dim() const { return descriptor_dim_; }
  int width() const { return width_; }
  int height() const { return height_; }
  uint64_t fingerprint() const;

 private:
  int width_;
  int height_;
  int embedding_dim_;
  int descriptor_dim_;
  Eigen::MatrixXf projection_;  // embedding_dim x descriptor_dim
};

// Two-layer head over the frozen embedding; outputs are L2-normalized by
// project_batch, so cosine similarity reduces to a dot product.
inline Mlp<float> make_projection_head(int embedding_dim, uint64_t seed) {
  return make_mlp<float>({embedding_dim, embedding_dim, embedding_dim}, seed);
}

template <typename T>
Tensor<T> project_batch(const Mlp<T>& head, const Tensor<T>& embeddings) {
  return row_l2_normalize(forward(head, embeddings));
}

// Symmetric InfoNCE over B matched pairs of projected embeddings:
// 0.5 * (L_lr->hr + L_hr->lr), in-batch negatives only, s = cosine
// similarity at temperature tau.
template <typename T>
Tensor<T> info_nce_symmetric(const Tensor<T>& e_lr, const Tensor<T>& e_hr, double tau) {
  if (!(tau > 0.0)) throw DomainError("info_nce_symmetric: tau must be > 0");
  if (e_lr.rows() != e_hr.rows() || e_lr.cols() != e_hr.cols())
    throw DimensionError("info_nce_symmetric: embedding batches differ, " + std::to_string(e_lr.rows()) + "x" +
                         std::to_string(e_lr.cols()) + " vs " + std::to_string(e_hr.rows()) + "x" +
                         std::to_string(e_hr.cols()));
  if (e_lr.rows() < 1) throw ContractError("info_nce_symmetric: batch must hold at least one pair");
  const double b = static_cast<double>(e_lr.rows());
  Tensor<T> a = row_l2_normalize(e_lr);
  Tensor<T> h = row_l2_normalize(e_hr);
  Tensor<T> sim = scale(matmul_nt(a, h), 1.0 / tau);  // (B x B), row i: lr_i vs hr_j
  Tensor<T> sim_t = scale(matmul_nt(h, a), 1.0 / tau);
  Tensor<T> l_lr_hr = scale(sub(sum(logsumexp_rows(sim)), sum(gather_diag(sim))), 1.0 / b);
  Tensor<T> l_hr_lr = scale(sub(sum(logsumexp_rows(sim_t)), sum(gather_diag(sim_t))), 1.0 / b);
  return scale(add(l_lr_hr, l_hr_lr), 0.5);
}

double consistency_score(const ToyImage& a, const ToyImage& b, const Featurizer& featurizer,
                         const Mlp<float>& head);

struct ConsistencyTrainOptions {
  long steps = 4000;
  double lr = 1e-4;
  double weight_decay = 0.0;
  double tau = 0.7;
  long batch_size = 8;
  uint64_t seed = 0;
};

// Optimizes only the head; the featurizer is frozen by construction.
LossTrace train_projection(Mlp<float>& head, const Featurizer& featurizer, const Corpus& corpus,
                           const ConsistencyTrainOptions& opt);

struct PairScores {
  std::vector<double> matched;
  std::vector<double> swapped;
  double mean_matched = 0.0;
  double mean_swapped = 0.0;
};

// Matched C(degraded_i, clean_i) vs content-swapped C(degraded_i, clean_{i+1})
// over a corpus split.
PairScores evaluate_pair_scores(const Featurizer& featurizer, const Mlp<float>& head, const Corpus& corpus,
                                Split split);

}  // namespace flowpref
