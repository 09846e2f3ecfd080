// Conditional rectified flow: linear interpolation paths, velocity targets,
// the flow-matching objective, supervised training, and a deterministic
// explicit-Euler sampler conditioned on the degraded observation.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flowpref/adamw.hpp"
#include "flowpref/mlp.hpp"
#include "flowpref/rng.hpp"
#include "flowpref/tensor.hpp"
#include "flowpref/toyworld.hpp"
#include "flowpref/trace.hpp"

namespace flowpref {

inline constexpr int kTimeEmbedDim = 8;

// Sinusoidal features of a scalar time in [0,1]: sin/cos at frequencies
// 1, 2, 4, 8 cycles.
template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> time_embedding(double t) {
  Eigen::Matrix<T, 1, Eigen::Dynamic> e(1, kTimeEmbedDim);
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  double f = 1.0;
  for (int k = 0; k < kTimeEmbedDim / 2; ++k) {
    e(0, 2 * k) = static_cast<T>(std::sin(kTwoPi * f * t));
    e(0, 2 * k + 1) = static_cast<T>(std::cos(kTwoPi * f * t));
    f *= 2.0;
  }
  return e;
}

// Velocity network v(x_t, t, c): an Mlp over concat(x_t, c, time features).
template <typename T>
struct VelocityModel {
  Mlp<T> net;
  long x_dim = 0;
  long c_dim = 0;
};

template <typename T>
VelocityModel<T> make_velocity_model(long x_dim, long c_dim, const std::vector<long>& hidden, uint64_t seed) {
  std::vector<long> dims;
  dims.push_back(x_dim + c_dim + kTimeEmbedDim);
  for (long h : hidden) dims.push_back(h);
  dims.push_back(x_dim);
  VelocityModel<T> m{make_mlp<T>(dims, seed), x_dim, c_dim};
  return m;
}

// Recover the conditioning split from a bare network: in = x + c + embed,
// out = x.
template <typename T>
VelocityModel<T> velocity_model_from_mlp(Mlp<T> net) {
  const long x_dim = net.output_dim();
  const long c_dim = net.input_dim() - x_dim - kTimeEmbedDim;
  if (c_dim < 0)
    throw ValidationError("velocity model: network input extent " + std::to_string(net.input_dim()) +
                          " is too small for output extent " + std::to_string(net.output_dim()));
  return VelocityModel<T>{std::move(net), x_dim, c_dim};
}

template <typename T>
struct FlowBatch {
  using Mat = typename Tensor<T>::Mat;
  Mat x0;                            // clean targets, (B x D)
  Mat x1;                            // Gaussian samples, (B x D)
  Eigen::Matrix<T, Eigen::Dynamic, 1> t;  // per-sample times in [0,1]
  Mat c;                             // conditioning vectors, (B x C)

  long size() const { return x0.rows(); }
};

template <typename T>
typename Tensor<T>::Mat interpolate(const typename Tensor<T>::Mat& x0, const typename Tensor<T>::Mat& x1,
                                    const Eigen::Matrix<T, Eigen::Dynamic, 1>& t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
    throw DimensionError("interpolate: endpoint shapes differ, " + std::to_string(x0.rows()) + "x" +
                         std::to_string(x0.cols()) + " vs " + std::to_string(x1.rows()) + "x" +
                         std::to_string(x1.cols()));
  if (t.size() != x0.rows()) throw DimensionError("interpolate: one time per sample required");
  for (long i = 0; i < t.size(); ++i)
    if (!(t(i) >= T(0) && t(i) <= T(1)))
      throw DomainError("interpolate: t outside [0,1]");
  typename Tensor<T>::Mat out(x0.rows(), x0.cols());
  for (long i = 0; i < x0.rows(); ++i) out.row(i) = (T(1) - t(i)) * x0.row(i) + t(i) * x1.row(i);
  return out;
}

template <typename T>
typename Tensor<T>::Mat interpolate(const typename Tensor<T>::Mat& x0, const typename Tensor<T>::Mat& x1, T t) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> tv = Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(x0.rows(), t);
  return interpolate<T>(x0, x1, tv);
}

template <typename T>
typename Tensor<T>::Mat velocity_target(const typename Tensor<T>::Mat& x0, const typename Tensor<T>::Mat& x1) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
    throw DimensionError("velocity_target: endpoint shapes differ, " + std::to_string(x0.rows()) + "x" +
                         std::to_string(x0.cols()) + " vs " + std::to_string(x1.rows()) + "x" +
                         std::to_string(x1.cols()));
  return x1 - x0;
}

// Differentiable network evaluation on a batch of (x_t, t, c) rows.
template <typename T>
Tensor<T> velocity_forward(const Mlp<T>& net, const typename Tensor<T>::Mat& x_t,
                           const typename Tensor<T>::Mat& c, const Eigen::Matrix<T, Eigen::Dynamic, 1>& t) {
  using Mat = typename Tensor<T>::Mat;
  Mat emb(x_t.rows(), kTimeEmbedDim);
  for (long i = 0; i < x_t.rows(); ++i) emb.row(i) = time_embedding<T>(static_cast<double>(t(i)));
  Mat input(x_t.rows(), x_t.cols() + c.cols() + kTimeEmbedDim);
  input.leftCols(x_t.cols()) = x_t;
  input.middleCols(x_t.cols(), c.cols()) = c;
  input.rightCols(kTimeEmbedDim) = emb;
  return forward(net, Tensor<T>::from_matrix(std::move(input)));
}

// Mean over the batch of ||v - v_theta(x_t, t, c)||^2.
template <typename T>
Tensor<T> fm_loss(const VelocityModel<T>& model, const FlowBatch<T>& batch) {
  if (batch.size() == 0) throw ContractError("fm_loss: empty batch");
  using Mat = typename Tensor<T>::Mat;
  Mat x_t = interpolate<T>(batch.x0, batch.x1, batch.t);
  Mat v = velocity_target<T>(batch.x0, batch.x1);
  Tensor<T> pred = velocity_forward(model.net, x_t, batch.c, batch.t);
  Tensor<T> diff = sub(pred, Tensor<T>::from_matrix(std::move(v)));
  return scale(sum_squares(diff), 1.0 / static_cast<double>(batch.size()));
}

template <typename T>
struct FlowTrainOptions {
  long steps = 3000;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  long batch_size = 32;
  uint64_t seed = 0;
};

template <typename T>
FlowBatch<T> draw_flow_batch(const Corpus& corpus, const std::vector<size_t>& pool, long batch_size, Rng& rng) {
  using Mat = typename Tensor<T>::Mat;
  const long d = static_cast<long>(corpus.width) * corpus.height;
  FlowBatch<T> b;
  b.x0.resize(batch_size, d);
  b.x1.resize(batch_size, d);
  b.c.resize(batch_size, d);
  b.t.resize(batch_size);
  for (long i = 0; i < batch_size; ++i) {
    const auto& pair = corpus.pairs[pool[rng.uniform_index(pool.size())]];
    b.x0.row(i) = pair.clean.pixels.cast<T>();
    b.c.row(i) = pair.degraded.pixels.cast<T>();
    for (long j = 0; j < d; ++j) b.x1(i, j) = static_cast<T>(rng.normal());
    b.t(i) = static_cast<T>(rng.uniform());
  }
  return b;
}

template <typename T>
LossTrace train_flow(VelocityModel<T>& model, const Corpus& corpus, const FlowTrainOptions& opt) {
  const std::vector<size_t> pool = corpus.split_indices(Split::Train);
  if (pool.empty()) throw ContractError("train_flow: corpus has no train split");
  LossTrace trace;
  if (opt.steps <= 0) return trace;
  Rng rng(derive_seed(opt.seed, 0x666c6f77));
  typename AdamW<T>::Options aopt;
  aopt.lr = opt.lr;
  aopt.weight_decay = opt.weight_decay;
  AdamW<T> optimizer(aopt);
  auto params = model.net.parameters();
  for (long step = 0; step < opt.steps; ++step) {
    FlowBatch<T> batch = draw_flow_batch<T>(corpus, pool, opt.batch_size, rng);
    Tensor<T> loss = fm_loss(model, batch);
    const double lv = static_cast<double>(loss.value()(0, 0));
    if (!std::isfinite(lv)) throw TrainingError("train_flow: non-finite loss at step " + std::to_string(step));
    model.net.zero_grad();
    backward(loss);
    optimizer.step(params);
    trace.entries.emplace_back(step, lv);
  }
  return trace;
}

// Integrates dx/dt = v(x, t, c) from t=1 to t=0 with uniform explicit Euler
// steps, starting from a seeded Gaussian draw. Deterministic per
// (model, c, steps, seed); the state is clamped to [0,1] only after the
// final step.
template <typename T>
Eigen::VectorXf sample(const VelocityModel<T>& model, const Eigen::VectorXf& c, long steps, uint64_t seed) {
  if (steps < 1) throw ContractError("sample: steps must be >= 1");
  if (c.size() != model.c_dim)
    throw DimensionError("sample: conditioning extent " + std::to_string(c.size()) + " vs model extent " +
                         std::to_string(model.c_dim));
  using Mat = typename Tensor<T>::Mat;
  Rng rng(derive_seed(seed, 0x73616d70));
  Mat x(1, model.x_dim);
  for (long j = 0; j < model.x_dim; ++j) x(0, j) = static_cast<T>(rng.normal());
  Mat cm(1, model.c_dim);
  cm.row(0) = c.cast<T>();
  const T dt = T(1) / static_cast<T>(steps);
  Eigen::Matrix<T, Eigen::Dynamic, 1> tv(1);
  for (long k = 0; k < steps; ++k) {
    tv(0) = T(1) - static_cast<T>(k) * dt;
    Tensor<T> v = velocity_forward(model.net, x, cm, tv);
    x -= dt * v.value();
    if (!x.allFinite()) throw SamplingError("sample: non-finite state after step " + std::to_string(k));
  }
  Eigen::VectorXf out(model.x_dim);
  for (long j = 0; j < model.x_dim; ++j)
    out(j) = std::min(1.0f, std::max(0.0f, static_cast<float>(x(0, j))));
  return out;
}

template <typename T>
ToyImage sample_image(const VelocityModel<T>& model, const ToyImage& degraded, long steps, uint64_t seed) {
  ToyImage img = make_image(degraded.width, degraded.height);
  img.pixels = sample(model, degraded.pixels, steps, seed);
  return img;
}

}  // namespace flowpref
