// Negative-aware fine-tuning of the velocity model: rollout groups sampled
// from a frozen old policy, bounded reward weights from the advantage
// pipeline, and the reward-weighted contrastive velocity objective
//   || v+ - v ||^2 + (1 - r) || v- - v ||^2
// with v+ = (1-b) v_old + b v_theta and v- = (1+b) v_old - b v_theta,
// plus an output-space proximity regularizer standing in for the KL term.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowpref/advantage.hpp"
#include "flowpref/flow.hpp"
#include "flowpref/rewards.hpp"

namespace flowpref {

template <typename T>
struct PolicyPair {
  VelocityModel<T> current;  // v_theta, trainable
  VelocityModel<T> old;      // frozen within an outer iteration
  EmaShadow<T> ema;
  double beta = 0.1;
  double kl_weight = 1e-4;
};

template <typename T>
PolicyPair<T> make_policy_pair(const VelocityModel<T>& base, double beta, double kl_weight, double ema_decay) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("policy pair: beta must be in (0, 1]");
  if (kl_weight < 0.0) throw ValidationError("policy pair: kl_weight must be >= 0");
  PolicyPair<T> pair;
  pair.current = VelocityModel<T>{clone_mlp(base.net, true), base.x_dim, base.c_dim};
  pair.old = VelocityModel<T>{clone_mlp(base.net, false), base.x_dim, base.c_dim};
  pair.ema = EmaShadow<T>::from(pair.current.net, ema_decay);
  pair.beta = beta;
  pair.kl_weight = kl_weight;
  return pair;
}

// Implicit positive/negative policies from the frozen and current outputs.
// The pair satisfies v+ + v- == 2 v_old identically.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> implicit_policies(const Tensor<T>& v_old_out, const Tensor<T>& v_theta_out,
                                                  double beta) {
  if (!(beta > 0.0)) throw ValidationError("implicit_policies: beta must be > 0");
  detail::check_same_shape(v_old_out, v_theta_out, "implicit_policies");
  Tensor<T> v_plus = add(scale(v_old_out, 1.0 - beta), scale(v_theta_out, beta));
  Tensor<T> v_minus = sub(scale(v_old_out, 1.0 + beta), scale(v_theta_out, beta));
  return {std::move(v_plus), std::move(v_minus)};
}

// One training row per rollout: x0 is the rollout's own trajectory endpoint,
// x1 and t are drawn fresh for the step, c is the group's conditioning.
template <typename T>
struct NftBatch {
  using Mat = typename Tensor<T>::Mat;
  Mat x0;
  Mat x1;
  Eigen::Matrix<T, Eigen::Dynamic, 1> t;
  Mat c;

  long size() const { return x0.rows(); }
};

template <typename T>
Tensor<T> nft_loss(const PolicyPair<T>& pair, const NftBatch<T>& batch, const Eigen::VectorXd& reward_weights) {
  using Mat = typename Tensor<T>::Mat;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const long b = batch.size();
  if (b == 0) throw ContractError("nft_loss: empty batch");
  if (reward_weights.size() != b)
    throw ContractError("nft_loss: " + std::to_string(reward_weights.size()) + " reward weights for " +
                        std::to_string(b) + " rollouts");
  for (long j = 0; j < b; ++j)
    if (!(reward_weights(j) >= 0.0 && reward_weights(j) <= 1.0))
      throw ContractError("nft_loss: reward weight outside [0,1] at rollout " + std::to_string(j));

  Mat x_t = interpolate<T>(batch.x0, batch.x1, batch.t);
  Tensor<T> v = Tensor<T>::from_matrix(velocity_target<T>(batch.x0, batch.x1));
  Tensor<T> v_theta = velocity_forward(pair.current.net, x_t, batch.c, batch.t);
  Tensor<T> v_old = velocity_forward(pair.old.net, x_t, batch.c, batch.t);
  auto [v_plus, v_minus] = implicit_policies(v_old, v_theta, pair.beta);

  Vec ones = Vec::Ones(b);
  Vec neg_w(b);
  for (long j = 0; j < b; ++j) neg_w(j) = static_cast<T>(1.0 - reward_weights(j));
  Tensor<T> pos_term = weighted_sum(rowwise_sum_squares(sub(v_plus, v)), ones);
  Tensor<T> neg_term = weighted_sum(rowwise_sum_squares(sub(v_minus, v)), neg_w);
  Tensor<T> loss = scale(add(pos_term, neg_term), 1.0 / static_cast<double>(b));
  if (pair.kl_weight > 0.0) {
    Tensor<T> prox = scale(sum_squares(sub(v_theta, v_old)), pair.kl_weight / static_cast<double>(b));
    loss = add(loss, prox);
  }
  return loss;
}

struct Rollout {
  uint64_t seed = 0;
  ToyImage image;  // trajectory endpoint, clamped to [0,1]
};

struct RolloutGroup {
  size_t corpus_index = 0;
  ToyImage lr;  // degraded observation; doubles as the conditioning vector
  std::vector<Rollout> rollouts;
  Eigen::MatrixXd rewards;         // (M x K), filled by score_groups
  Eigen::VectorXd reward_weights;  // filled by the advantage pipeline
};

// Rollout (i, j) integrates from noise drawn on the stream derived from
// (seed, i, j); rollouts depend only on the frozen policy.
template <typename T>
std::vector<RolloutGroup> sample_rollout_groups(const VelocityModel<T>& v_old, const Corpus& corpus,
                                                const std::vector<size_t>& corpus_indices, long m, long steps,
                                                uint64_t seed, int workers = 1) {
  if (m < 2) throw ContractError("sample_rollout_groups: M must be >= 2");
  std::vector<RolloutGroup> groups(corpus_indices.size());
  auto build = [&](size_t i) {
    RolloutGroup& g = groups[i];
    g.corpus_index = corpus_indices[i];
    g.lr = corpus.pairs[corpus_indices[i]].degraded;
    g.rollouts.resize(static_cast<size_t>(m));
    for (long j = 0; j < m; ++j) {
      const uint64_t rollout_seed = derive_seed(seed, i, static_cast<uint64_t>(j));
      try {
        g.rollouts[static_cast<size_t>(j)] = Rollout{rollout_seed, sample_image(v_old, g.lr, steps, rollout_seed)};
      } catch (const SamplingError& e) {
        throw SamplingError("rollout (" + std::to_string(i) + "," + std::to_string(j) + "): " + e.what());
      }
    }
  };
  if (workers <= 1) {
    for (size_t i = 0; i < groups.size(); ++i) build(i);
  } else {
    std::vector<std::thread> pool;
    const size_t nw = std::min<size_t>(static_cast<size_t>(workers), groups.size());
    std::exception_ptr error;
    std::mutex error_mutex;
    for (size_t t = 0; t < nw; ++t)
      pool.emplace_back([&, t]() {
        try {
          for (size_t i = t; i < groups.size(); i += nw) build(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }
  return groups;
}

inline void score_groups(std::vector<RolloutGroup>& groups, const RewardRegistry& registry) {
  for (auto& g : groups) {
    std::vector<ToyImage> images;
    images.reserve(g.rollouts.size());
    for (const auto& r : g.rollouts) images.push_back(r.image);
    g.rewards = eval_rewards(registry, g.lr, images);
  }
}

inline RolloutBatch to_rollout_batch(const std::vector<RolloutGroup>& groups) {
  RolloutBatch batch;
  for (const auto& g : groups) batch.groups.push_back(g.rewards);
  return batch;
}

struct FinetuneOptions {
  long outer_iters = 20;
  long inner_steps = 10;
  long rollouts_per_input = 12;  // M
  long sample_steps = 6;
  long groups_per_iter = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int workers = 1;
};

struct FinetuneIterStats {
  long iter = 0;
  std::map<std::string, double> mean_rewards;  // by objective id
  double mean_reward_weight = 0.0;
  double mean_loss = 0.0;
};

struct FinetuneTrace {
  std::vector<FinetuneIterStats> iters;
};

// Outer loop: refresh the frozen policy from the EMA shadow, sample and
// score rollout groups, resolve reward weights through the configured
// advantage mode, then run inner optimization steps on the contrastive
// objective with an EMA update after every step.
template <typename T>
FinetuneTrace finetune(PolicyPair<T>& pair, const Corpus& corpus, const RewardRegistry& registry,
                       const AdvantageConfig& adv_config, const FinetuneOptions& opt) {
  using Mat = typename Tensor<T>::Mat;
  const std::vector<size_t> pool = corpus.split_indices(Split::Train);
  if (pool.empty()) throw ContractError("finetune: corpus has no train split");
  FinetuneTrace trace;
  if (opt.outer_iters <= 0) return trace;
  if (opt.groups_per_iter < 1) throw ValidationError("finetune: groups_per_iter must be >= 1");

  typename AdamW<T>::Options aopt;
  aopt.lr = opt.lr;
  aopt.weight_decay = opt.weight_decay;
  AdamW<T> optimizer(aopt);
  auto params = pair.current.net.parameters();
  const long d = pair.current.x_dim;

  for (long it = 0; it < opt.outer_iters; ++it) {
    pair.old = VelocityModel<T>{pair.ema.snapshot(pair.current.net, false), pair.current.x_dim, pair.current.c_dim};

    Rng pick_rng(derive_seed(opt.seed, static_cast<uint64_t>(it), 0x70));
    std::vector<size_t> indices(static_cast<size_t>(opt.groups_per_iter));
    for (auto& idx : indices) idx = pool[pick_rng.uniform_index(pool.size())];

    std::vector<RolloutGroup> groups =
        sample_rollout_groups(pair.old, corpus, indices, opt.rollouts_per_input, opt.sample_steps,
                              derive_seed(opt.seed, static_cast<uint64_t>(it), 0x72), opt.workers);
    score_groups(groups, registry);
    const AdvantageResult adv = compute_advantages(to_rollout_batch(groups), adv_config);
    for (size_t i = 0; i < groups.size(); ++i) groups[i].reward_weights = adv.groups[i].reward_weight;

    const long rows = opt.groups_per_iter * opt.rollouts_per_input;
    Mat x0(rows, d), c(rows, d);
    Eigen::VectorXd weights(rows);
    long row = 0;
    for (const auto& g : groups)
      for (size_t j = 0; j < g.rollouts.size(); ++j) {
        x0.row(row) = g.rollouts[j].image.pixels.cast<T>();
        c.row(row) = g.lr.pixels.cast<T>();
        weights(row) = g.reward_weights(static_cast<long>(j));
        ++row;
      }

    FinetuneIterStats stats;
    stats.iter = it;
    {
      const auto ids = registry.ids();
      for (long k = 0; k < registry.K(); ++k) {
        double acc = 0.0;
        for (const auto& g : groups) acc += g.rewards.col(k).mean();
        stats.mean_rewards[ids[static_cast<size_t>(k)]] = acc / static_cast<double>(groups.size());
      }
      stats.mean_reward_weight = weights.mean();
    }

    Rng step_rng(derive_seed(opt.seed, static_cast<uint64_t>(it), 0x74));
    double loss_acc = 0.0;
    for (long k = 0; k < opt.inner_steps; ++k) {
      NftBatch<T> batch;
      batch.x0 = x0;
      batch.c = c;
      batch.x1.resize(rows, d);
      batch.t.resize(rows);
      for (long i = 0; i < rows; ++i) {
        batch.t(i) = static_cast<T>(step_rng.uniform());
        for (long j = 0; j < d; ++j) batch.x1(i, j) = static_cast<T>(step_rng.normal());
      }
      Tensor<T> loss = nft_loss(pair, batch, weights);
      const double lv = static_cast<double>(loss.value()(0, 0));
      if (!std::isfinite(lv))
        throw TrainingError("finetune: non-finite loss at outer iteration " + std::to_string(it));
      pair.current.net.zero_grad();
      backward(loss);
      optimizer.step(params);
      pair.ema.update(pair.current.net);
      loss_acc += lv;
    }
    stats.mean_loss = opt.inner_steps > 0 ? loss_acc / static_cast<double>(opt.inner_steps) : 0.0;
    trace.iters.push_back(std::move(stats));
  }
  return trace;
}

}  // namespace flowpref
