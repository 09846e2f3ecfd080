// Advantage normalization for rollout-group preference learning. Two
// pipelines over the same (N groups x M_i rollouts x K objectives) reward
// batch:
//   scalar_first : scalarize with fixed weights, center per group, scale by
//                  the batch-global std.
//   decoupled    : z-score each objective within its group, fuse the
//                  z-scores with the weights, then normalize the fused
//                  signal across the batch.
// Both map the advantage to a bounded reward weight in [0,1] with the same
// clipped affine map; no further rescaling is applied. All statistics use
// the population convention (divide by M).
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "flowpref/errors.hpp"

namespace flowpref {

enum class AdvantageMode : uint8_t { ScalarFirst = 0, Decoupled };

AdvantageMode advantage_mode_from_string(const std::string& s);
std::string to_string(AdvantageMode mode);

struct AdvantageConfig {
  AdvantageMode mode = AdvantageMode::Decoupled;
  Eigen::VectorXd weights;  // length K
  double epsilon = 1e-8;
  double z_c = 1.0;

  void validate(long k) const;
};

// N groups of raw rewards; group i is an (M_i x K) matrix bound to one LR
// input. Advantage computation requires M_i >= 2 everywhere.
struct RolloutBatch {
  std::vector<Eigen::MatrixXd> groups;

  long K() const { return groups.empty() ? 0 : groups.front().cols(); }
  void validate() const;
};

struct GroupAdvantages {
  Eigen::VectorXd advantage;      // A_{i,j}
  Eigen::VectorXd reward_weight;  // r_{i,j} in [0,1]
  Eigen::MatrixXd z;              // per-objective group z-scores; decoupled mode only
};

struct AdvantageResult {
  AdvantageMode mode = AdvantageMode::ScalarFirst;
  std::vector<GroupAdvantages> groups;
};

inline double population_std(const Eigen::VectorXd& v) {
  const double mu = v.mean();
  return std::sqrt((v.array() - mu).square().mean());
}

Eigen::VectorXd scalarize(const Eigen::MatrixXd& rewards, const Eigen::VectorXd& weights);

double map_to_reward_weight(double advantage, double z_c);
Eigen::VectorXd map_to_reward_weight(const Eigen::VectorXd& advantage, double z_c);

AdvantageResult scalar_first_advantage(const RolloutBatch& batch, const AdvantageConfig& config);
AdvantageResult decoupled_advantage(const RolloutBatch& batch, const AdvantageConfig& config);
AdvantageResult compute_advantages(const RolloutBatch& batch, const AdvantageConfig& config);

}  // namespace flowpref
