#include "flowpref/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flowpref {

AdvantageMode advantage_mode_from_string(const std::string& s) {
  if (s == "scalar" || s == "scalar_first") return AdvantageMode::ScalarFirst;
  if (s == "decoupled") return AdvantageMode::Decoupled;
  throw ConfigError("unknown advantage mode '" + s + "' (expected scalar or decoupled)");
}

std::string to_string(AdvantageMode mode) {
  return mode == AdvantageMode::ScalarFirst ? "scalar" : "decoupled";
}

void AdvantageConfig::validate(long k) const {
  if (weights.size() != k)
    throw ContractError("advantage config: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(k) + " objectives");
  for (long i = 0; i < weights.size(); ++i)
    if (!std::isfinite(weights(i))) throw ValidationError("advantage config: non-finite weight");
  if (!(epsilon > 0.0)) throw ValidationError("advantage config: epsilon must be > 0");
  if (!(z_c > 0.0)) throw ValidationError("advantage config: Z_c must be > 0");
}

void RolloutBatch::validate() const {
  if (groups.empty()) throw ContractError("rollout batch: no groups");
  const long k = K();
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].rows() < 2)
      throw ContractError("rollout batch: group " + std::to_string(i) + " has " +
                          std::to_string(groups[i].rows()) + " rollouts; advantage computation requires >= 2");
    if (groups[i].cols() != k)
      throw ContractError("rollout batch: group " + std::to_string(i) + " has " +
                          std::to_string(groups[i].cols()) + " objectives, expected " + std::to_string(k));
    if (!groups[i].allFinite())
      throw ValidationError("rollout batch: group " + std::to_string(i) + " contains non-finite rewards");
  }
}

Eigen::VectorXd scalarize(const Eigen::MatrixXd& rewards, const Eigen::VectorXd& weights) {
  if (rewards.cols() != weights.size())
    throw ContractError("scalarize: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(rewards.cols()) + " objectives");
  return rewards * weights;
}

double map_to_reward_weight(double advantage, double z_c) {
  if (!(z_c > 0.0)) throw ValidationError("map_to_reward_weight: Z_c must be > 0");
  const double clipped = std::min(1.0, std::max(-1.0, advantage / z_c));
  return 0.5 + 0.5 * clipped;
}

Eigen::VectorXd map_to_reward_weight(const Eigen::VectorXd& advantage, double z_c) {
  Eigen::VectorXd out(advantage.size());
  for (long j = 0; j < advantage.size(); ++j) out(j) = map_to_reward_weight(advantage(j), z_c);
  return out;
}

AdvantageResult scalar_first_advantage(const RolloutBatch& batch, const AdvantageConfig& config) {
  batch.validate();
  config.validate(batch.K());

  std::vector<Eigen::VectorXd> scores;
  scores.reserve(batch.groups.size());
  long total = 0;
  for (const auto& g : batch.groups) {
    scores.push_back(scalarize(g, config.weights));
    total += g.rows();
  }
  Eigen::VectorXd pooled(total);
  long pos = 0;
  for (const auto& s : scores) {
    pooled.segment(pos, s.size()) = s;
    pos += s.size();
  }
  const double sigma_global = population_std(pooled);

  AdvantageResult result;
  result.mode = AdvantageMode::ScalarFirst;
  for (const auto& s : scores) {
    GroupAdvantages ga;
    const double mu = s.mean();
    ga.advantage = (s.array() - mu) / (sigma_global + config.epsilon);
    ga.reward_weight = map_to_reward_weight(ga.advantage, config.z_c);
    result.groups.push_back(std::move(ga));
  }
  return result;
}

AdvantageResult decoupled_advantage(const RolloutBatch& batch, const AdvantageConfig& config) {
  batch.validate();
  config.validate(batch.K());
  const long k_dim = batch.K();

  // Per-group, per-objective z-scores; fused with the objective weights.
  std::vector<Eigen::MatrixXd> zs;
  std::vector<Eigen::VectorXd> fused;
  long total = 0;
  for (const auto& g : batch.groups) {
    Eigen::MatrixXd z(g.rows(), k_dim);
    for (long k = 0; k < k_dim; ++k) {
      const Eigen::VectorXd col = g.col(k);
      const double mu = col.mean();
      const double sigma = population_std(col);
      z.col(k) = (col.array() - mu) / (sigma + config.epsilon);
    }
    fused.push_back(z * config.weights);
    zs.push_back(std::move(z));
    total += g.rows();
  }

  Eigen::VectorXd pooled(total);
  long pos = 0;
  for (const auto& f : fused) {
    pooled.segment(pos, f.size()) = f;
    pos += f.size();
  }
  const double mu_batch = pooled.mean();
  const double sigma_batch = population_std(pooled);

  AdvantageResult result;
  result.mode = AdvantageMode::Decoupled;
  for (size_t i = 0; i < batch.groups.size(); ++i) {
    GroupAdvantages ga;
    ga.advantage = (fused[i].array() - mu_batch) / (sigma_batch + config.epsilon);
    ga.reward_weight = map_to_reward_weight(ga.advantage, config.z_c);
    ga.z = std::move(zs[i]);
    result.groups.push_back(std::move(ga));
  }
  return result;
}

AdvantageResult compute_advantages(const RolloutBatch& batch, const AdvantageConfig& config) {
  return config.mode == AdvantageMode::ScalarFirst ? scalar_first_advantage(batch, config)
                                                   : decoupled_advantage(batch, config);
}

}  // namespace flowpref
