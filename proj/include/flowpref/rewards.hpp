// Reward registry producing the K-dimensional raw reward vector per rollout:
// a no-reference quality proxy calibrated against clean-corpus statistics,
// the LR-anchored consistency reward, and synthetic objectives used to
// verify the advantage pipelines.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "flowpref/consistency.hpp"
#include "flowpref/toyworld.hpp"

namespace flowpref {

struct ImageStats {
  double grad_energy = 0.0;  // mean squared gradient magnitude
  double lap_var = 0.0;      // variance of the discrete Laplacian
  double contrast = 0.0;     // intensity standard deviation
};

ImageStats image_stats(const ToyImage& img);

// Quality proxy: exp(-alpha * D) with D the diagonal-Mahalanobis distance of
// (grad_energy, lap_var, contrast) from clean-corpus reference moments.
// alpha is calibrated on the train split so clean images score above the
// target. Deliberately imperfect and hackable; the RL loop only needs a
// deterministic directional signal.
struct QualityModel {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d sigma = Eigen::Vector3d::Ones();
  double alpha = 0.1;

  double distance(const ToyImage& img) const;
  double score(const ToyImage& img) const;

  static QualityModel calibrate(const Corpus& corpus, double target_score = 0.8, double percentile = 0.95);
};

// Frozen state the built-in objectives may need. Pointers are non-owning;
// absent pieces leave dependent objectives unavailable.
struct RewardContext {
  const QualityModel* quality = nullptr;
  const Featurizer* featurizer = nullptr;
  const Mlp<float>* head = nullptr;
};

using RewardFn = std::function<double(const ToyImage& lr, const ToyImage& sr)>;

class RewardRegistry {
 public:
  struct Objective {
    std::string id;
    double weight = 1.0;
    RewardFn fn;
  };

  // Spec strings look like "quality", "consistency:0.5", "grad_energy*100",
  // "mean_intensity*10:2" -- optional "*scale" multiplies the raw reward,
  // optional ":weight" sets the fusion weight (default 1).
  static RewardRegistry make(const std::vector<std::string>& specs, const RewardContext& ctx);

  long K() const { return static_cast<long>(objectives_.size()); }
  const std::vector<Objective>& objectives() const { return objectives_; }
  Eigen::VectorXd weights() const;
  std::vector<std::string> ids() const;

  Eigen::VectorXd eval(const ToyImage& lr, const ToyImage& sr) const;

 private:
  std::vector<Objective> objectives_;
};

// Row j holds the reward vector of rollout j. Failures name the objective
// and the rollout index.
Eigen::MatrixXd eval_rewards(const RewardRegistry& registry, const ToyImage& lr,
                             const std::vector<ToyImage>& rollouts);

}  // namespace flowpref
