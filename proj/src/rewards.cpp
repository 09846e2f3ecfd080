#include "flowpref/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace flowpref {

ImageStats image_stats(const ToyImage& img) {
  ImageStats s;
  const int w = img.width, h = img.height;
  double ge = 0.0;
  int gcount = 0;
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const double gx = img.at(x + 1, y) - img.at(x, y);
      const double gy = img.at(x, y + 1) - img.at(x, y);
      ge += gx * gx + gy * gy;
      ++gcount;
    }
  s.grad_energy = ge / std::max(1, gcount);

  double lsum = 0.0, lsum2 = 0.0;
  int lcount = 0;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double lap = img.at(x + 1, y) + img.at(x - 1, y) + img.at(x, y + 1) + img.at(x, y - 1) -
                         4.0 * img.at(x, y);
      lsum += lap;
      lsum2 += lap * lap;
      ++lcount;
    }
  if (lcount > 0) {
    const double m = lsum / lcount;
    s.lap_var = lsum2 / lcount - m * m;
  }
  s.contrast = std::sqrt(image_variance(img));
  return s;
}

double QualityModel::distance(const ToyImage& img) const {
  const ImageStats st = image_stats(img);
  const Eigen::Vector3d f(st.grad_energy, st.lap_var, st.contrast);
  double d2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double z = (f(i) - mu(i)) / sigma(i);
    d2 += z * z;
  }
  return std::sqrt(d2);
}

double QualityModel::score(const ToyImage& img) const { return std::exp(-alpha * distance(img)); }

QualityModel QualityModel::calibrate(const Corpus& corpus, double target_score, double percentile) {
  const std::vector<size_t> pool = corpus.split_indices(Split::Train);
  if (pool.empty()) throw ContractError("quality calibration: corpus has no train split");
  Eigen::MatrixXd feats(static_cast<long>(pool.size()), 3);
  for (size_t k = 0; k < pool.size(); ++k) {
    const ImageStats st = image_stats(corpus.pairs[pool[k]].clean);
    feats.row(static_cast<long>(k)) << st.grad_energy, st.lap_var, st.contrast;
  }
  QualityModel m;
  for (int i = 0; i < 3; ++i) {
    m.mu(i) = feats.col(i).mean();
    const double var = (feats.col(i).array() - m.mu(i)).square().mean();
    m.sigma(i) = std::max(std::sqrt(var), 1e-6);
  }
  std::vector<double> dists(pool.size());
  for (size_t k = 0; k < pool.size(); ++k) dists[k] = m.distance(corpus.pairs[pool[k]].clean);
  std::sort(dists.begin(), dists.end());
  const size_t qi = std::min(dists.size() - 1, static_cast<size_t>(percentile * (dists.size() - 1) + 0.5));
  const double dq = std::max(dists[qi], 1e-9);
  m.alpha = -std::log(target_score) / dq;
  return m;
}

namespace {

struct ParsedSpec {
  std::string id;
  std::string scale_text;  // as written, kept for the reported objective id
  double scale = 1.0;
  double weight = 1.0;
};

ParsedSpec parse_objective_spec(const std::string& spec) {
  ParsedSpec p;
  std::string body = spec;
  const size_t colon = body.find(':');
  if (colon != std::string::npos) {
    p.weight = std::stod(body.substr(colon + 1));
    body = body.substr(0, colon);
  }
  const size_t star = body.find('*');
  if (star != std::string::npos) {
    p.scale_text = body.substr(star + 1);
    p.scale = std::stod(p.scale_text);
    body = body.substr(0, star);
  }
  p.id = body;
  if (p.id.empty()) throw ConfigError("reward registry: empty objective id in spec '" + spec + "'");
  if (!std::isfinite(p.scale) || !std::isfinite(p.weight))
    throw ConfigError("reward registry: non-finite scale or weight in spec '" + spec + "'");
  return p;
}

RewardFn base_objective(const std::string& id, const RewardContext& ctx) {
  if (id == "quality") {
    if (!ctx.quality) throw ConfigError("reward registry: objective 'quality' needs a calibrated quality model");
    const QualityModel* q = ctx.quality;
    return [q](const ToyImage&, const ToyImage& sr) { return q->score(sr); };
  }
  if (id == "consistency") {
    if (!ctx.featurizer || !ctx.head)
      throw ConfigError("reward registry: objective 'consistency' needs a featurizer and a trained head");
    const Featurizer* f = ctx.featurizer;
    const Mlp<float>* h = ctx.head;
    // Cosine similarity rescaled from [-1,1] to [0,1].
    return [f, h](const ToyImage& lr, const ToyImage& sr) {
      return 0.5 * (consistency_score(lr, sr, *f, *h) + 1.0);
    };
  }
  if (id == "mean_intensity")
    return [](const ToyImage&, const ToyImage& sr) { return static_cast<double>(sr.pixels.cast<double>().mean()); };
  if (id == "pixel_std") return [](const ToyImage&, const ToyImage& sr) { return std::sqrt(image_variance(sr)); };
  if (id == "neg_mean_intensity")
    return [](const ToyImage&, const ToyImage& sr) { return -static_cast<double>(sr.pixels.cast<double>().mean()); };
  if (id == "grad_energy")
    return [](const ToyImage&, const ToyImage& sr) { return image_stats(sr).grad_energy; };
  if (id == "lap_var") return [](const ToyImage&, const ToyImage& sr) { return image_stats(sr).lap_var; };
  if (id == "constant_half") return [](const ToyImage&, const ToyImage&) { return 0.5; };
  throw ConfigError("reward registry: unknown objective id '" + id + "'");
}

}  // namespace

RewardRegistry RewardRegistry::make(const std::vector<std::string>& specs, const RewardContext& ctx) {
  if (specs.empty()) throw ConfigError("reward registry: at least one objective required");
  RewardRegistry reg;
  for (const auto& spec : specs) {
    const ParsedSpec p = parse_objective_spec(spec);
    RewardFn base = base_objective(p.id, ctx);
    Objective obj;
    obj.id = p.id;
    obj.weight = p.weight;
    if (p.scale_text.empty()) {
      obj.fn = std::move(base);
    } else {
      const double scale = p.scale;
      obj.fn = [base = std::move(base), scale](const ToyImage& lr, const ToyImage& sr) {
        return scale * base(lr, sr);
      };
      obj.id += "*" + p.scale_text;
    }
    reg.objectives_.push_back(std::move(obj));
  }
  return reg;
}

Eigen::VectorXd RewardRegistry::weights() const {
  Eigen::VectorXd w(K());
  for (long k = 0; k < K(); ++k) w(k) = objectives_[static_cast<size_t>(k)].weight;
  return w;
}

std::vector<std::string> RewardRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& o : objectives_) out.push_back(o.id);
  return out;
}

Eigen::VectorXd RewardRegistry::eval(const ToyImage& lr, const ToyImage& sr) const {
  Eigen::VectorXd v(K());
  for (long k = 0; k < K(); ++k) v(k) = objectives_[static_cast<size_t>(k)].fn(lr, sr);
  return v;
}

Eigen::MatrixXd eval_rewards(const RewardRegistry& registry, const ToyImage& lr,
                             const std::vector<ToyImage>& rollouts) {
  if (rollouts.empty()) throw ContractError("eval_rewards: empty rollout group");
  Eigen::MatrixXd m(static_cast<long>(rollouts.size()), registry.K());
  for (size_t j = 0; j < rollouts.size(); ++j)
    for (long k = 0; k < registry.K(); ++k) {
      double v = 0.0;
      try {
        v = registry.objectives()[static_cast<size_t>(k)].fn(lr, rollouts[j]);
      } catch (const std::exception& e) {
        throw NumericError("eval_rewards: objective '" + registry.objectives()[static_cast<size_t>(k)].id +
                           "' failed on rollout " + std::to_string(j) + ": " + e.what());
      }
      if (!std::isfinite(v))
        throw NumericError("eval_rewards: objective '" + registry.objectives()[static_cast<size_t>(k)].id +
                           "' produced a non-finite value on rollout " + std::to_string(j));
      m(static_cast<long>(j), k) = v;
    }
  return m;
}

}  // namespace flowpref
