// Adaptive moment optimizer with decoupled weight decay: the decay term is
// applied directly to the parameter and never enters the moment estimates.
#pragma once

#include <cmath>
#include <vector>

#include "flowpref/tensor.hpp"

namespace flowpref {

template <typename T>
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit AdamW(Options opt = {}) : opt_(opt) {
    if (opt_.lr < 0 || opt_.beta1 < 0 || opt_.beta1 >= 1 || opt_.beta2 < 0 || opt_.beta2 >= 1 || opt_.eps <= 0 ||
        opt_.weight_decay < 0)
      throw ValidationError("adamw: hyperparameter out of range");
  }

  const Options& options() const { return opt_; }
  long step_count() const { return step_; }

  // One update over the given parameters. Every parameter must carry an
  // accumulated gradient. Parameter identity (order and shapes) must be
  // stable across calls.
  void step(const std::vector<Tensor<T>*>& params) {
    using Mat = typename Tensor<T>::Mat;
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat::Zero(p->rows(), p->cols()));
        v_.push_back(Mat::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw ContractError("adamw: parameter set changed size between steps");
    ++step_;
    const T b1 = static_cast<T>(opt_.beta1);
    const T b2 = static_cast<T>(opt_.beta2);
    const T lr = static_cast<T>(opt_.lr);
    const T eps = static_cast<T>(opt_.eps);
    const T wd = static_cast<T>(opt_.weight_decay);
    const T bc1 = T(1) - static_cast<T>(std::pow(opt_.beta1, static_cast<double>(step_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(opt_.beta2, static_cast<double>(step_)));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      if (!p.has_grad())
        throw ContractError("adamw: parameter " + std::to_string(i) + " has no accumulated gradient");
      const Mat& g = p.grad();
      if (g.rows() != m_[i].rows() || g.cols() != m_[i].cols())
        throw ContractError("adamw: parameter " + std::to_string(i) + " changed shape between steps");
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      Mat update = mhat.array() / (vhat.array().sqrt() + eps);
      if (wd != T(0)) update += wd * p.value();
      p.mutable_value() -= lr * update;
    }
  }

 private:
  Options opt_;
  long step_ = 0;
  std::vector<typename Tensor<T>::Mat> m_;
  std::vector<typename Tensor<T>::Mat> v_;
};

}  // namespace flowpref
