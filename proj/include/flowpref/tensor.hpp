// Dense tensor with reverse-mode automatic differentiation, templated on
// scalar so the same operator graph runs in float for training and in double
// for the finite-difference oracles. Storage is a row-major Eigen matrix:
// an n-d tensor of shape [d0, ..., dk] is viewed as (d0*...*d{k-1}) x dk,
// which is the only layout the operations here need.
//
// Gradient semantics follow the usual tape rules: ops whose inputs all have
// requires_grad == false produce constants and allocate no tape state;
// backward() walks the graph from a scalar loss and accumulates into the
// persistent .grad of every participating leaf (parameter), so repeated
// backward calls without zero_grad() accumulate.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flowpref/errors.hpp"

namespace flowpref {

using Shape = std::vector<long>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Node {
    Mat value;
    Shape shape;
    Mat grad;  // persistent accumulator; empty until first backward reaches it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Adds this node's contribution (given upstream) into parent scratch
    // gradients; a null slot means that parent is a constant.
    std::function<void(const Mat& upstream, std::vector<Mat*>& parent_grads)> backprop;

    bool is_leaf() const { return parents.empty() && !backprop; }
  };

  Tensor() = default;

  Tensor(Shape shape, Mat data, bool requires_grad = false) {
    for (long d : shape)
      if (d <= 0) throw ValidationError("tensor: non-positive extent in shape " + shape_str(shape));
    const long rows = view_rows(shape);
    const long cols = view_cols(shape);
    if (data.rows() != rows || data.cols() != cols)
      throw DimensionError("tensor: data is " + std::to_string(data.rows()) + "x" + std::to_string(data.cols()) +
                           " but shape " + shape_str(shape) + " views as " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    node_ = std::make_shared<Node>();
    node_->value = std::move(data);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor({1}, std::move(m), requires_grad);
  }

  static Tensor from_matrix(Mat m, bool requires_grad = false) {
    Shape s{m.rows(), m.cols()};
    return Tensor(std::move(s), std::move(m), requires_grad);
  }

  static Tensor row(std::vector<T> v, bool requires_grad = false) {
    Mat m(1, static_cast<long>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) m(0, static_cast<long>(i)) = v[i];
    return Tensor({static_cast<long>(v.size())}, std::move(m), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Mat m = Mat::Zero(view_rows(shape), view_cols(shape));
    return Tensor(std::move(shape), std::move(m), requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  long numel() const { return shape_numel(node_->shape); }
  long rows() const { return node_->value.rows(); }
  long cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Mat& value() const { return node_->value; }

  // In-place mutation is reserved for optimizers operating on leaf
  // parameters between forward passes.
  Mat& mutable_value() { return node_->value; }

  bool has_grad() const { return node_ && node_->grad.size() > 0; }
  const Mat& grad() const {
    if (!has_grad()) throw ContractError("tensor: gradient requested but none has been accumulated");
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.resize(0, 0);
  }

  std::shared_ptr<Node> node() const { return node_; }

  static long view_rows(const Shape& s) {
    if (s.empty()) return 1;
    long r = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
  }
  static long view_cols(const Shape& s) { return s.empty() ? 1 : s.back(); }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, typename Tensor<T>::Mat value, std::vector<Tensor<T>> inputs,
                  std::function<void(const typename Tensor<T>::Mat&, std::vector<typename Tensor<T>::Mat*>&)> back) {
  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  Tensor<T> out(std::move(shape), std::move(value), false);
  if (any_grad) {
    auto node = out.node();
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backprop = std::move(back);
  }
  return out;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  using Mat = typename Tensor<T>::Mat;
  Mat v = a.value() + b.value();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g;
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  using Mat = typename Tensor<T>::Mat;
  Mat v = a.value() - b.value();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] -= g;
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  using Mat = typename Tensor<T>::Mat;
  Mat v = a.value().cwiseProduct(b.value());
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [an, bn](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g.cwiseProduct(bn->value);
    if (pg[1]) *pg[1] += g.cwiseProduct(an->value);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  using Mat = typename Tensor<T>::Mat;
  const T ts = static_cast<T>(s);
  Mat v = a.value() * ts;
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [ts](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g * ts;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
  using Mat = typename Tensor<T>::Mat;
  Mat v = a.value().array() + static_cast<T>(s);
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g;
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  Mat sig = a.value();
  for (long i = 0; i < sig.rows(); ++i)
    for (long j = 0; j < sig.cols(); ++j) {
      const T x = sig(i, j);
      sig(i, j) = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }
  Mat v = a.value().cwiseProduct(sig);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [an, sig](const Mat& g, std::vector<Mat*>& pg) {
    if (!pg[0]) return;
    // d/dx x*s(x) = s(x) + x*s(x)*(1-s(x))
    Mat d = sig + an->value.cwiseProduct(sig.cwiseProduct((sig.array() * T(-1) + T(1)).matrix()));
    *pg[0] += g.cwiseProduct(d);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = typename Tensor<T>::Mat;
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents differ, " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
  Mat v = a.value() * b.value();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>({a.rows(), b.cols()}, std::move(v), {a, b},
                            [an, bn](const Mat& g, std::vector<Mat*>& pg) {
                              if (pg[0]) *pg[0] += g * bn->value.transpose();
                              if (pg[1]) *pg[1] += an->value.transpose() * g;
                            });
}

// a * b^T; a is (m x k), b is (n x k).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = typename Tensor<T>::Mat;
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: column extents differ, " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
  Mat v = a.value() * b.value().transpose();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>({a.rows(), b.rows()}, std::move(v), {a, b},
                            [an, bn](const Mat& g, std::vector<Mat*>& pg) {
                              if (pg[0]) *pg[0] += g * bn->value;
                              if (pg[1]) *pg[1] += g.transpose() * an->value;
                            });
}

// x * W^T + bias, broadcast over rows. x is (R x in), weight (out x in),
// bias a length-out tensor. The fused form keeps the MLP hot path to one op.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  using Mat = typename Tensor<T>::Mat;
  if (x.cols() != weight.cols())
    throw DimensionError("linear: input extent " + std::to_string(x.cols()) + " does not match layer input extent " +
                         std::to_string(weight.cols()));
  if (bias.numel() != weight.rows())
    throw DimensionError("linear: bias extent " + std::to_string(bias.numel()) + " does not match layer output extent " +
                         std::to_string(weight.rows()));
  Mat v = x.value() * weight.value().transpose();
  v.rowwise() += bias.value().row(0);
  Shape out_shape = x.shape();
  out_shape.back() = weight.rows();
  auto xn = x.node();
  auto wn = weight.node();
  return detail::make_op<T>(std::move(out_shape), std::move(v), {x, weight, bias},
                            [xn, wn](const Mat& g, std::vector<Mat*>& pg) {
                              if (pg[0]) *pg[0] += g * wn->value;
                              if (pg[1]) *pg[1] += g.transpose() * xn->value;
                              if (pg[2]) pg[2]->row(0) += g.colwise().sum();
                            });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = typename Tensor<T>::Mat;
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row extents differ, " + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()));
  Mat v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.value();
  v.rightCols(b.cols()) = b.value();
  const long ac = a.cols();
  return detail::make_op<T>({a.rows(), a.cols() + b.cols()}, std::move(v), {a, b},
                            [ac](const Mat& g, std::vector<Mat*>& pg) {
                              if (pg[0]) *pg[0] += g.leftCols(ac);
                              if (pg[1]) *pg[1] += g.rightCols(g.cols() - ac);
                            });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  return concat_cols(concat_cols(a, b), c);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make_op<T>({1}, std::move(v), {a}, [](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) pg[0]->array() += g(0, 0);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  Mat v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  auto an = a.node();
  return detail::make_op<T>({1}, std::move(v), {a}, [an](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += (T(2) * g(0, 0)) * an->value;
  });
}

// Per-row squared norms as a (rows x 1) tensor.
template <typename T>
Tensor<T> rowwise_sum_squares(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  Mat v = a.value().rowwise().squaredNorm();
  auto an = a.node();
  return detail::make_op<T>({a.rows(), 1}, std::move(v), {a}, [an](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += T(2) * (g.col(0).asDiagonal() * an->value);
  });
}

// Dot product of a flattened tensor with a constant coefficient vector.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const Eigen::Matrix<T, Eigen::Dynamic, 1>& w) {
  using Mat = typename Tensor<T>::Mat;
  if (a.numel() != w.size())
    throw DimensionError("weighted_sum: tensor numel " + std::to_string(a.numel()) + " vs weight extent " +
                         std::to_string(w.size()));
  Mat wm(a.rows(), a.cols());
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j) wm(i, j) = w(i * a.cols() + j);
  Mat v(1, 1);
  v(0, 0) = a.value().cwiseProduct(wm).sum();
  return detail::make_op<T>({1}, std::move(v), {a}, [wm](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) *pg[0] += g(0, 0) * wm;
  });
}

// ---------------------------------------------------------------------------
// Similarity-head ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> row_l2_normalize(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Vec norms = a.value().rowwise().norm();
  for (long i = 0; i < norms.size(); ++i)
    if (!(norms(i) > T(1e-12)))
      throw DegenerateEmbeddingError("row_l2_normalize: row " + std::to_string(i) +
                                     " has (near-)zero norm before normalization");
  Mat v = norms.cwiseInverse().asDiagonal() * a.value();
  return detail::make_op<T>({a.rows(), a.cols()}, Mat(v), {a}, [v, norms](const Mat& g, std::vector<Mat*>& pg) {
    if (!pg[0]) return;
    for (long i = 0; i < g.rows(); ++i) {
      const T d = g.row(i).dot(v.row(i));
      pg[0]->row(i) += (g.row(i) - d * v.row(i)) / norms(i);
    }
  });
}

template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  Mat v(a.rows(), 1);
  for (long i = 0; i < a.rows(); ++i) {
    const T m = a.value().row(i).maxCoeff();
    T s = T(0);
    for (long j = 0; j < a.cols(); ++j) s += std::exp(a.value()(i, j) - m);
    v(i, 0) = m + std::log(s);
  }
  auto an = a.node();
  Mat lse = v;
  return detail::make_op<T>({a.rows(), 1}, std::move(v), {a}, [an, lse](const Mat& g, std::vector<Mat*>& pg) {
    if (!pg[0]) return;
    for (long i = 0; i < g.rows(); ++i)
      for (long j = 0; j < an->value.cols(); ++j)
        (*pg[0])(i, j) += g(i, 0) * std::exp(an->value(i, j) - lse(i, 0));
  });
}

template <typename T>
Tensor<T> gather_diag(const Tensor<T>& a) {
  using Mat = typename Tensor<T>::Mat;
  if (a.rows() != a.cols())
    throw DimensionError("gather_diag: matrix is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         ", not square");
  Mat v = a.value().diagonal();
  return detail::make_op<T>({a.rows(), 1}, std::move(v), {a}, [](const Mat& g, std::vector<Mat*>& pg) {
    if (pg[0]) pg[0]->diagonal() += g.col(0);
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Scratch gradients for interior nodes
// live only for the duration of the call; leaves accumulate persistently.
template <typename T>
void backward(const Tensor<T>& loss) {
  using Mat = typename Tensor<T>::Mat;
  using NodeT = typename Tensor<T>::Node;
  if (!loss.valid() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  if (!loss.requires_grad()) return;  // nothing participates

  // Iterative postorder DFS over requires_grad ancestry.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeT* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<NodeT*, Mat> scratch;
  scratch.reserve(order.size());
  {
    Mat seed(1, 1);
    seed(0, 0) = T(1);
    scratch[loss.node().get()] = std::move(seed);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    auto found = scratch.find(node);
    if (found == scratch.end()) continue;  // no gradient flowed here
    // Reverse topological order guarantees every consumer already ran, so
    // this node's upstream gradient is complete; detach it before mutating
    // the map (insertion may rehash and invalidate iterators).
    Mat upstream = std::move(found->second);
    scratch.erase(found);
    if (node->backprop) {
      // Element references in unordered_map survive rehashing, so the
      // pointers collected here stay valid across later insertions.
      std::vector<Mat*> parent_grads(node->parents.size(), nullptr);
      for (size_t i = 0; i < node->parents.size(); ++i) {
        NodeT* p = node->parents[i].get();
        if (!p->requires_grad) continue;
        auto [slot, inserted] = scratch.try_emplace(p);
        if (inserted) slot->second = Mat::Zero(p->value.rows(), p->value.cols());
        parent_grads[i] = &slot->second;
      }
      node->backprop(upstream, parent_grads);
    } else if (node->is_leaf()) {
      if (node->grad.size() == 0) node->grad = Mat::Zero(node->value.rows(), node->value.cols());
      node->grad += upstream;
    }
  }
}

}  // namespace flowpref
