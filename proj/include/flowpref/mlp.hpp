// Fully-connected network over the autodiff tensor: a list of
// (weight, bias) layers with a smooth sigmoid-weighted nonlinearity between
// layers and a linear final layer. Initialization is fan-in-scaled uniform
// from an explicit seed.
#pragma once

#include <cstdint>
#include <vector>

#include "flowpref/rng.hpp"
#include "flowpref/tensor.hpp"

namespace flowpref {

enum class Activation : uint8_t { Silu = 0 };

template <typename T>
struct Mlp {
  struct Layer {
    Tensor<T> weight;  // (out x in)
    Tensor<T> bias;    // length out
  };

  std::vector<Layer> layers;
  Activation activation = Activation::Silu;

  long input_dim() const { return layers.front().weight.cols(); }
  long output_dim() const { return layers.back().weight.rows(); }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> ps;
    ps.reserve(layers.size() * 2);
    for (auto& l : layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> ps;
    ps.reserve(layers.size() * 2);
    for (const auto& l : layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  long parameter_count() const {
    long n = 0;
    for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
    return n;
  }

  void zero_grad() {
    for (auto& l : layers) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    }
  }
};

// dims = {in, h1, ..., out}; at least one layer. Weights ~ U(-a, a) with
// a = 1/sqrt(fan_in); biases start at zero.
template <typename T>
Mlp<T> make_mlp(const std::vector<long>& dims, uint64_t seed, bool requires_grad = true) {
  if (dims.size() < 2) throw ValidationError("make_mlp: need at least an input and an output extent");
  Mlp<T> mlp;
  Rng rng(derive_seed(seed, 0x6d6c70));
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const long in = dims[i];
    const long out = dims[i + 1];
    if (in <= 0 || out <= 0) throw ValidationError("make_mlp: non-positive layer extent");
    typename Tensor<T>::Mat w(out, in);
    const double a = 1.0 / std::sqrt(static_cast<double>(in));
    rng.fill_uniform(w, -a, a);
    typename Tensor<T>::Mat b = Tensor<T>::Mat::Zero(1, out);
    typename Mlp<T>::Layer layer{Tensor<T>({out, in}, std::move(w), requires_grad),
                                 Tensor<T>({out}, std::move(b), requires_grad)};
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

template <typename T>
Tensor<T> forward(const Mlp<T>& mlp, const Tensor<T>& input) {
  if (input.cols() != mlp.input_dim())
    throw DimensionError("forward: input extent " + std::to_string(input.cols()) +
                         " does not match first layer input extent " + std::to_string(mlp.input_dim()));
  Tensor<T> h = input;
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    h = linear(h, mlp.layers[i].weight, mlp.layers[i].bias);
    if (i + 1 < mlp.layers.size()) h = silu(h);
  }
  return h;
}

// Deep copy; the copy's parameters get fresh nodes so the two networks never
// share tape state. Used for frozen policy snapshots.
template <typename T>
Mlp<T> clone_mlp(const Mlp<T>& mlp, bool requires_grad) {
  Mlp<T> out;
  out.activation = mlp.activation;
  for (const auto& l : mlp.layers) {
    typename Mlp<T>::Layer layer{Tensor<T>(l.weight.shape(), l.weight.value(), requires_grad),
                                 Tensor<T>(l.bias.shape(), l.bias.value(), requires_grad)};
    out.layers.push_back(std::move(layer));
  }
  return out;
}

template <typename U, typename T>
Mlp<U> cast_mlp(const Mlp<T>& mlp, bool requires_grad) {
  Mlp<U> out;
  out.activation = mlp.activation;
  for (const auto& l : mlp.layers) {
    typename Tensor<U>::Mat w = l.weight.value().template cast<U>();
    typename Tensor<U>::Mat b = l.bias.value().template cast<U>();
    typename Mlp<U>::Layer layer{Tensor<U>(l.weight.shape(), std::move(w), requires_grad),
                                 Tensor<U>(l.bias.shape(), std::move(b), requires_grad)};
    out.layers.push_back(std::move(layer));
  }
  return out;
}

// Euclidean distance between two parameter vectors, in double.
template <typename T>
double parameter_distance(const Mlp<T>& a, const Mlp<T>& b) {
  if (a.layers.size() != b.layers.size()) throw ContractError("parameter_distance: layer counts differ");
  double d2 = 0.0;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    d2 += (a.layers[i].weight.value().template cast<double>() - b.layers[i].weight.value().template cast<double>())
              .squaredNorm();
    d2 += (a.layers[i].bias.value().template cast<double>() - b.layers[i].bias.value().template cast<double>())
              .squaredNorm();
  }
  return std::sqrt(d2);
}

// Deterministic fingerprint of the exact parameter bytes.
template <typename T>
uint64_t parameter_fingerprint(const Mlp<T>& mlp) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& l : mlp.layers) {
    mix(l.weight.value().data(), sizeof(T) * static_cast<size_t>(l.weight.value().size()));
    mix(l.bias.value().data(), sizeof(T) * static_cast<size_t>(l.bias.value().size()));
  }
  return h;
}

// Exponential moving average of a network's parameters.
template <typename T>
struct EmaShadow {
  double decay = 0.9;
  std::vector<typename Tensor<T>::Mat> weights;
  std::vector<typename Tensor<T>::Mat> biases;

  static EmaShadow from(const Mlp<T>& mlp, double decay) {
    EmaShadow s;
    s.decay = decay;
    for (const auto& l : mlp.layers) {
      s.weights.push_back(l.weight.value());
      s.biases.push_back(l.bias.value());
    }
    return s;
  }

  void update(const Mlp<T>& mlp) {
    const T d = static_cast<T>(decay);
    for (size_t i = 0; i < mlp.layers.size(); ++i) {
      weights[i] = d * weights[i] + (T(1) - d) * mlp.layers[i].weight.value();
      biases[i] = d * biases[i] + (T(1) - d) * mlp.layers[i].bias.value();
    }
  }

  Mlp<T> snapshot(const Mlp<T>& like, bool requires_grad = false) const {
    Mlp<T> out;
    out.activation = like.activation;
    for (size_t i = 0; i < like.layers.size(); ++i) {
      typename Mlp<T>::Layer layer{Tensor<T>(like.layers[i].weight.shape(), weights[i], requires_grad),
                                   Tensor<T>(like.layers[i].bias.shape(), biases[i], requires_grad)};
      out.layers.push_back(std::move(layer));
    }
    return out;
  }
};

}  // namespace flowpref
