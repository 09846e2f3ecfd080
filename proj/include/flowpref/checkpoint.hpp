// Model checkpoint file (.fpnn), pinned byte-for-byte:
//   magic "FPNN", version u16, layer count u16,
//   per layer: rows u32, cols u32, weights f32 LE row-major, biases f32 LE.
// Weights are stored in 32-bit precision regardless of the in-memory scalar.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "flowpref/binio.hpp"
#include "flowpref/mlp.hpp"

namespace flowpref {

inline constexpr uint16_t kCheckpointVersion = 1;

template <typename T>
void save_mlp(const std::string& path, const Mlp<T>& mlp) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("FPNN", 4);
  write_le<uint16_t>(f, kCheckpointVersion);
  write_le<uint16_t>(f, static_cast<uint16_t>(mlp.layers.size()));
  for (const auto& l : mlp.layers) {
    const auto& w = l.weight.value();
    write_le<uint32_t>(f, static_cast<uint32_t>(w.rows()));
    write_le<uint32_t>(f, static_cast<uint32_t>(w.cols()));
    for (long i = 0; i < w.rows(); ++i)
      for (long j = 0; j < w.cols(); ++j) write_f32_le(f, static_cast<float>(w(i, j)));
    for (long i = 0; i < l.bias.numel(); ++i) write_f32_le(f, static_cast<float>(l.bias.value()(0, i)));
  }
  if (!f) throw IoError("write failed for checkpoint: " + path);
}

template <typename T = float>
Mlp<T> load_mlp(const std::string& path, bool requires_grad = false) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for reading: " + path);
  expect_magic(f, "FPNN", "checkpoint " + path);
  const uint16_t version = read_le<uint16_t>(f);
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  const uint16_t n_layers = read_le<uint16_t>(f);
  if (n_layers == 0) throw ValidationError("checkpoint " + path + ": zero layers");
  Mlp<T> mlp;
  long prev_out = -1;
  for (uint16_t k = 0; k < n_layers; ++k) {
    const long rows = static_cast<long>(read_le<uint32_t>(f));
    const long cols = static_cast<long>(read_le<uint32_t>(f));
    if (rows <= 0 || cols <= 0) throw ValidationError("checkpoint " + path + ": non-positive layer extent");
    if (prev_out >= 0 && cols != prev_out)
      throw ValidationError("checkpoint " + path + ": layer " + std::to_string(k) + " input extent " +
                            std::to_string(cols) + " does not chain with previous output extent " +
                            std::to_string(prev_out));
    typename Tensor<T>::Mat w(rows, cols);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) w(i, j) = static_cast<T>(read_f32_le(f));
    typename Tensor<T>::Mat b(1, rows);
    for (long i = 0; i < rows; ++i) b(0, i) = static_cast<T>(read_f32_le(f));
    typename Mlp<T>::Layer layer{Tensor<T>({rows, cols}, std::move(w), requires_grad),
                                 Tensor<T>({rows}, std::move(b), requires_grad)};
    mlp.layers.push_back(std::move(layer));
    prev_out = rows;
  }
  return mlp;
}

}  // namespace flowpref
