// Per-step loss traces recorded by the training loops.
#pragma once

#include <utility>
#include <vector>

namespace flowpref {

struct LossTrace {
  std::vector<std::pair<long, double>> entries;  // (step, loss)
};

// EMA smoothing of a recorded loss trace, seeded at the first entry; the
// training-sanity checks compare early vs final smoothed values.
inline std::vector<double> smoothed_losses(const LossTrace& trace, double decay = 0.98) {
  std::vector<double> out;
  out.reserve(trace.entries.size());
  double s = 0.0;
  for (size_t i = 0; i < trace.entries.size(); ++i) {
    s = (i == 0) ? trace.entries[i].second : decay * s + (1.0 - decay) * trace.entries[i].second;
    out.push_back(s);
  }
  return out;
}

}  // namespace flowpref
