#pragma once

#include <cstdint>
#include <vector>

#include "wsl/io.hpp"
#include "wsl/tensor.hpp"

namespace wsl::train {

struct TrainConfig {
  double lr0 = 5e-4;
  double decay_factor = 0.1;
  int decay_every = 10;
  int epochs = 40;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double focal_gamma = 2.0;
  std::vector<double> focal_alpha;  // empty: inverse class frequency of the training split
  std::size_t input_offset = 0;     // first processed sample fed to the model

  static TrainConfig from_kv(const io::KeyValue& kv);
  io::KeyValue to_kv() const;
  void validate() const;
};

// lr0 * decay_factor^floor(epoch / decay_every)
double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

// Decoupled weight decay: p -= lr*wd*p, then the bias-corrected Adam step.
// Parameters without a gradient buffer are treated as having zero gradient.
void adamw_step(std::vector<tc::Tensor>& params, AdamWState& state, double lr, const AdamWConfig& cfg);

}  // namespace wsl::train
