#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wsl/corpus.hpp"
#include "wsl/optim.hpp"
#include "wsl/pdvfn.hpp"

namespace wsl::train {

struct SampleViews {
  tc::Tensor vector_view;  // [input_length]
  tc::Tensor map_view;     // [frames, bins], log-compressed STFT magnitude
};

// Cuts input_length values starting at `offset` out of a processed row and
// builds both model views from that window.
SampleViews make_views(std::span<const double> processed_row, const pdvfn::PdvfnConfig& cfg, std::size_t offset);

double target_value(const corpus::Record& r, pdvfn::Target t);

// Per-target affine scaling fitted on the training split.
struct TargetScaling {
  std::vector<double> mean, std;
  static TargetScaling fit(const corpus::Corpus& c, std::span<const std::size_t> rows,
                           const std::vector<pdvfn::Target>& targets);
  void write_meta(io::KeyValue& meta) const;
  static TargetScaling from_meta(const io::KeyValue& meta);
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

std::string format_loss_log(const std::vector<EpochLog>& log);

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string best_checkpoint;  // serialized checkpoint bytes
  io::KeyValue meta;
};

// Deterministic for fixed (corpus, configs). Raises DivergenceError on a
// non-finite loss and ValidationError on an empty train or val split.
TrainResult train_model(const corpus::Corpus& data, const pdvfn::PdvfnConfig& model_cfg, const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

struct Predictions {
  pdvfn::Task task = pdvfn::Task::regression;
  std::vector<pdvfn::Target> targets;
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> mu, sigma;  // [row][target], physical units
  std::vector<std::vector<double>> probs;      // [row][class]
};

// Eval-mode inference; meta comes from the checkpoint.
Predictions predict(pdvfn::Model& model, const io::KeyValue& meta, const corpus::Corpus& data,
                    std::span<const std::size_t> rows);

}  // namespace wsl::train
