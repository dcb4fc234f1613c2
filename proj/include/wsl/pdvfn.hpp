#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsl/dualview.hpp"
#include "wsl/io.hpp"
#include "wsl/layers.hpp"

namespace wsl::pdvfn {

using tc::Tensor;

enum class Task { regression, classification };
enum class Target { teff = 0, logg = 1, feh = 2, ch = 3 };

std::string task_name(Task t);
Task parse_task(const std::string& s);
std::string target_name(Target t);
// "all" or a comma list of teff/logg/feh/ch.
std::vector<Target> parse_targets(const std::string& s);
std::string targets_string(const std::vector<Target>& targets);

struct AcrConfig {
  std::size_t input_length = 3450;
  std::array<std::size_t, 3> channels{16, 16, 16};
  std::array<std::size_t, 3> kernels{7, 5, 3};
  std::array<std::size_t, 3> strides{2, 2, 2};
  std::size_t cbam_reduction = 4;
  std::size_t cbam_kernel = 7;
  std::size_t gru_hidden = 32;
  std::size_t gru_layers = 4;
  std::size_t heads = 4;
  std::size_t output_dim = 32;

  // Sequence length reaching the GRU.
  std::size_t steps() const;
};

struct PmtfConfig {
  std::size_t map_frames = 54;  // before trimming to even
  std::size_t map_bins = 129;
  std::size_t mfpf_channels = 4;
  std::size_t rc_ratio = 2;
  std::size_t rc_channels = 4;
  std::size_t ffc_channels = 8;
  std::size_t target_h = 8;
  std::size_t target_w = 4;
  std::size_t ssm_dim = 16;
  std::size_t ssm_blocks = 4;
  std::size_t ssm_state = 16;
  std::size_t output_dim = 32;

  std::size_t trimmed_frames() const { return map_frames - map_frames % 2; }
  std::size_t trimmed_bins() const { return map_bins - map_bins % 2; }
};

struct HeadConfig {
  Task task = Task::regression;
  std::vector<Target> targets{Target::teff, Target::logg, Target::feh, Target::ch};
  std::size_t hidden = 32;

  std::size_t outputs() const { return task == Task::classification ? 3 : 2 * targets.size(); }
};

struct PdvfnConfig {
  AcrConfig acr;
  PmtfConfig pmtf;
  HeadConfig head;
  dualview::StftConfig stft;
  double log_eps = 1e-3;
  std::uint64_t seed = 0;

  static PdvfnConfig from_kv(const io::KeyValue& kv);
  io::KeyValue to_kv() const;
  // Recomputes the map shape from input_length and the STFT settings.
  void sync_map_shape();
  void validate() const;
};

// Channel then spatial attention for [C,L] or [C,H,W].
struct Cbam {
  tc::Linear fc1, fc2;
  tc::Conv1d spatial1d;
  tc::Conv2d spatial2d;
  bool two_d = false;

  struct Weights {
    Tensor channel;  // [C]
    Tensor spatial;  // [1,L] or [1,H,W]
  };
  static Cbam make(tc::ParameterSet& ps, const std::string& name, std::size_t channels, std::size_t reduction,
                   std::size_t kernel, bool two_d);
  Tensor operator()(const Tensor& x, Weights* weights = nullptr) const;
};

struct MfpfUnit {
  tc::Conv2d path_a, path_b, path_c;
  static MfpfUnit make(tc::ParameterSet& ps, const std::string& name, std::size_t in, std::size_t branch);
  Tensor operator()(const Tensor& x) const;
};

struct RcBlock {
  tc::LayerNorm norm1, norm2;
  tc::Conv2d expand, reduce;
  Tensor rev_weight, rev_bias;
  tc::BatchNorm bn;
  static RcBlock make(tc::ParameterSet& ps, const std::string& name, std::size_t in, std::size_t ratio,
                      std::size_t out, std::size_t width);
  Tensor operator()(const Tensor& x, bool training);
};

struct FfcUnit {
  tc::Conv2d squeeze, excite, resize;
  std::size_t target_h = 1, target_w = 1;
  static FfcUnit make(tc::ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t target_h, std::size_t target_w);
  // weights, when given, receives the per-(channel, frequency) gate [C,1,W].
  Tensor operator()(const Tensor& x, Tensor* weights = nullptr) const;
};

// Pre-norm residual selective state-space block over [T,D].
struct SsmBlock {
  tc::LayerNorm norm;
  tc::Linear delta, b, c, out;
  Tensor a_log, skip;
  static SsmBlock make(tc::ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t state);
  Tensor operator()(const Tensor& x) const;
};

struct ModelOutput {
  Tensor mu, log_var;  // [1, targets], regression
  Tensor logits;       // [1, 3], classification
};

class Model {
 public:
  explicit Model(PdvfnConfig cfg);

  // vector [L]; map [frames, bins]. Tensors of other ranks are reshaped when sizes agree.
  ModelOutput forward(const Tensor& vector_view, const Tensor& map_view, bool training);
  Tensor acr_forward(const Tensor& vector_view);
  Tensor pmtf_forward(const Tensor& map_view, bool training);
  ModelOutput head_forward(const Tensor& features) const;

  const PdvfnConfig& config() const { return cfg_; }
  tc::ParameterSet& params() { return ps_; }
  const tc::ParameterSet& params() const { return ps_; }

 private:
  PdvfnConfig cfg_;
  tc::ParameterSet ps_;
  tc::Conv1d conv1_, conv2_, conv3_;
  Cbam cbam1_, cbam2_;
  tc::BiGru gru_;
  tc::MultiHeadAttention attn_;
  tc::Linear acr_fc_;
  MfpfUnit mfpf_;
  RcBlock rc_;
  FfcUnit ffc_;
  tc::Linear seq_proj_;
  std::vector<SsmBlock> ssm_;
  tc::Linear pmtf_fc_;
  tc::Linear head1_, head2_;
};

}  // namespace wsl::pdvfn
