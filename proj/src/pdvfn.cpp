#include "wsl/pdvfn.hpp"

#include <cmath>
#include <sstream>

#include "wsl/error.hpp"

namespace wsl::pdvfn {

using namespace wsl::tc;

namespace {

template <class F>
auto stage(const char* branch, const char* name, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(branch) + " stage '" + name + "': " + e.what());
  }
}

std::array<std::size_t, 3> get_triple(const io::KeyValue& kv, const std::string& key,
                                      const std::array<std::size_t, 3>& fallback) {
  const auto v = kv.get_ints(key, {static_cast<long long>(fallback[0]), static_cast<long long>(fallback[1]),
                                   static_cast<long long>(fallback[2])});
  if (v.size() != 3) throw ValidationError("config key '" + key + "' needs exactly 3 values");
  std::array<std::size_t, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (v[i] <= 0) throw ValidationError("config key '" + key + "' needs positive values");
    out[i] = static_cast<std::size_t>(v[i]);
  }
  return out;
}

std::string triple_string(const std::array<std::size_t, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

std::size_t get_size(const io::KeyValue& kv, const std::string& key, std::size_t fallback) {
  const long long v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ValidationError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ValidationError(std::string("model config: ") + what + " must be positive");
}

// Accepts [n], [1,n] or any shape with n elements and returns [1, n].
Tensor as_row(const Tensor& x, std::size_t n, const char* what) {
  if (x.numel() != n) {
    throw ValidationError(std::string(what) + ": expected " + std::to_string(n) + " values, got shape " +
                          shape_str(x.shape()));
  }
  return x.rank() == 2 && x.dim(0) == 1 ? x : reshape(x, {1, n});
}

}  // namespace

std::string task_name(Task t) { return t == Task::regression ? "regression" : "classification"; }

Task parse_task(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw UsageError("unknown task '" + s + "' (expected regression or classification)");
}

std::string target_name(Target t) {
  switch (t) {
    case Target::teff: return "teff";
    case Target::logg: return "logg";
    case Target::feh: return "feh";
    case Target::ch: return "ch";
  }
  return "?";
}

std::vector<Target> parse_targets(const std::string& s) {
  if (s == "all") return {Target::teff, Target::logg, Target::feh, Target::ch};
  std::vector<Target> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    Target t;
    if (item == "teff") t = Target::teff;
    else if (item == "logg") t = Target::logg;
    else if (item == "feh") t = Target::feh;
    else if (item == "ch") t = Target::ch;
    else throw UsageError("unknown target '" + item + "' (expected all, teff, logg, feh or ch)");
    for (auto o : out) {
      if (o == t) throw UsageError("target '" + item + "' listed twice");
    }
    out.push_back(t);
  }
  if (out.empty()) throw UsageError("no regression targets given");
  return out;
}

std::string targets_string(const std::vector<Target>& targets) {
  if (targets.size() == 4 && targets[0] == Target::teff && targets[1] == Target::logg && targets[2] == Target::feh &&
      targets[3] == Target::ch) {
    return "all";
  }
  std::string s;
  for (auto t : targets) s += (s.empty() ? "" : ",") + target_name(t);
  return s;
}

std::size_t AcrConfig::steps() const {
  std::size_t len = input_length;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t pad = kernels[i] / 2;
    if (len + 2 * pad < kernels[i]) return 0;
    len = (len + 2 * pad - kernels[i]) / strides[i] + 1;
  }
  return len;
}

PdvfnConfig PdvfnConfig::from_kv(const io::KeyValue& kv) {
  static constexpr std::string_view kKeys[] = {
      "input_length",   "acr_channels",    "acr_kernels",  "acr_strides",  "cbam_reduction", "cbam_kernel",
      "gru_hidden",     "gru_layers",      "attn_heads",   "acr_output_dim", "mfpf_channels", "rc_ratio",
      "rc_channels",    "ffc_channels",    "ffc_target_h", "ffc_target_w", "ssm_dim",        "ssm_blocks",
      "ssm_state",      "pmtf_output_dim", "head_hidden",  "task",         "targets",        "stft_window",
      "stft_hop",       "stft_window_fn",  "log_eps",      "model_seed"};
  kv.require_known(kKeys);
  PdvfnConfig c;
  c.acr.input_length = get_size(kv, "input_length", c.acr.input_length);
  c.acr.channels = get_triple(kv, "acr_channels", c.acr.channels);
  c.acr.kernels = get_triple(kv, "acr_kernels", c.acr.kernels);
  c.acr.strides = get_triple(kv, "acr_strides", c.acr.strides);
  c.acr.cbam_reduction = get_size(kv, "cbam_reduction", c.acr.cbam_reduction);
  c.acr.cbam_kernel = get_size(kv, "cbam_kernel", c.acr.cbam_kernel);
  c.acr.gru_hidden = get_size(kv, "gru_hidden", c.acr.gru_hidden);
  c.acr.gru_layers = get_size(kv, "gru_layers", c.acr.gru_layers);
  c.acr.heads = get_size(kv, "attn_heads", c.acr.heads);
  c.acr.output_dim = get_size(kv, "acr_output_dim", c.acr.output_dim);
  c.pmtf.mfpf_channels = get_size(kv, "mfpf_channels", c.pmtf.mfpf_channels);
  c.pmtf.rc_ratio = get_size(kv, "rc_ratio", c.pmtf.rc_ratio);
  c.pmtf.rc_channels = get_size(kv, "rc_channels", c.pmtf.rc_channels);
  c.pmtf.ffc_channels = get_size(kv, "ffc_channels", c.pmtf.ffc_channels);
  c.pmtf.target_h = get_size(kv, "ffc_target_h", c.pmtf.target_h);
  c.pmtf.target_w = get_size(kv, "ffc_target_w", c.pmtf.target_w);
  c.pmtf.ssm_dim = get_size(kv, "ssm_dim", c.pmtf.ssm_dim);
  c.pmtf.ssm_blocks = get_size(kv, "ssm_blocks", c.pmtf.ssm_blocks);
  c.pmtf.ssm_state = get_size(kv, "ssm_state", c.pmtf.ssm_state);
  c.pmtf.output_dim = get_size(kv, "pmtf_output_dim", c.pmtf.output_dim);
  c.head.hidden = get_size(kv, "head_hidden", c.head.hidden);
  c.head.task = parse_task(kv.get_string("task", task_name(c.head.task)));
  c.head.targets = parse_targets(kv.get_string("targets", "all"));
  c.stft = dualview::StftConfig::from_kv(kv, c.stft);
  c.log_eps = kv.get_double("log_eps", c.log_eps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("model_seed", 0));
  c.sync_map_shape();
  c.validate();
  return c;
}

io::KeyValue PdvfnConfig::to_kv() const {
  io::KeyValue kv;
  kv.set("input_length", std::to_string(acr.input_length));
  kv.set("acr_channels", triple_string(acr.channels));
  kv.set("acr_kernels", triple_string(acr.kernels));
  kv.set("acr_strides", triple_string(acr.strides));
  kv.set("cbam_reduction", std::to_string(acr.cbam_reduction));
  kv.set("cbam_kernel", std::to_string(acr.cbam_kernel));
  kv.set("gru_hidden", std::to_string(acr.gru_hidden));
  kv.set("gru_layers", std::to_string(acr.gru_layers));
  kv.set("attn_heads", std::to_string(acr.heads));
  kv.set("acr_output_dim", std::to_string(acr.output_dim));
  kv.set("mfpf_channels", std::to_string(pmtf.mfpf_channels));
  kv.set("rc_ratio", std::to_string(pmtf.rc_ratio));
  kv.set("rc_channels", std::to_string(pmtf.rc_channels));
  kv.set("ffc_channels", std::to_string(pmtf.ffc_channels));
  kv.set("ffc_target_h", std::to_string(pmtf.target_h));
  kv.set("ffc_target_w", std::to_string(pmtf.target_w));
  kv.set("ssm_dim", std::to_string(pmtf.ssm_dim));
  kv.set("ssm_blocks", std::to_string(pmtf.ssm_blocks));
  kv.set("ssm_state", std::to_string(pmtf.ssm_state));
  kv.set("pmtf_output_dim", std::to_string(pmtf.output_dim));
  kv.set("head_hidden", std::to_string(head.hidden));
  kv.set("task", task_name(head.task));
  kv.set("targets", targets_string(head.targets));
  stft.write_kv(kv);
  kv.set("log_eps", io::format_double(log_eps));
  kv.set("model_seed", std::to_string(seed));
  return kv;
}

void PdvfnConfig::sync_map_shape() {
  stft.validate(acr.input_length);
  pmtf.map_frames = stft.frames(acr.input_length);
  pmtf.map_bins = stft.bins();
}

void PdvfnConfig::validate() const {
  require_positive(acr.input_length, "input_length");
  for (std::size_t i = 0; i < 3; ++i) {
    require_positive(acr.channels[i], "acr_channels");
    require_positive(acr.kernels[i], "acr_kernels");
    require_positive(acr.strides[i], "acr_strides");
  }
  if (acr.steps() == 0) throw ValidationError("model config: input_length too short for the ACR convolutions");
  require_positive(acr.cbam_reduction, "cbam_reduction");
  if (acr.cbam_kernel % 2 == 0) throw ValidationError("model config: cbam_kernel must be odd");
  require_positive(acr.gru_hidden, "gru_hidden");
  require_positive(acr.gru_layers, "gru_layers");
  require_positive(acr.heads, "attn_heads");
  if ((2 * acr.gru_hidden) % acr.heads != 0) {
    throw ValidationError("model config: 2*gru_hidden must be divisible by attn_heads");
  }
  require_positive(acr.output_dim, "acr_output_dim");
  if (pmtf.trimmed_frames() < 4 || pmtf.trimmed_bins() < 4) {
    throw ValidationError("model config: time-frequency map must be at least 4x4");
  }
  require_positive(pmtf.mfpf_channels, "mfpf_channels");
  require_positive(pmtf.rc_ratio, "rc_ratio");
  require_positive(pmtf.rc_channels, "rc_channels");
  require_positive(pmtf.ffc_channels, "ffc_channels");
  require_positive(pmtf.target_h, "ffc_target_h");
  require_positive(pmtf.target_w, "ffc_target_w");
  if (pmtf.target_h > pmtf.trimmed_frames() || pmtf.target_w > pmtf.trimmed_bins()) {
    throw ValidationError("model config: FFC target larger than the time-frequency map");
  }
  require_positive(pmtf.ssm_dim, "ssm_dim");
  require_positive(pmtf.ssm_blocks, "ssm_blocks");
  require_positive(pmtf.ssm_state, "ssm_state");
  require_positive(pmtf.output_dim, "pmtf_output_dim");
  require_positive(head.hidden, "head_hidden");
  if (!(log_eps > 0.0)) throw ValidationError("model config: log_eps must be positive");
}

// ------------------------------------------------------------------- CBAM

Cbam Cbam::make(ParameterSet& ps, const std::string& name, std::size_t channels, std::size_t reduction,
                std::size_t kernel, bool two_d) {
  if (reduction == 0 || reduction > channels) {
    throw ValidationError("cbam: reduction " + std::to_string(reduction) + " invalid for " +
                          std::to_string(channels) + " channels");
  }
  Cbam c;
  const std::size_t mid = channels / reduction;
  c.fc1 = Linear::make(ps, name + ".fc1", channels, mid);
  c.fc2 = Linear::make(ps, name + ".fc2", mid, channels);
  c.two_d = two_d;
  if (two_d) {
    c.spatial2d = Conv2d::make(ps, name + ".spatial", 2, 1, kernel, 1, kernel / 2);
  } else {
    c.spatial1d = Conv1d::make(ps, name + ".spatial", 2, 1, kernel, 1, kernel / 2);
  }
  return c;
}

Tensor Cbam::operator()(const Tensor& x, Weights* weights) const {
  const std::size_t want = two_d ? 3 : 2;
  if (x.rank() != want) throw ValidationError("cbam: unexpected input shape " + shape_str(x.shape()));
  const std::size_t ch = x.dim(0);
  const std::size_t spatial = x.numel() / ch;
  const Tensor flat = two_d ? reshape(x, {ch, spatial}) : x;
  const Tensor pooled = concat({reshape(mean_axis(flat, 1), {1, ch}), reshape(max_axis(flat, 1), {1, ch})}, 0);
  const Tensor scores = sum_axis(fc2(relu(fc1(pooled))), 0);
  const Tensor w_ch = sigmoid(scores);
  Shape ch_shape = two_d ? Shape{ch, 1, 1} : Shape{ch, 1};
  const Tensor xc = mul(x, reshape(w_ch, ch_shape));

  const Tensor maps = concat({mean_axis(xc, 0, true), max_axis(xc, 0, true)}, 0);
  const Tensor w_sp = sigmoid(two_d ? spatial2d(maps) : spatial1d(maps));
  if (weights) {
    weights->channel = w_ch;
    weights->spatial = w_sp;
  }
  return mul(xc, w_sp);
}

// ------------------------------------------------------------------- MFPF

MfpfUnit MfpfUnit::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t branch) {
  MfpfUnit m;
  m.path_a = Conv2d::make(ps, name + ".coarse", in, branch, 3, 1, 1);
  m.path_b = Conv2d::make(ps, name + ".native", in, branch, 3, 1, 1);
  m.path_c = Conv2d::make(ps, name + ".fine", in, branch, 3, 1, 1);
  return m;
}

Tensor MfpfUnit::operator()(const Tensor& x) const {
  if (x.rank() != 3) throw ValidationError("mfpf: expected [C,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) < 4 || x.dim(2) < 4 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw ValidationError("mfpf: spatial dims must be even and at least 4, got " + shape_str(x.shape()));
  }
  const Tensor a = upsample_nearest2d(path_a(avg_pool2d(x, 2, 2)), 2);
  const Tensor b = path_b(x);
  const Tensor c = avg_pool2d(path_c(upsample_nearest2d(x, 2)), 2, 2);
  return concat({a, b, c}, 0);
}

// ---------------------------------------------------------------- RC block

RcBlock RcBlock::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t ratio, std::size_t out,
                      std::size_t width) {
  if (ratio == 0) throw ValidationError("rc block: bottleneck ratio must be >= 1");
  RcBlock r;
  const std::size_t mid = in * ratio;
  r.norm1 = LayerNorm::make(ps, name + ".norm1", width, 2);
  r.expand = Conv2d::make(ps, name + ".expand", in, mid, 1, 1, 0);
  r.rev_weight = ps.weight(name + ".reverse.weight", {mid, mid, 5, 5}, mid * 25);
  r.rev_bias = ps.constant(name + ".reverse.bias", {mid}, 0.0);
  r.norm2 = LayerNorm::make(ps, name + ".norm2", width, 2);
  r.reduce = Conv2d::make(ps, name + ".reduce", mid, out, 1, 1, 0);
  r.bn = BatchNorm::make(ps, name + ".bn", out);
  return r;
}

Tensor RcBlock::operator()(const Tensor& x, bool training) {
  if (x.rank() != 3) throw ValidationError("rc block: expected [C,H,W], got " + shape_str(x.shape()));
  Tensor h = expand(norm1(x));
  h = reverse_conv2d_5x5(h, rev_weight, rev_bias);
  h = reduce(norm2(h));
  return bn(h, training);
}

// --------------------------------------------------------------------- FFC

FfcUnit FfcUnit::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t target_h, std::size_t target_w) {
  FfcUnit f;
  const std::size_t mid = std::max<std::size_t>(1, in / 4);
  f.squeeze = Conv2d::make(ps, name + ".squeeze", in, mid, 1, 1, 0);
  f.excite = Conv2d::make(ps, name + ".excite", mid, in, 1, 1, 0);
  f.resize = Conv2d::make(ps, name + ".resize", in, out, 3, 1, 1);
  f.target_h = target_h;
  f.target_w = target_w;
  return f;
}

Tensor FfcUnit::operator()(const Tensor& x, Tensor* weights) const {
  if (x.rank() != 3) throw ValidationError("ffc: expected [C,H,W], got " + shape_str(x.shape()));
  if (target_h > x.dim(1) || target_w > x.dim(2)) {
    throw ValidationError("ffc: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                          " larger than input " + shape_str(x.shape()));
  }
  // Frames run along axis 1; pooling them away leaves one weight per frequency.
  const Tensor w = sigmoid(excite(relu(squeeze(mean_axis(x, 1, true)))));
  if (weights) *weights = w;
  return adaptive_avg_pool2d(resize(mul(x, w)), target_h, target_w);
}

// --------------------------------------------------------------------- SSM

SsmBlock SsmBlock::make(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t state) {
  if (state == 0) throw ValidationError("ssm block: state dim must be >= 1");
  SsmBlock s;
  s.norm = LayerNorm::make(ps, name + ".norm", dim, 1);
  s.delta = Linear::make(ps, name + ".delta", dim, dim);
  s.b = Linear::make(ps, name + ".B", dim, state);
  s.c = Linear::make(ps, name + ".C", dim, state);
  s.out = Linear::make(ps, name + ".out", dim, dim);
  std::vector<double> a(dim * state);
  for (std::size_t d = 0; d < dim; ++d)
    for (std::size_t n = 0; n < state; ++n) a[d * state + n] = std::log(double(n + 1));
  s.a_log = ps.constant(name + ".A_log", {dim, state}, 0.0);
  std::copy(a.begin(), a.end(), s.a_log.mutable_data().begin());
  s.skip = ps.constant(name + ".skip", {dim}, 1.0);
  return s;
}

Tensor SsmBlock::operator()(const Tensor& x) const {
  if (x.rank() != 2) throw ValidationError("ssm block: expected [T,D], got " + shape_str(x.shape()));
  const Tensor u = norm(x);
  const Tensor dt = softplus(delta(u));
  for (double v : dt.data()) {
    if (!std::isfinite(v)) throw DivergenceError("ssm block: non-finite step size", -1);
  }
  const Tensor y = selective_scan(u, dt, neg(exp(a_log)), b(u), c(u), skip);
  return add(x, out(y));
}

// ------------------------------------------------------------------- model

Model::Model(PdvfnConfig cfg) : cfg_(std::move(cfg)), ps_(cfg_.seed) {
  cfg_.validate();
  const auto& a = cfg_.acr;
  conv1_ = Conv1d::make(ps_, "acr.conv1", 1, a.channels[0], a.kernels[0], a.strides[0], a.kernels[0] / 2);
  conv2_ = Conv1d::make(ps_, "acr.conv2", a.channels[0], a.channels[1], a.kernels[1], a.strides[1], a.kernels[1] / 2);
  cbam1_ = Cbam::make(ps_, "acr.cbam1", a.channels[1], a.cbam_reduction, a.cbam_kernel, false);
  conv3_ = Conv1d::make(ps_, "acr.conv3", a.channels[1], a.channels[2], a.kernels[2], a.strides[2], a.kernels[2] / 2);
  cbam2_ = Cbam::make(ps_, "acr.cbam2", a.channels[2], a.cbam_reduction, a.cbam_kernel, false);
  gru_ = BiGru::make(ps_, "acr.gru", a.channels[2], a.gru_hidden, a.gru_layers);
  attn_ = MultiHeadAttention::make(ps_, "acr.attn", 2 * a.gru_hidden, a.heads);
  acr_fc_ = Linear::make(ps_, "acr.fc", 2 * a.gru_hidden, a.output_dim);

  const auto& p = cfg_.pmtf;
  mfpf_ = MfpfUnit::make(ps_, "pmtf.mfpf", 1, p.mfpf_channels);
  rc_ = RcBlock::make(ps_, "pmtf.rc", 1, p.rc_ratio, p.rc_channels, p.trimmed_bins());
  ffc_ = FfcUnit::make(ps_, "pmtf.ffc", 3 * p.mfpf_channels + p.rc_channels, p.ffc_channels, p.target_h, p.target_w);
  seq_proj_ = Linear::make(ps_, "pmtf.proj", p.ffc_channels * p.target_w, p.ssm_dim);
  for (std::size_t i = 0; i < p.ssm_blocks; ++i) {
    ssm_.push_back(SsmBlock::make(ps_, "pmtf.ssm" + std::to_string(i), p.ssm_dim, p.ssm_state));
  }
  pmtf_fc_ = Linear::make(ps_, "pmtf.fc", p.ssm_dim, p.output_dim);

  head1_ = Linear::make(ps_, "head.fc1", a.output_dim + p.output_dim, cfg_.head.hidden);
  head2_ = Linear::make(ps_, "head.fc2", cfg_.head.hidden, cfg_.head.outputs());
}

Tensor Model::acr_forward(const Tensor& vector_view) {
  const std::size_t len = cfg_.acr.input_length;
  Tensor x = stage("acr", "input", [&] { return as_row(vector_view, len, "vector view"); });
  x = stage("acr", "conv1", [&] { return relu(conv1_(x)); });
  x = stage("acr", "conv2", [&] { return relu(conv2_(x)); });
  x = stage("acr", "cbam1", [&] { return cbam1_(x); });
  x = stage("acr", "conv3", [&] { return relu(conv3_(x)); });
  x = stage("acr", "cbam2", [&] { return cbam2_(x); });
  // Channels become features, positions become steps.
  x = stage("acr", "reshape", [&] { return transpose(x); });
  x = stage("acr", "gru", [&] { return gru_(x); });
  x = stage("acr", "attention", [&] { return attn_(x); });
  x = stage("acr", "pool", [&] { return reshape(mean_axis(x, 0), {1, x.dim(1)}); });
  return stage("acr", "fc", [&] { return relu(acr_fc_(x)); });
}

Tensor Model::pmtf_forward(const Tensor& map_view, bool training) {
  const auto& p = cfg_.pmtf;
  Tensor x = stage("pmtf", "input", [&] {
    if (map_view.numel() != p.map_frames * p.map_bins) {
      throw ValidationError("expected a " + std::to_string(p.map_frames) + "x" + std::to_string(p.map_bins) +
                            " map, got shape " + shape_str(map_view.shape()));
    }
    Tensor m = reshape(map_view, {1, p.map_frames, p.map_bins});
    if (p.trimmed_frames() != p.map_frames) m = narrow(m, 1, 0, p.trimmed_frames());
    if (p.trimmed_bins() != p.map_bins) m = narrow(m, 2, 0, p.trimmed_bins());
    return m;
  });
  const Tensor fused = stage("pmtf", "mfpf+rc", [&] { return concat({mfpf_(x), rc_(x, training)}, 0); });
  x = stage("pmtf", "ffc", [&] { return ffc_(fused); });
  x = stage("pmtf", "flatten", [&] {
    const std::size_t ch = x.dim(0), th = x.dim(1), tw = x.dim(2);
    return seq_proj_(reshape(permute(x, {1, 0, 2}), {th, ch * tw}));
  });
  for (std::size_t i = 0; i < ssm_.size(); ++i) {
    x = stage("pmtf", "ssm", [&] { return ssm_[i](x); });
  }
  x = stage("pmtf", "pool", [&] { return reshape(mean_axis(x, 0), {1, x.dim(1)}); });
  return stage("pmtf", "fc", [&] { return relu(pmtf_fc_(x)); });
}

ModelOutput Model::head_forward(const Tensor& features) const {
  const Tensor f = as_row(features, cfg_.acr.output_dim + cfg_.pmtf.output_dim, "head features");
  const Tensor y = head2_(relu(head1_(f)));
  ModelOutput out;
  if (cfg_.head.task == Task::classification) {
    out.logits = y;
  } else {
    const std::size_t t = cfg_.head.targets.size();
    out.mu = narrow(y, 1, 0, t);
    out.log_var = narrow(y, 1, t, t);
  }
  return out;
}

ModelOutput Model::forward(const Tensor& vector_view, const Tensor& map_view, bool training) {
  if (!vector_view.defined() || !map_view.defined()) throw ValidationError("pdvfn: both views are required");
  const Tensor a = acr_forward(vector_view);
  const Tensor p = pmtf_forward(map_view, training);
  return head_forward(concat({a, p}, 1));
}

}  // namespace wsl::pdvfn
