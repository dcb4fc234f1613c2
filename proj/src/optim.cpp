#include "wsl/optim.hpp"

#include <cmath>

#include "wsl/error.hpp"

namespace wsl::train {

TrainConfig TrainConfig::from_kv(const io::KeyValue& kv) {
  static constexpr std::string_view kKeys[] = {"lr0",          "decay_factor", "decay_every", "epochs",
                                               "batch_size",   "weight_decay", "beta1",       "beta2",
                                               "adam_eps",     "seed",         "focal_gamma", "focal_alpha",
                                               "input_offset"};
  kv.require_known(kKeys);
  TrainConfig c;
  c.lr0 = kv.get_double("lr0", c.lr0);
  c.decay_factor = kv.get_double("decay_factor", c.decay_factor);
  c.decay_every = static_cast<int>(kv.get_int("decay_every", c.decay_every));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  const long long bs = kv.get_int("batch_size", static_cast<long long>(c.batch_size));
  if (bs <= 0) throw ValidationError("train config: batch_size must be positive");
  c.batch_size = static_cast<std::size_t>(bs);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.focal_gamma = kv.get_double("focal_gamma", c.focal_gamma);
  c.focal_alpha = kv.get_doubles("focal_alpha", {});
  const long long off = kv.get_int("input_offset", 0);
  if (off < 0) throw ValidationError("train config: input_offset must be non-negative");
  c.input_offset = static_cast<std::size_t>(off);
  c.validate();
  return c;
}

io::KeyValue TrainConfig::to_kv() const {
  io::KeyValue kv;
  kv.set("lr0", io::format_double(lr0));
  kv.set("decay_factor", io::format_double(decay_factor));
  kv.set("decay_every", std::to_string(decay_every));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("weight_decay", io::format_double(weight_decay));
  kv.set("beta1", io::format_double(beta1));
  kv.set("beta2", io::format_double(beta2));
  kv.set("adam_eps", io::format_double(adam_eps));
  kv.set("seed", std::to_string(seed));
  kv.set("focal_gamma", io::format_double(focal_gamma));
  if (!focal_alpha.empty()) {
    std::string s;
    for (double a : focal_alpha) s += (s.empty() ? "" : ",") + io::format_double(a);
    kv.set("focal_alpha", s);
  }
  kv.set("input_offset", std::to_string(input_offset));
  return kv;
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ValidationError("train config: lr0 must be positive");
  if (!(decay_factor > 0.0)) throw ValidationError("train config: decay_factor must be positive");
  if (decay_every < 1) throw ValidationError("train config: decay_every must be >= 1");
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train config: betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be positive");
  if (!(focal_gamma >= 0.0)) throw ValidationError("train config: focal_gamma must be >= 0");
  if (!focal_alpha.empty() && focal_alpha.size() != 3) {
    throw ValidationError("train config: focal_alpha needs 3 values");
  }
  for (double a : focal_alpha) {
    if (!(a > 0.0)) throw ValidationError("train config: focal_alpha entries must be positive");
  }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("lr_schedule: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

void adamw_step(std::vector<tc::Tensor>& params, AdamWState& state, double lr, const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ValidationError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    if (state.m[k].size() != data.size()) throw ValidationError("adamw_step: parameter shape changed");
    const auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      data[i] -= lr * cfg.weight_decay * data[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace wsl::train
