#include "wsl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "wsl/checkpoint.hpp"
#include "wsl/dualview.hpp"
#include "wsl/error.hpp"
#include "wsl/objectives.hpp"
#include "wsl/ops.hpp"
#include "wsl/rng.hpp"

namespace wsl::train {

using pdvfn::Task;

namespace {

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + io::format_double(x);
  return s;
}

struct Batch {
  std::vector<std::size_t> rows;
  std::vector<SampleViews> views;
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> targets;  // normalized
};

Batch prepare(const corpus::Corpus& data, std::span<const std::size_t> rows, const pdvfn::PdvfnConfig& mc,
              std::size_t offset, const TargetScaling* scaling) {
  Batch b;
  b.rows.assign(rows.begin(), rows.end());
  for (auto r : rows) {
    const auto& rec = data.manifest.records[r];
    for (double v : data.row(r)) {
      if (!std::isfinite(v)) throw ValidationError("record id " + std::to_string(rec.id) + ": non-finite flux value");
    }
    b.views.push_back(make_views(data.row(r), mc, offset));
    b.labels.push_back(static_cast<std::size_t>(rec.label));
    if (scaling) {
      std::vector<double> t;
      for (std::size_t k = 0; k < mc.head.targets.size(); ++k) {
        t.push_back((target_value(rec, mc.head.targets[k]) - scaling->mean[k]) / scaling->std[k]);
      }
      b.targets.push_back(std::move(t));
    }
  }
  return b;
}

struct LossSpec {
  Task task;
  std::vector<double> alpha;
  double gamma = 2.0;
};

tc::Tensor sample_loss(pdvfn::Model& model, const Batch& b, std::size_t i, const LossSpec& spec, bool training) {
  const auto out = model.forward(b.views[i].vector_view, b.views[i].map_view, training);
  if (spec.task == Task::classification) {
    const std::size_t t = b.labels[i];
    return objectives::focal_loss(out.logits, std::span<const std::size_t>(&t, 1), spec.alpha, spec.gamma).scalar;
  }
  const auto& y = b.targets[i];
  return objectives::gaussian_nll(tc::Tensor::from({1, y.size()}, y), out.mu, out.log_var).scalar;
}

}  // namespace

SampleViews make_views(std::span<const double> processed_row, const pdvfn::PdvfnConfig& cfg, std::size_t offset) {
  const std::size_t len = cfg.acr.input_length;
  if (offset + len > processed_row.size()) {
    throw ValidationError("model expects " + std::to_string(len) + " input values from offset " +
                          std::to_string(offset) + ", but corpus rows have " + std::to_string(processed_row.size()));
  }
  const auto window = processed_row.subspan(offset, len);
  const auto map = dualview::log_compress(dualview::stft_magnitude(window, cfg.stft), cfg.log_eps);
  SampleViews v;
  v.vector_view = tc::Tensor::from({len}, std::vector<double>(window.begin(), window.end()));
  v.map_view = tc::Tensor::from({map.frames, map.bins}, map.magnitudes);
  return v;
}

double target_value(const corpus::Record& r, pdvfn::Target t) {
  switch (t) {
    case pdvfn::Target::teff: return r.params.t_eff;
    case pdvfn::Target::logg: return r.params.log_g;
    case pdvfn::Target::feh: return r.params.fe_h;
    case pdvfn::Target::ch: return r.params.c_h;
  }
  return 0.0;
}

TargetScaling TargetScaling::fit(const corpus::Corpus& c, std::span<const std::size_t> rows,
                                 const std::vector<pdvfn::Target>& targets) {
  if (rows.empty()) throw ValidationError("target scaling needs at least one training sample");
  TargetScaling s;
  for (auto t : targets) {
    double m = 0.0;
    for (auto r : rows) m += target_value(c.manifest.records[r], t);
    m /= double(rows.size());
    double v = 0.0;
    for (auto r : rows) {
      const double d = target_value(c.manifest.records[r], t) - m;
      v += d * d;
    }
    const double sd = std::sqrt(v / double(rows.size()));
    s.mean.push_back(m);
    s.std.push_back(sd > 0.0 ? sd : 1.0);
  }
  return s;
}

void TargetScaling::write_meta(io::KeyValue& meta) const {
  meta.set("target_mean", join(mean));
  meta.set("target_std", join(std));
}

TargetScaling TargetScaling::from_meta(const io::KeyValue& meta) {
  TargetScaling s;
  s.mean = meta.get_doubles("target_mean", {});
  s.std = meta.get_doubles("target_std", {});
  if (s.mean.size() != s.std.size()) throw IntegrityError("checkpoint target scaling is inconsistent");
  return s;
}

std::string format_loss_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch\tlr\ttrain_loss\tval_loss\n";
  for (const auto& e : log) {
    out << e.epoch << '\t' << io::format_double(e.lr) << '\t' << io::format_double(e.train_loss) << '\t'
        << io::format_double(e.val_loss) << '\n';
  }
  return out.str();
}

TrainResult train_model(const corpus::Corpus& data, const pdvfn::PdvfnConfig& model_cfg, const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  const auto train_rows = corpus::indices_of(data.manifest, catalog::Split::train);
  const auto val_rows = corpus::indices_of(data.manifest, catalog::Split::val);
  if (train_rows.empty()) throw ValidationError("training split is empty");
  if (val_rows.empty()) throw ValidationError("validation split is empty");

  pdvfn::Model model(model_cfg);
  const Task task = model_cfg.head.task;

  TrainResult result;
  io::KeyValue& meta = result.meta;
  meta.set("task", pdvfn::task_name(task));
  meta.set("input_offset", std::to_string(cfg.input_offset));

  TargetScaling scaling;
  LossSpec spec{task, {}, cfg.focal_gamma};
  if (task == Task::regression) {
    scaling = TargetScaling::fit(data, train_rows, model_cfg.head.targets);
    scaling.write_meta(meta);
  } else {
    std::vector<std::size_t> labels;
    for (auto r : train_rows) labels.push_back(static_cast<std::size_t>(data.manifest.records[r].label));
    spec.alpha = cfg.focal_alpha.empty() ? objectives::inverse_frequency_alpha(labels, 3) : cfg.focal_alpha;
    meta.set("focal_alpha", join(spec.alpha));
    meta.set("focal_gamma", io::format_double(cfg.focal_gamma));
  }
  const TargetScaling* sp = task == Task::regression ? &scaling : nullptr;
  const Batch train_set = prepare(data, train_rows, model_cfg, cfg.input_offset, sp);
  const Batch val_set = prepare(data, val_rows, model_cfg, cfg.input_offset, sp);

  std::vector<tc::Tensor> params;
  for (const auto& p : model.params().params()) params.push_back(p.tensor);
  AdamWState state;
  const AdamWConfig adam{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};

  std::vector<std::size_t> order(train_rows.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    try {
      EpochLog entry;
      entry.epoch = epoch;
      entry.lr = lr_schedule(epoch, cfg);
      std::iota(order.begin(), order.end(), 0);
      Rng rng = make_rng(cfg.seed, 0x5348554646ULL + static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        model.params().zero_grad();
        const double inv = 1.0 / double(stop - start);
        for (std::size_t k = start; k < stop; ++k) {
          const tc::Tensor loss = sample_loss(model, train_set, order[k], spec, true);
          const double v = loss.item();
          if (!std::isfinite(v)) {
            throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
          }
          total += v;
          tc::backward(tc::scale(loss, inv));
        }
        adamw_step(params, state, entry.lr, adam);
      }
      entry.train_loss = total / double(order.size());

      {
        tc::NoGradGuard guard;
        double vsum = 0.0;
        for (std::size_t i = 0; i < val_set.rows.size(); ++i) vsum += sample_loss(model, val_set, i, spec, false).item();
        entry.val_loss = vsum / double(val_set.rows.size());
      }
      if (!std::isfinite(entry.val_loss)) {
        throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch), epoch);
      }
      result.log.push_back(entry);
      if (result.best_epoch < 0 || entry.val_loss < result.best_val_loss) {
        result.best_epoch = epoch;
        result.best_val_loss = entry.val_loss;
        io::KeyValue m = meta;
        m.set("best_epoch", std::to_string(epoch));
        m.set("best_val_loss", io::format_double(entry.val_loss));
        result.best_checkpoint = serialize_checkpoint(model, m);
      }
      if (on_epoch) on_epoch(entry);
    } catch (const DivergenceError& e) {
      if (e.epoch() >= 0) throw;
      throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch), epoch);
    }
  }
  meta.set("best_epoch", std::to_string(result.best_epoch));
  meta.set("best_val_loss", io::format_double(result.best_val_loss));
  return result;
}

Predictions predict(pdvfn::Model& model, const io::KeyValue& meta, const corpus::Corpus& data,
                    std::span<const std::size_t> rows) {
  const auto& mc = model.config();
  const auto offset = static_cast<std::size_t>(meta.get_int("input_offset", 0));
  Predictions p;
  p.task = mc.head.task;
  p.targets = mc.head.targets;
  p.rows.assign(rows.begin(), rows.end());
  TargetScaling scaling;
  if (p.task == Task::regression) {
    scaling = TargetScaling::from_meta(meta);
    if (scaling.mean.size() != p.targets.size()) {
      throw IntegrityError("checkpoint scaling covers " + std::to_string(scaling.mean.size()) + " targets, head has " +
                           std::to_string(p.targets.size()));
    }
  }
  tc::NoGradGuard guard;
  for (auto r : rows) {
    const auto v = make_views(data.row(r), mc, offset);
    const auto out = model.forward(v.vector_view, v.map_view, false);
    if (p.task == Task::classification) {
      const auto z = out.logits.data();
      const double mx = std::max({z[0], z[1], z[2]});
      std::vector<double> e{std::exp(z[0] - mx), std::exp(z[1] - mx), std::exp(z[2] - mx)};
      const double s = e[0] + e[1] + e[2];
      for (double& x : e) x /= s;
      p.probs.push_back(e);
    } else {
      std::vector<double> mu, sigma;
      for (std::size_t k = 0; k < p.targets.size(); ++k) {
        mu.push_back(out.mu.data()[k] * scaling.std[k] + scaling.mean[k]);
        sigma.push_back(std::exp(0.5 * out.log_var.data()[k]) * scaling.std[k]);
      }
      p.mu.push_back(std::move(mu));
      p.sigma.push_back(std::move(sigma));
    }
  }
  return p;
}

}  // namespace wsl::train
