#include "wsl/commands.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <tuple>

#include "wsl/checkpoint.hpp"
#include "wsl/corpus.hpp"
#include "wsl/error.hpp"
#include "wsl/metrics.hpp"
#include "wsl/preprocess.hpp"
#include "wsl/rng.hpp"
#include "wsl/synth.hpp"
#include "wsl/train.hpp"

namespace wsl::cli {

namespace fs = std::filesystem;
using pdvfn::Task;

namespace {

constexpr std::string_view kManifestMagic = "# wsl run manifest v1";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

const std::string& need_arg(const Invocation& inv, const std::string& name) {
  const auto it = inv.args.find(name);
  if (it == inv.args.end() || it->second.empty()) {
    throw UsageError(inv.command + ": missing required --" + name);
  }
  return it->second;
}

std::string arg_or(const Invocation& inv, const std::string& name, const std::string& fallback) {
  const auto it = inv.args.find(name);
  return it == inv.args.end() || it->second.empty() ? fallback : it->second;
}

io::KeyValue config_or_empty(const Invocation& inv, const std::string& name) {
  const auto it = inv.configs.find(name);
  return it == inv.configs.end() ? io::KeyValue{} : it->second;
}

// Stage outputs are collected here, then checksummed into the manifest.
struct Outputs {
  fs::path dir;
  std::vector<std::string> names;

  fs::path add(const std::string& name) {
    names.push_back(name);
    return dir / name;
  }
  void write(const std::string& name, std::string_view text) { io::write_text(add(name), text); }
};

void record_corpus_inputs(RunManifest& m, const fs::path& dir) {
  const auto manifest = dir / corpus::kManifestName;
  if (!fs::exists(manifest)) throw UsageError("no corpus manifest in " + dir.string());
  m.inputs[manifest.string()] = io::sha256_file(manifest);
  const auto header = corpus::read_manifest(manifest);
  const auto data = dir / header.data_file();
  if (fs::exists(data)) m.inputs[data.string()] = io::sha256_file(data);
}

corpus::Corpus load_stage(const fs::path& dir, const std::string& stage) {
  auto c = corpus::load_corpus(dir);
  const auto got = c.manifest.header.get_string("stage", "");
  if (got != stage) {
    throw ValidationError(dir.string() + ": expected a " + stage + " corpus, found stage '" + got + "'");
  }
  return c;
}

void cmd_generate(const Invocation& inv, RunManifest& m, Outputs& out) {
  const auto found = inv.configs.find("generator");
  if (found == inv.configs.end()) throw UsageError("generate: --config is required");
  auto cfg = synth::GeneratorConfig::from_kv(found->second);
  if (inv.seed) cfg.seed = stage_seed(*inv.seed, "synth");
  cfg.validate();
  const std::uint64_t split_seed = stage_seed(cfg.seed, "split");
  m.seeds["synth"] = cfg.seed;
  m.seeds["split"] = split_seed;

  const auto spectra = synth::generate_dataset(cfg);
  std::vector<catalog::ClassLabel> labels;
  std::vector<std::uint64_t> keys;
  for (const auto& s : spectra) {
    labels.push_back(*s.class_label);
    keys.push_back(s.id);
  }
  const auto splits = catalog::stratified_split(labels, keys, catalog::SplitRatios{}, split_seed);

  corpus::Corpus c;
  auto& h = c.manifest.header;
  h.set("stage", "raw");
  h.set("data_file", kFluxName);
  h.set("width", std::to_string(cfg.grid.n_points));
  h.set("grid_min", io::format_double(cfg.grid.lambda_min));
  h.set("grid_max", io::format_double(cfg.grid.lambda_max));
  h.set("grid_points", std::to_string(cfg.grid.n_points));
  h.set("seed", std::to_string(cfg.seed));
  h.set("split_seed", std::to_string(split_seed));
  c.values.reserve(spectra.size() * cfg.grid.n_points);
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    const auto& s = spectra[i];
    c.manifest.records.push_back({s.id, s.params, s.snr, *s.class_label, splits[i]});
    c.values.insert(c.values.end(), s.fluxes.begin(), s.fluxes.end());
  }
  for (const auto& p : corpus::save_corpus(out.dir, c)) out.names.push_back(p.filename().string());
}

void cmd_preprocess(const Invocation& inv, RunManifest& m, Outputs& out) {
  const fs::path in = need_arg(inv, "input");
  record_corpus_inputs(m, in);
  auto cfg = prep::PipelineConfig::from_kv(config_or_empty(inv, "pipeline"));
  const auto raw = load_stage(in, "raw");
  const auto& h = raw.manifest.header;
  synth::WavelengthGrid grid;
  grid.lambda_min = h.get_double("grid_min", 0.0);
  grid.lambda_max = h.get_double("grid_max", 0.0);
  grid.n_points = static_cast<std::size_t>(h.get_int("grid_points", 0));
  if (grid.n_points != raw.width()) throw IntegrityError(in.string() + ": grid_points does not match row width");
  if (!cfg.has_range()) {
    double lo = 0.0, hi = 0.0;
    for (const auto& r : raw.manifest.records) {
      lo = std::min(lo, r.params.rv);
      hi = std::max(hi, r.params.rv);
    }
    std::tie(cfg.range_min, cfg.range_max) = prep::common_range(grid, lo, hi);
  }
  cfg.validate();

  const auto nodes = grid.nodes();
  corpus::Corpus c;
  c.manifest = raw.manifest;
  auto& oh = c.manifest.header;
  oh.set("stage", "processed");
  oh.set("data_file", kFluxName);
  oh.set("width", std::to_string(cfg.target_length));
  oh.set("range_min", io::format_double(cfg.range_min));
  oh.set("range_max", io::format_double(cfg.range_max));
  c.values.reserve(raw.size() * cfg.target_length);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& rec = raw.manifest.records[i];
    synth::RawSpectrum spec;
    spec.id = rec.id;
    spec.wavelengths = nodes;
    const auto row = raw.row(i);
    spec.fluxes.assign(row.begin(), row.end());
    spec.params = rec.params;
    spec.snr = rec.snr;
    spec.class_label = rec.label;
    try {
      const auto p = prep::run_pipeline(spec, cfg);
      c.values.insert(c.values.end(), p.values.begin(), p.values.end());
    } catch (const Error& e) {
      throw ValidationError("record id " + std::to_string(rec.id) + ": " + e.what());
    }
  }
  for (const auto& p : corpus::save_corpus(out.dir, c)) out.names.push_back(p.filename().string());
}

void cmd_train(const Invocation& inv, RunManifest& m, Outputs& out) {
  const fs::path in = need_arg(inv, "input");
  record_corpus_inputs(m, in);
  auto model_cfg = pdvfn::PdvfnConfig::from_kv(config_or_empty(inv, "model"));
  auto train_cfg = train::TrainConfig::from_kv(config_or_empty(inv, "train"));
  if (auto t = inv.args.find("task"); t != inv.args.end()) model_cfg.head.task = pdvfn::parse_task(t->second);
  if (auto t = inv.args.find("targets"); t != inv.args.end()) model_cfg.head.targets = pdvfn::parse_targets(t->second);
  if (inv.seed) {
    model_cfg.seed = stage_seed(*inv.seed, "model");
    train_cfg.seed = stage_seed(*inv.seed, "shuffle");
  }
  model_cfg.validate();
  m.seeds["model"] = model_cfg.seed;
  m.seeds["shuffle"] = train_cfg.seed;

  const auto data = load_stage(in, "processed");
  const bool quiet = arg_or(inv, "quiet", "0") == "1";
  const auto result = train::train_model(data, model_cfg, train_cfg, [&](const train::EpochLog& e) {
    if (!quiet) {
      std::cerr << "epoch " << e.epoch << " lr " << fmt(e.lr) << " train " << fmt(e.train_loss) << " val "
                << fmt(e.val_loss) << "\n";
    }
  });
  out.write(kCheckpointName, result.best_checkpoint);
  out.write(kLossLogName, train::format_loss_log(result.log));
}

struct SplitView {
  std::string name;
  std::vector<std::size_t> idx;  // positions into the prediction rows
};

void cmd_evaluate(const Invocation& inv, RunManifest& m, Outputs& out) {
  const fs::path in = need_arg(inv, "input");
  const fs::path ckpt_path = need_arg(inv, "checkpoint");
  record_corpus_inputs(m, in);
  if (!fs::exists(ckpt_path)) throw UsageError("checkpoint not found: " + ckpt_path.string());
  m.inputs[ckpt_path.string()] = io::sha256_file(ckpt_path);
  auto ckpt = train::load_checkpoint(ckpt_path);
  const auto data = load_stage(in, "processed");
  const auto bin_split = catalog::parse_split(arg_or(inv, "split", "test"));

  std::vector<double> snr_edges;
  for (const auto& s : split(arg_or(inv, "snr_edges", "8,20,35,50,80,120,200,400"), ',')) snr_edges.push_back(std::stod(s));
  const auto density_bins = static_cast<std::size_t>(std::stoul(arg_or(inv, "density_bins", "5")));

  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto pred = train::predict(*ckpt.model, ckpt.meta, data, rows);
  const auto& recs = data.manifest.records;
  const bool cls = pred.task == Task::classification;

  std::vector<SplitView> views;
  for (auto s : {catalog::Split::train, catalog::Split::val, catalog::Split::test}) {
    SplitView v{std::string(catalog::split_name(s)), {}};
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (recs[i].split == s) v.idx.push_back(i);
    views.push_back(std::move(v));
  }

  // Per-sample error used for binning: combined normalized absolute error for
  // regression, 1 - p(true class) for classification.
  auto truth = [&](std::size_t i, std::size_t k) { return train::target_value(recs[i], pred.targets[k]); };

  std::ostringstream metrics;
  metrics << "task=" << pdvfn::task_name(pred.task) << "\n";
  if (!cls) metrics << "targets=" << pdvfn::targets_string(pred.targets) << "\n";
  metrics << "checkpoint_best_epoch=" << ckpt.meta.get_string("best_epoch", "") << "\n";
  for (const auto& v : views) {
    metrics << v.name << ".n=" << v.idx.size() << "\n";
    if (v.idx.empty()) continue;
    if (cls) {
      std::vector<double> scores;
      std::vector<std::size_t> targets;
      for (auto i : v.idx) {
        scores.insert(scores.end(), pred.probs[i].begin(), pred.probs[i].end());
        targets.push_back(static_cast<std::size_t>(recs[i].label));
      }
      const auto cm = metrics::classification_metrics(scores, targets, 3);
      metrics << v.name << ".auc=" << fmt(cm.auc) << "\n" << v.name << ".f1=" << fmt(cm.f1) << "\n";
      metrics << v.name << ".g_mean=" << fmt(cm.g_mean) << "\n" << v.name << ".mcc=" << fmt(cm.mcc) << "\n";
      metrics << v.name << ".absent_class_warning=" << (cm.warning ? 1 : 0) << "\n";
    } else {
      for (std::size_t k = 0; k < pred.targets.size(); ++k) {
        std::vector<double> p, t;
        for (auto i : v.idx) {
          p.push_back(pred.mu[i][k]);
          t.push_back(truth(i, k));
        }
        const auto rm = metrics::regression_metrics(p, t);
        const auto key = v.name + "." + pdvfn::target_name(pred.targets[k]);
        metrics << key << ".mu=" << fmt(rm.mu_err) << "\n" << key << ".sigma=" << fmt(rm.sigma_err) << "\n";
        metrics << key << ".mae=" << fmt(rm.mae) << "\n";
      }
    }
  }
  out.write(kMetricsName, metrics.str());

  std::ostringstream table;
  table << "id\tsplit\tsnr\tclass";
  if (cls) {
    table << "\tp_nmp\tp_cemp\tp_cnmp";
  } else {
    for (auto t : pred.targets) {
      const auto n = pdvfn::target_name(t);
      table << "\t" << n << "_true\t" << n << "_mu\t" << n << "_sigma";
    }
  }
  table << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table << recs[i].id << "\t" << catalog::split_name(recs[i].split) << "\t" << fmt(recs[i].snr) << "\t"
          << static_cast<int>(recs[i].label);
    if (cls) {
      for (double p : pred.probs[i]) table << "\t" << fmt(p);
    } else {
      for (std::size_t k = 0; k < pred.targets.size(); ++k)
        table << "\t" << fmt(truth(i, k)) << "\t" << fmt(pred.mu[i][k]) << "\t" << fmt(pred.sigma[i][k]);
    }
    table << "\n";
  }
  out.write(kPredictionsName, table.str());

  const auto& sel = views[static_cast<std::size_t>(bin_split)].idx;
  if (sel.empty()) throw ValidationError("evaluate: split '" + arg_or(inv, "split", "test") + "' is empty");
  std::vector<double> err, snr, feh, cfe;
  std::vector<std::vector<double>> abs_err(cls ? 0 : pred.targets.size());
  if (cls) {
    for (auto i : sel) err.push_back(1.0 - pred.probs[i][static_cast<std::size_t>(recs[i].label)]);
  } else {
    std::vector<std::vector<double>> e(pred.targets.size());
    for (std::size_t k = 0; k < pred.targets.size(); ++k)
      for (auto i : sel) {
        e[k].push_back(pred.mu[i][k] - truth(i, k));
        abs_err[k].push_back(std::abs(e[k].back()));
      }
    err = metrics::normalized_error_sum(e);
  }
  for (auto i : sel) {
    snr.push_back(recs[i].snr);
    feh.push_back(recs[i].params.fe_h);
    cfe.push_back(catalog::carbon_ratio(recs[i].params.c_h, recs[i].params.fe_h));
  }

  std::ostringstream sb;
  sb << "lo,hi,count,error";
  if (!cls)
    for (auto t : pred.targets) sb << ",mae_" << pdvfn::target_name(t);
  sb << "\n";
  const auto bins = metrics::snr_binned_report(err, snr, snr_edges);
  std::vector<std::vector<metrics::SnrBin>> per_target;
  for (const auto& a : abs_err) per_target.push_back(metrics::snr_binned_report(a, snr, snr_edges));
  for (std::size_t b = 0; b < bins.size(); ++b) {
    sb << fmt(bins[b].lo) << "," << fmt(bins[b].hi) << "," << bins[b].count << "," << fmt(bins[b].mean);
    for (const auto& pt : per_target) sb << "," << fmt(pt[b].mean);
    sb << "\n";
  }
  out.write(kSnrBinsName, sb.str());

  const auto [fx_lo, fx_hi] = std::minmax_element(feh.begin(), feh.end());
  const auto [cy_lo, cy_hi] = std::minmax_element(cfe.begin(), cfe.end());
  if (!(*fx_hi > *fx_lo) || !(*cy_hi > *cy_lo)) throw ValidationError("evaluate: density grid needs a spread of abundances");
  const auto xe = metrics::linear_edges(*fx_lo, *fx_hi, density_bins);
  const auto ye = metrics::linear_edges(*cy_lo, *cy_hi, density_bins);
  std::ostringstream db;
  db << "ix,iy,fe_h_lo,fe_h_hi,c_fe_lo,c_fe_hi,count,error\n";
  for (const auto& c : metrics::density_binned_report(err, feh, cfe, xe, ye)) {
    db << c.ix << "," << c.iy << "," << fmt(c.x_lo) << "," << fmt(c.x_hi) << "," << fmt(c.y_lo) << "," << fmt(c.y_hi)
       << "," << c.count << "," << fmt(c.mean_error) << "\n";
  }
  out.write(kDensityBinsName, db.str());
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& origin) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IntegrityError(origin + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(const fs::path& path, char sep) {
  if (!fs::exists(path)) throw ValidationError("report: " + path.string() + " not found; run evaluate first");
  std::istringstream in(io::read_text(path));
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError(path.string() + ": empty table");
  t.header = split(line, sep);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line, sep);
    if (cells.size() != t.header.size()) throw IntegrityError(path.string() + ": ragged row '" + line + "'");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void cmd_report(const Invocation& inv, RunManifest& m, Outputs& out) {
  const fs::path in = need_arg(inv, "input");
  if (!fs::is_directory(in)) throw UsageError("report: no such directory " + in.string());
  for (const char* name : {kSnrBinsName, kDensityBinsName, kPredictionsName}) {
    const auto p = in / name;
    if (!fs::exists(p)) throw ValidationError("report: " + p.string() + " not found; run evaluate first");
    m.inputs[p.string()] = io::sha256_file(p);
  }

  const auto bins = read_table(in / kSnrBinsName, ',');
  std::ostringstream curve;
  curve << "snr_center,count,error";
  for (std::size_t c = 4; c < bins.header.size(); ++c) curve << "," << bins.header[c];
  curve << "\n";
  for (const auto& r : bins.rows) {
    if (r[2] == "0") continue;
    curve << fmt(0.5 * (std::stod(r[0]) + std::stod(r[1])));
    for (std::size_t c = 2; c < r.size(); ++c) curve << "," << r[c];
    curve << "\n";
  }
  out.write(kMaeVsSnrName, curve.str());

  const auto cells = read_table(in / kDensityBinsName, ',');
  const auto cix = cells.column("ix", "density"), ciy = cells.column("iy", "density");
  const auto cerr = cells.column("error", "density"), ccount = cells.column("count", "density");
  std::size_t nx = 0, ny = 0;
  for (const auto& r : cells.rows) {
    nx = std::max<std::size_t>(nx, std::stoul(r[cix]) + 1);
    ny = std::max<std::size_t>(ny, std::stoul(r[ciy]) + 1);
  }
  std::vector<std::string> err_grid(nx * ny, "nan"), count_grid(nx * ny, "0");
  std::vector<double> xc(nx), yc(ny);
  for (const auto& r : cells.rows) {
    const auto i = std::stoul(r[cix]), j = std::stoul(r[ciy]);
    err_grid[i * ny + j] = r[cerr];
    count_grid[i * ny + j] = r[ccount];
    xc[i] = 0.5 * (std::stod(r[2]) + std::stod(r[3]));
    yc[j] = 0.5 * (std::stod(r[4]) + std::stod(r[5]));
  }
  std::ostringstream grid;
  for (const auto* g : {&count_grid, &err_grid}) {
    grid << (g == &count_grid ? "count" : "error") << " c_fe\\fe_h";
    for (double x : xc) grid << "," << fmt(x);
    grid << "\n";
    for (std::size_t j = ny; j-- > 0;) {
      grid << fmt(yc[j]);
      for (std::size_t i = 0; i < nx; ++i) grid << "," << (*g)[i * ny + j];
      grid << "\n";
    }
  }
  out.write(kDensityGridName, grid.str());

  const auto preds = read_table(in / kPredictionsName, '\t');
  const auto csnr = preds.column("snr", "predictions");
  std::vector<double> snr;
  for (const auto& r : preds.rows) snr.push_back(std::stod(r[csnr]));
  if (snr.empty()) throw ValidationError("report: predictions table is empty");
  const double width = std::stod(arg_or(inv, "hist_width", "10"));
  if (!(width > 0.0)) throw UsageError("report: --hist-width must be positive");
  const double top = width * std::ceil(*std::max_element(snr.begin(), snr.end()) / width + 1e-12);
  std::vector<double> edges;
  for (double e = 0.0; e <= top + 0.5 * width; e += width) edges.push_back(e);
  const std::vector<double> ones(snr.size(), 1.0);
  const auto hist = metrics::snr_binned_report(ones, snr, edges);
  std::ostringstream hs;
  hs << "lo,hi,count,fraction,cumulative\n";
  double cum = 0.0;
  for (const auto& b : hist) {
    const double f = double(b.count) / double(snr.size());
    cum += f;
    hs << fmt(b.lo) << "," << fmt(b.hi) << "," << b.count << "," << fmt(f) << "," << fmt(cum) << "\n";
  }
  const auto below = std::count_if(snr.begin(), snr.end(), [](double s) { return s < 50.0; });
  hs << "# fraction_below_50=" << fmt(double(below) / double(snr.size())) << "\n";
  out.write(kSnrHistName, hs.str());
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return mix64(seed ^ fnv1a(stage)); }

std::string RunManifest::serialize() const {
  io::KeyValue kv;
  kv.set("command", invocation.command);
  kv.set("tool_version", tool_version);
  if (invocation.seed) kv.set("seed", std::to_string(*invocation.seed));
  for (const auto& [k, v] : invocation.args) kv.set("arg." + k, v);
  for (const auto& [name, cfg] : invocation.configs)
    for (const auto& [k, v] : cfg.entries()) kv.set("config." + name + "." + k, v);
  for (const auto& [k, v] : seeds) kv.set("stage_seed." + k, std::to_string(v));
  for (const auto& [k, v] : inputs) kv.set("input." + k, v);
  for (const auto& [k, v] : outputs) kv.set("output." + k, v);
  return std::string(kManifestMagic) + "\n" + kv.serialize();
}

RunManifest RunManifest::parse(const std::string& text, const std::string& origin) {
  if (text.rfind(kManifestMagic, 0) != 0) throw IntegrityError(origin + ": not a run manifest");
  const auto kv = io::KeyValue::parse(text, origin);
  RunManifest m;
  for (const auto& [k, v] : kv.entries()) {
    auto after = [&](std::string_view prefix) { return k.substr(prefix.size()); };
    if (k == "command") m.invocation.command = v;
    else if (k == "tool_version") m.tool_version = v;
    else if (k == "seed") m.invocation.seed = std::stoull(v);
    else if (k.rfind("arg.", 0) == 0) m.invocation.args[after("arg.")] = v;
    else if (k.rfind("config.", 0) == 0) {
      const auto rest = after("config.");
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw IntegrityError(origin + ": malformed key '" + k + "'");
      m.invocation.configs[rest.substr(0, dot)].set(rest.substr(dot + 1), v);
    } else if (k.rfind("stage_seed.", 0) == 0) m.seeds[after("stage_seed.")] = std::stoull(v);
    else if (k.rfind("input.", 0) == 0) m.inputs[after("input.")] = v;
    else if (k.rfind("output.", 0) == 0) m.outputs[after("output.")] = v;
    else throw IntegrityError(origin + ": unknown key '" + k + "'");
  }
  if (m.invocation.command.empty()) throw IntegrityError(origin + ": no command recorded");
  return m;
}

RunManifest RunManifest::load(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("run manifest not found: " + path.string());
  return parse(io::read_text(path), path.string());
}

RunManifest run(const Invocation& inv, const fs::path& out) {
  RunManifest m;
  m.invocation = inv;
  fs::create_directories(out);
  Outputs o{out, {}};
  if (inv.command == "generate") cmd_generate(inv, m, o);
  else if (inv.command == "preprocess") cmd_preprocess(inv, m, o);
  else if (inv.command == "train") cmd_train(inv, m, o);
  else if (inv.command == "evaluate") cmd_evaluate(inv, m, o);
  else if (inv.command == "report") cmd_report(inv, m, o);
  else throw UsageError("unknown command '" + inv.command + "'");
  for (const auto& n : o.names) m.outputs[n] = io::sha256_file(out / n);
  io::write_text(out / kRunManifestName, m.serialize());
  return m;
}

RunManifest replay(const fs::path& manifest_path, const fs::path& out) {
  const auto recorded = RunManifest::load(manifest_path);
  if (recorded.tool_version != kToolVersion) {
    throw IntegrityError("manifest was written by '" + recorded.tool_version + "', this is '" + kToolVersion + "'");
  }
  for (const auto& [path, sum] : recorded.inputs) {
    if (!fs::exists(path)) throw IntegrityError("replay: input " + path + " is missing");
    if (io::sha256_file(path) != sum) throw IntegrityError("replay: input " + path + " changed since the run");
  }
  const auto fresh = run(recorded.invocation, out);
  std::string diff;
  for (const auto& [name, sum] : recorded.outputs) {
    const auto it = fresh.outputs.find(name);
    if (it == fresh.outputs.end()) diff += " " + name + " (not produced)";
    else if (it->second != sum) diff += " " + name;
  }
  for (const auto& [name, sum] : fresh.outputs)
    if (!recorded.outputs.count(name)) diff += " " + name + " (unexpected)";
  if (!diff.empty()) throw IntegrityError("replay: outputs differ from the manifest:" + diff);
  return fresh;
}

}  // namespace wsl::cli
