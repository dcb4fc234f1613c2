#include "wsl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "wsl/error.hpp"

namespace wsl::synth {
namespace {

bool within(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

std::string driver_name(LineDriver d) {
  switch (d) {
    case LineDriver::fe_h: return "fe_h";
    case LineDriver::c_h: return "c_h";
    case LineDriver::t_eff: return "t_eff";
  }
  return "?";
}

LineDriver parse_driver(const std::string& s) {
  if (s == "fe_h") return LineDriver::fe_h;
  if (s == "c_h") return LineDriver::c_h;
  if (s == "t_eff") return LineDriver::t_eff;
  throw ValidationError("unknown line driver '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Truncated normal by rejection.
double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double v = mean + sd * normal(rng);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(mean, lo, hi);
}

}  // namespace

StellarParams StellarParams::make(double t_eff, double log_g, double fe_h, double c_h, double rv) {
  StellarParams p{t_eff, log_g, fe_h, c_h, rv};
  p.validate();
  return p;
}

bool StellarParams::in_range() const noexcept {
  return within(t_eff, 3500, 9000) && within(log_g, 0, 5.5) && within(fe_h, -4, 0.5) && within(c_h, -4, 1.5) &&
         within(rv, -500, 500);
}

void StellarParams::validate() const {
  if (!within(t_eff, 3500, 9000)) throw ValidationError("t_eff out of range [3500, 9000]");
  if (!within(log_g, 0, 5.5)) throw ValidationError("log_g out of range [0, 5.5]");
  if (!within(fe_h, -4, 0.5)) throw ValidationError("fe_h out of range [-4, 0.5]");
  if (!within(c_h, -4, 1.5)) throw ValidationError("c_h out of range [-4, 1.5]");
  if (!within(rv, -500, 500)) throw ValidationError("rv out of range [-500, 500]");
}

void RawSpectrum::validate() const {
  if (wavelengths.size() != fluxes.size()) throw ValidationError("spectrum: wavelength/flux length mismatch");
  if (wavelengths.size() < 2) throw ValidationError("spectrum: fewer than 2 samples");
  for (std::size_t i = 1; i < wavelengths.size(); ++i) {
    if (!(wavelengths[i] > wavelengths[i - 1])) throw ValidationError("spectrum: wavelengths not strictly increasing");
  }
  if (!(snr > 0)) throw ValidationError("spectrum: snr must be positive");
}

std::vector<double> WavelengthGrid::nodes() const {
  std::vector<double> out(n_points);
  const double step = (lambda_max - lambda_min) / double(n_points - 1);
  for (std::size_t i = 0; i < n_points; ++i) out[i] = lambda_min + step * double(i);
  out.back() = lambda_max;
  return out;
}

std::vector<LineSpec> default_line_catalog() {
  using D = LineDriver;
  return {
      {3883.0, 0.35, 6.0, D::c_h},   // CN band head
      {3933.7, 0.60, 3.0, D::fe_h},  // Ca II K
      {3968.5, 0.55, 3.0, D::fe_h},  // Ca II H
      {4045.8, 0.35, 1.5, D::fe_h},  // Fe I
      {4063.6, 0.30, 1.5, D::fe_h},  // Fe I
      {4101.7, 0.50, 5.0, D::t_eff}, // H delta
      {4226.7, 0.40, 1.8, D::fe_h},  // Ca I
      {4300.0, 0.45, 8.0, D::c_h},   // CH G band
      {4340.5, 0.50, 5.0, D::t_eff}, // H gamma
      {4383.5, 0.35, 1.5, D::fe_h},  // Fe I
      {4861.3, 0.50, 5.0, D::t_eff}, // H beta
      {5165.0, 0.25, 6.0, D::c_h},   // C2 Swan
      {5172.7, 0.40, 2.0, D::fe_h},  // Mg b
      {5183.6, 0.40, 2.0, D::fe_h},  // Mg b
      {5890.0, 0.40, 1.5, D::fe_h},  // Na D2
      {5895.9, 0.40, 1.5, D::fe_h},  // Na D1
      {6562.8, 0.50, 6.0, D::t_eff}, // H alpha
      {8498.0, 0.40, 2.0, D::fe_h},  // Ca II triplet
      {8542.1, 0.40, 2.0, D::fe_h},
      {8662.1, 0.40, 2.0, D::fe_h},
  };
}

std::vector<SnrComponent> default_snr_mixture() {
  // 57% of the mass below SNR 50.
  return {{8.0, 50.0, 0.57}, {50.0, 150.0, 0.30}, {150.0, 400.0, 0.13}};
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig cfg;
  cfg.snr_mixture = default_snr_mixture();
  cfg.line_catalog = default_line_catalog();
  return cfg;
}

void GeneratorConfig::validate() const {
  double total = 0.0;
  for (double p : class_proportions) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("class proportions must be finite and non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("class proportions must sum to 1");
  if (snr_mixture.empty()) throw ValidationError("snr_mixture is empty");
  double mass = 0.0;
  for (const auto& c : snr_mixture) {
    if (!(c.lo > 0.0) || !(c.hi >= c.lo) || !(c.probability >= 0.0)) {
      throw ValidationError("snr_mixture component must satisfy 0 < lo <= hi and probability >= 0");
    }
    mass += c.probability;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw ValidationError("snr_mixture probabilities must sum to 1");
  if (grid.n_points < 64) throw ValidationError("grid n_points must be >= 64");
  if (!(grid.lambda_min > 0.0) || !(grid.lambda_max > grid.lambda_min)) throw ValidationError("invalid grid bounds");
  for (const auto& line : line_catalog) {
    if (!(line.width > 0.0) || !(line.base_depth >= 0.0)) throw ValidationError("invalid line in catalog");
  }
}

double GeneratorConfig::snr_mass_below(double threshold) const {
  double mass = 0.0;
  for (const auto& c : snr_mixture) {
    if (c.hi <= threshold) mass += c.probability;
    else if (c.lo < threshold) mass += c.probability * (threshold - c.lo) / (c.hi - c.lo);
  }
  return mass;
}

GeneratorConfig GeneratorConfig::from_kv(const io::KeyValue& kv) {
  static constexpr std::string_view kKeys[] = {
      "n_samples",  "class_proportions", "snr_lo",     "snr_hi",     "snr_prob",      "grid_min",
      "grid_max",   "grid_points",       "seed",       "lines",      "t_eff_mean",    "t_eff_sd",
      "log_g_mean", "log_g_sd",          "fe_h_mean",  "fe_h_sd",    "c_fe_mean",     "c_fe_sd",
      "rv_sd",      "metal_poor_below",  "cemp_at_least"};
  kv.require_known(kKeys);
  auto cfg = defaults();
  cfg.n_samples = static_cast<std::size_t>(kv.get_int("n_samples", static_cast<long long>(cfg.n_samples)));
  const auto props = kv.get_doubles("class_proportions", {cfg.class_proportions.begin(), cfg.class_proportions.end()});
  if (props.size() != 3) throw ValidationError("class_proportions needs exactly 3 values");
  std::copy(props.begin(), props.end(), cfg.class_proportions.begin());
  if (kv.has("snr_lo") || kv.has("snr_hi") || kv.has("snr_prob")) {
    const auto lo = kv.get_doubles("snr_lo", {});
    const auto hi = kv.get_doubles("snr_hi", {});
    const auto pr = kv.get_doubles("snr_prob", {});
    if (lo.size() != hi.size() || lo.size() != pr.size()) {
      throw ValidationError("snr_lo, snr_hi, snr_prob must have equal lengths");
    }
    cfg.snr_mixture.clear();
    for (std::size_t i = 0; i < lo.size(); ++i) cfg.snr_mixture.push_back({lo[i], hi[i], pr[i]});
  }
  cfg.grid.lambda_min = kv.get_double("grid_min", cfg.grid.lambda_min);
  cfg.grid.lambda_max = kv.get_double("grid_max", cfg.grid.lambda_max);
  cfg.grid.n_points = static_cast<std::size_t>(kv.get_int("grid_points", static_cast<long long>(cfg.grid.n_points)));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (kv.has("lines")) {
    cfg.line_catalog.clear();
    for (const auto& entry : split(kv.get_string("lines", ""), ',')) {
      const auto f = split(entry, ':');
      if (f.size() != 4) throw ValidationError("line entry must be center:depth:width:driver, got '" + entry + "'");
      cfg.line_catalog.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), parse_driver(f[3])});
    }
  }
  auto& pr = cfg.prior;
  pr.t_eff_mean = kv.get_double("t_eff_mean", pr.t_eff_mean);
  pr.t_eff_sd = kv.get_double("t_eff_sd", pr.t_eff_sd);
  pr.log_g_mean = kv.get_double("log_g_mean", pr.log_g_mean);
  pr.log_g_sd = kv.get_double("log_g_sd", pr.log_g_sd);
  pr.fe_h_mean = kv.get_double("fe_h_mean", pr.fe_h_mean);
  pr.fe_h_sd = kv.get_double("fe_h_sd", pr.fe_h_sd);
  pr.c_fe_mean = kv.get_double("c_fe_mean", pr.c_fe_mean);
  pr.c_fe_sd = kv.get_double("c_fe_sd", pr.c_fe_sd);
  pr.rv_sd = kv.get_double("rv_sd", pr.rv_sd);
  cfg.label_rule.metal_poor_below = kv.get_double("metal_poor_below", cfg.label_rule.metal_poor_below);
  cfg.label_rule.cemp_at_least = kv.get_double("cemp_at_least", cfg.label_rule.cemp_at_least);
  cfg.validate();
  return cfg;
}

io::KeyValue GeneratorConfig::to_kv() const {
  using io::format_double;
  io::KeyValue kv;
  auto join = [](const auto& values, auto fmt) {
    std::string s;
    for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(v);
    return s;
  };
  kv.set("n_samples", std::to_string(n_samples));
  kv.set("class_proportions", join(class_proportions, format_double));
  kv.set("snr_lo", join(snr_mixture, [](const SnrComponent& c) { return format_double(c.lo); }));
  kv.set("snr_hi", join(snr_mixture, [](const SnrComponent& c) { return format_double(c.hi); }));
  kv.set("snr_prob", join(snr_mixture, [](const SnrComponent& c) { return format_double(c.probability); }));
  kv.set("grid_min", format_double(grid.lambda_min));
  kv.set("grid_max", format_double(grid.lambda_max));
  kv.set("grid_points", std::to_string(grid.n_points));
  kv.set("seed", std::to_string(seed));
  kv.set("lines", join(line_catalog, [](const LineSpec& l) {
           return format_double(l.center) + ":" + format_double(l.base_depth) + ":" + format_double(l.width) + ":" +
                  driver_name(l.driver);
         }));
  kv.set("t_eff_mean", format_double(prior.t_eff_mean));
  kv.set("t_eff_sd", format_double(prior.t_eff_sd));
  kv.set("log_g_mean", format_double(prior.log_g_mean));
  kv.set("log_g_sd", format_double(prior.log_g_sd));
  kv.set("fe_h_mean", format_double(prior.fe_h_mean));
  kv.set("fe_h_sd", format_double(prior.fe_h_sd));
  kv.set("c_fe_mean", format_double(prior.c_fe_mean));
  kv.set("c_fe_sd", format_double(prior.c_fe_sd));
  kv.set("rv_sd", format_double(prior.rv_sd));
  kv.set("metal_poor_below", format_double(label_rule.metal_poor_below));
  kv.set("cemp_at_least", format_double(label_rule.cemp_at_least));
  return kv;
}

SpectrumModel build_model(const StellarParams& params, const GeneratorConfig& cfg) {
  params.validate();
  SpectrumModel m;
  m.lambda_min = cfg.grid.lambda_min;
  m.lambda_max = cfg.grid.lambda_max;
  // Hotter stars get a bluer (negative) slope; stays positive over [-1, 1] for t_eff in range.
  const double t = (params.t_eff - 6000.0) / 3000.0;
  m.continuum_coeffs = {1.0, -0.3 * t, -0.15 + 0.05 * t, 0.05 * t};
  const double broadening = 1.0 + 0.1 * (params.log_g - 3.0);
  for (const auto& line : cfg.line_catalog) {
    double strength = 1.0;
    switch (line.driver) {
      case LineDriver::fe_h: strength = std::pow(10.0, 0.4 * params.fe_h); break;
      case LineDriver::c_h: strength = std::pow(10.0, 0.4 * params.c_h); break;
      case LineDriver::t_eff: strength = (params.t_eff / 7000.0) * (params.t_eff / 7000.0); break;
    }
    const double depth = std::clamp(line.base_depth * strength, 0.0, 0.95);
    m.lines.push_back({line.center, depth, line.width * broadening});
  }
  return m;
}

double doppler_shift(double rest_wavelength, double rv) { return rest_wavelength * (1.0 + rv / kSpeedOfLight); }

std::vector<double> continuum_flux(const SpectrumModel& model, std::span<const double> wavelengths) {
  std::vector<double> out(wavelengths.size());
  const double mid = 0.5 * (model.lambda_max + model.lambda_min);
  const double half = 0.5 * (model.lambda_max - model.lambda_min);
  const auto& c = model.continuum_coeffs;
  for (std::size_t i = 0; i < wavelengths.size(); ++i) {
    const double u = (wavelengths[i] - mid) / half;
    out[i] = model.continuum_scale * (c[0] + u * (c[1] + u * (c[2] + u * c[3])));
  }
  return out;
}

std::vector<double> render_flux(const SpectrumModel& model, std::span<const double> wavelengths, double rv) {
  auto flux = continuum_flux(model, wavelengths);
  const double factor = 1.0 + rv / kSpeedOfLight;
  for (const auto& line : model.lines) {
    if (line.depth <= 0.0) continue;
    const double center = line.center * factor;
    const double width = line.width * factor;
    const double reach = 8.0 * width;
    auto lo = std::lower_bound(wavelengths.begin(), wavelengths.end(), center - reach);
    auto hi = std::upper_bound(wavelengths.begin(), wavelengths.end(), center + reach);
    for (auto it = lo; it != hi; ++it) {
      const double d = (*it - center) / width;
      flux[static_cast<std::size_t>(it - wavelengths.begin())] *= 1.0 - line.depth * std::exp(-0.5 * d * d);
    }
  }
  return flux;
}

RawSpectrum generate_spectrum(const StellarParams& params, double snr, const GeneratorConfig& cfg,
                              std::uint64_t seed) {
  params.validate();
  if (!(snr > 0.0)) throw ValidationError("generate_spectrum: snr must be positive");
  RawSpectrum spec;
  spec.params = params;
  spec.snr = snr;
  spec.wavelengths = cfg.grid.nodes();
  const auto model = build_model(params, cfg);
  spec.fluxes = render_flux(model, spec.wavelengths, params.rv);
  if (std::isfinite(snr)) {
    const auto cont = continuum_flux(model, spec.wavelengths);
    auto rng = make_rng(seed, 0x6e6f697365ULL);
    for (std::size_t i = 0; i < spec.fluxes.size(); ++i) spec.fluxes[i] += cont[i] / snr * normal(rng);
  }
  return spec;
}

SnrMeasurement measure_snr(const RawSpectrum& spec, std::span<const double> continuum_estimate) {
  const auto n = spec.fluxes.size();
  if (continuum_estimate.size() != n || n == 0) throw ValidationError("measure_snr: length mismatch");
  double mean_cont = 0.0;
  double mean_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(continuum_estimate[i] > 0.0)) throw ValidationError("measure_snr: continuum must be strictly positive");
    mean_cont += continuum_estimate[i];
    mean_res += spec.fluxes[i] - continuum_estimate[i];
  }
  mean_cont /= double(n);
  mean_res /= double(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = spec.fluxes[i] - continuum_estimate[i] - mean_res;
    var += r * r;
  }
  var /= double(n);
  if (var == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {mean_cont / std::sqrt(var), false};
}

std::array<std::size_t, 3> class_counts(const GeneratorConfig& cfg) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 3; ++c) {
    const double exact = cfg.class_proportions[c] * double(cfg.n_samples);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - double(counts[c]);
    assigned += counts[c];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < cfg.n_samples; k = (k + 1) % 3) {
    if (cfg.class_proportions[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  return counts;
}

double sample_snr(const GeneratorConfig& cfg, Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  double acc = 0.0;
  for (const auto& c : cfg.snr_mixture) {
    acc += c.probability;
    if (u < acc) return uniform(rng, c.lo, c.hi);
  }
  const auto& last = cfg.snr_mixture.back();
  return uniform(rng, last.lo, last.hi);
}

StellarParams sample_params(catalog::ClassLabel label, const GeneratorConfig& cfg, Rng& rng) {
  const auto& pr = cfg.prior;
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    StellarParams p;
    p.t_eff = truncated_normal(rng, pr.t_eff_mean, pr.t_eff_sd, 3500.0, 9000.0);
    p.log_g = truncated_normal(rng, pr.log_g_mean, pr.log_g_sd, 0.0, 5.5);
    p.fe_h = truncated_normal(rng, pr.fe_h_mean, pr.fe_h_sd, -4.0, 0.5);
    p.c_h = p.fe_h + pr.c_fe_mean + pr.c_fe_sd * normal(rng);
    p.rv = truncated_normal(rng, 0.0, pr.rv_sd, -500.0, 500.0);
    if (!p.in_range()) continue;
    if (catalog::assign_label(p.fe_h, catalog::carbon_ratio(p.c_h, p.fe_h), cfg.label_rule) == label) return p;
  }
  throw ValidationError("sample_params: class " + std::string(catalog::class_name(label)) +
                        " is infeasible under the configured prior");
}

namespace {

std::vector<catalog::ClassLabel> class_sequence(const GeneratorConfig& cfg) {
  const auto counts = class_counts(cfg);
  std::vector<catalog::ClassLabel> labels;
  labels.reserve(cfg.n_samples);
  for (int c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], static_cast<catalog::ClassLabel>(c));
  auto rng = make_rng(cfg.seed, 0x636c617373ULL);
  for (std::size_t i = labels.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(labels[i - 1], labels[j]);
  }
  return labels;
}

std::vector<RawSpectrum> generate(const GeneratorConfig& cfg, bool with_flux) {
  cfg.validate();
  const auto labels = class_sequence(cfg);
  std::vector<RawSpectrum> out;
  out.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    auto rng = make_rng(cfg.seed + i);
    const double snr = sample_snr(cfg, rng);
    const auto params = sample_params(labels[i], cfg, rng);
    const std::uint64_t noise_seed = rng();
    RawSpectrum spec;
    if (with_flux) {
      spec = generate_spectrum(params, snr, cfg, noise_seed);
    } else {
      spec.params = params;
      spec.snr = snr;
    }
    spec.id = i;
    spec.class_label = labels[i];
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace

std::vector<RawSpectrum> generate_dataset(const GeneratorConfig& cfg) { return generate(cfg, true); }
std::vector<RawSpectrum> generate_labels(const GeneratorConfig& cfg) { return generate(cfg, false); }

}  // namespace wsl::synth
