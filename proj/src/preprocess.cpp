#include "wsl/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace wsl::prep {

LogGrid LogGrid::spanning(double lambda_min, double lambda_max, std::size_t length) {
  if (!(lambda_min > 0.0) || !(lambda_max > lambda_min) || length < 2) {
    throw ValidationError("log grid needs 0 < lambda_min < lambda_max and length >= 2");
  }
  const double a = std::log(lambda_min);
  return {a, (std::log(lambda_max) - a) / double(length - 1), length};
}

double LogGrid::log_at(std::size_t i) const { return log_start + step * double(i); }

std::vector<double> LogGrid::wavelengths() const {
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = std::exp(log_at(i));
  return out;
}

void PipelineConfig::validate() const {
  if (target_length < 2) throw ValidationError("target_length must be >= 2");
  if (median_window % 2 == 0) throw ValidationError("median_window must be odd and >= 1");
  if (continuum_degree < 0) throw ValidationError("continuum_degree must be >= 0");
  if (!(clip_k > 0.0)) throw ValidationError("clip_k must be positive");
  if ((range_min != 0.0 || range_max != 0.0) && !has_range()) throw ValidationError("invalid common range");
}

PipelineConfig PipelineConfig::from_kv(const io::KeyValue& kv) {
  static constexpr std::string_view kKeys[] = {"target_length", "median_window", "continuum_degree",
                                               "clip_k",        "range_min",     "range_max"};
  kv.require_known(kKeys);
  PipelineConfig cfg;
  cfg.target_length = static_cast<std::size_t>(kv.get_int("target_length", 3450));
  cfg.median_window = static_cast<std::size_t>(kv.get_int("median_window", 3));
  cfg.continuum_degree = static_cast<int>(kv.get_int("continuum_degree", 5));
  cfg.clip_k = kv.get_double("clip_k", 3.0);
  cfg.range_min = kv.get_double("range_min", 0.0);
  cfg.range_max = kv.get_double("range_max", 0.0);
  cfg.validate();
  return cfg;
}

io::KeyValue PipelineConfig::to_kv() const {
  io::KeyValue kv;
  kv.set("target_length", std::to_string(target_length));
  kv.set("median_window", std::to_string(median_window));
  kv.set("continuum_degree", std::to_string(continuum_degree));
  kv.set("clip_k", io::format_double(clip_k));
  kv.set("range_min", io::format_double(range_min));
  kv.set("range_max", io::format_double(range_max));
  return kv;
}

std::vector<double> rest_frame_correct(std::span<const double> wavelengths, double rv) {
  if (!std::isfinite(rv) || std::abs(rv) >= synth::kSpeedOfLight) {
    throw ValidationError("rest_frame_correct: |rv| must be below the speed of light");
  }
  const double factor = 1.0 + rv / synth::kSpeedOfLight;
  std::vector<double> out(wavelengths.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = wavelengths[i] / factor;
    if (i > 0 && !(out[i] > out[i - 1])) throw ValidationError("rest_frame_correct: wavelengths not strictly increasing");
  }
  return out;
}

Resampled log_resample(std::span<const double> wavelengths, std::span<const double> fluxes,
                       const PipelineConfig& cfg) {
  if (wavelengths.size() != fluxes.size() || wavelengths.size() < 2) {
    throw ValidationError("log_resample: need >= 2 samples with matching lengths");
  }
  if (!cfg.has_range()) throw ValidationError("log_resample: common range not set");
  if (wavelengths.front() > cfg.range_min || wavelengths.back() < cfg.range_max) {
    throw ValidationError("log_resample: input range does not cover the common range");
  }
  Resampled out;
  out.grid = LogGrid::spanning(cfg.range_min, cfg.range_max, cfg.target_length);
  out.flux.resize(cfg.target_length);
  std::vector<double> xs(wavelengths.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = std::log(wavelengths[i]);
  std::size_t j = 0;
  for (std::size_t k = 0; k < cfg.target_length; ++k) {
    // Coverage was checked in wavelength space; clamping only absorbs log rounding at the ends.
    const double x = std::clamp(out.grid.log_at(k), xs.front(), xs.back());
    while (j + 2 < xs.size() && xs[j + 1] <= x) ++j;
    if (x <= xs[j]) {
      out.flux[k] = fluxes[j];
    } else if (x >= xs[j + 1]) {
      out.flux[k] = fluxes[j + 1];
    } else {
      const double t = (x - xs[j]) / (xs[j + 1] - xs[j]);
      out.flux[k] = fluxes[j] + (fluxes[j + 1] - fluxes[j]) * t;
    }
  }
  return out;
}

std::vector<double> median_filter(std::span<const double> values, std::size_t window) {
  if (window % 2 == 0) throw ValidationError("median_filter: window must be odd");
  if (window > values.size()) throw ValidationError("median_filter: window longer than input");
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  std::vector<double> out(values.size());
  std::vector<double> buf(window);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      buf[static_cast<std::size_t>(k + half)] = values[static_cast<std::size_t>(std::clamp(i + k, std::ptrdiff_t{0}, n - 1))];
    }
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(half)];
  }
  return out;
}

std::vector<double> fit_continuum(std::span<const double> values, int degree) {
  if (degree < 0) throw ValidationError("fit_continuum: negative degree");
  const auto n = static_cast<Eigen::Index>(values.size());
  if (n <= degree) throw ValidationError("fit_continuum: need more samples than the polynomial degree");
  Eigen::MatrixXd basis(n, degree + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = n == 1 ? 0.0 : 2.0 * double(i) / double(n - 1) - 1.0;
    double p = 1.0;
    for (int d = 0; d <= degree; ++d) {
      basis(i, d) = p;
      p *= u;
    }
  }
  const Eigen::Map<const Eigen::VectorXd> y(values.data(), n);
  const Eigen::VectorXd coeffs = basis.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd fit = basis * coeffs;
  return {fit.data(), fit.data() + n};
}

std::vector<double> continuum_normalize(std::span<const double> values, int degree) {
  const auto fit = fit_continuum(values, degree);
  double scale = 0.0;
  for (double f : fit) scale = std::max(scale, std::abs(f));
  const bool positive = fit.front() > 0.0;
  for (double f : fit) {
    if (!std::isfinite(f) || std::abs(f) <= 1e-12 * scale || (f > 0.0) != positive) {
      throw ValidationError("continuum_normalize: degenerate continuum (fit crosses zero)");
    }
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values[i] / fit[i];
  return out;
}

namespace {

std::pair<double, double> mean_std(std::span<const double> x) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= double(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= double(x.size());
  return {mu, std::sqrt(var)};
}

}  // namespace

std::vector<double> sigma_clip_standardize(std::span<const double> values, double clip_k) {
  if (values.empty()) throw ValidationError("sigma_clip_standardize: empty input");
  if (!(clip_k > 0.0)) throw ValidationError("sigma_clip_standardize: clip_k must be positive");
  const auto [mu0, sd0] = mean_std(values);
  if (!(sd0 > 0.0)) throw ValidationError("sigma_clip_standardize: constant input (sigma = 0)");
  std::vector<double> x(values.begin(), values.end());
  const double lo = mu0 - clip_k * sd0;
  const double hi = mu0 + clip_k * sd0;
  for (double& v : x) {
    if (v < lo || v > hi) v = mu0;
  }
  const auto [mu, sd] = mean_std(x);
  if (!(sd > 0.0)) throw ValidationError("sigma_clip_standardize: sigma = 0 after clipping");
  for (double& v : x) v = (v - mu) / sd;
  return x;
}

PipelineTrace run_pipeline_traced(const synth::RawSpectrum& spec, const PipelineConfig& cfg) {
  PipelineTrace t;
  const char* step = "validate";
  try {
    cfg.validate();
    spec.validate();
    step = "rest_frame_correct";
    t.rest_wavelengths = rest_frame_correct(spec.wavelengths, spec.params.rv);
    step = "log_resample";
    t.resampled = log_resample(t.rest_wavelengths, spec.fluxes, cfg);
    step = "median_filter";
    t.median_filtered = median_filter(t.resampled.flux, cfg.median_window);
    step = "continuum_normalize";
    t.normalized = continuum_normalize(t.median_filtered, cfg.continuum_degree);
    step = "sigma_clip_standardize";
    t.output.values = sigma_clip_standardize(t.normalized, cfg.clip_k);
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(step, e.what());
  }
  t.output.id = spec.id;
  t.output.log_grid = t.resampled.grid;
  return t;
}

ProcessedSpectrum run_pipeline(const synth::RawSpectrum& spec, const PipelineConfig& cfg) {
  return std::move(run_pipeline_traced(spec, cfg).output);
}

std::pair<double, double> common_range(std::span<const synth::RawSpectrum> spectra) {
  if (spectra.empty()) throw ValidationError("common_range: no spectra");
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (const auto& s : spectra) {
    if (s.wavelengths.empty()) throw ValidationError("common_range: empty spectrum");
    const double factor = 1.0 + s.params.rv / synth::kSpeedOfLight;
    lo = std::max(lo, s.wavelengths.front() / factor);
    hi = std::min(hi, s.wavelengths.back() / factor);
  }
  if (!(hi > lo)) throw ValidationError("common_range: spectra share no common interval");
  return {lo, hi};
}

std::pair<double, double> common_range(const synth::WavelengthGrid& grid, double rv_min, double rv_max) {
  const double lo = grid.lambda_min / (1.0 + rv_min / synth::kSpeedOfLight);
  const double hi = grid.lambda_max / (1.0 + rv_max / synth::kSpeedOfLight);
  if (!(hi > lo)) throw ValidationError("common_range: empty interval");
  return {lo, hi};
}

}  // namespace wsl::prep
