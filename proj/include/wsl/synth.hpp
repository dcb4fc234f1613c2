#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "wsl/catalog.hpp"
#include "wsl/io.hpp"
#include "wsl/rng.hpp"

namespace wsl::synth {

inline constexpr double kSpeedOfLight = 299792.458;  // km/s

struct StellarParams {
  double t_eff = 5800.0;  // K, [3500, 9000]
  double log_g = 4.0;     // dex, [0, 5.5]
  double fe_h = 0.0;      // dex, [-4, 0.5]
  double c_h = 0.0;       // dex, [-4, 1.5]
  double rv = 0.0;        // km/s, [-500, 500]

  // Validating constructor; throws ValidationError when a field is non-finite or out of range.
  static StellarParams make(double t_eff, double log_g, double fe_h, double c_h, double rv);
  void validate() const;
  bool in_range() const noexcept;
};

struct RawSpectrum {
  std::uint64_t id = 0;
  std::vector<double> wavelengths;  // Å, strictly increasing
  std::vector<double> fluxes;
  StellarParams params;
  double snr = std::numeric_limits<double>::infinity();
  std::optional<catalog::ClassLabel> class_label;

  void validate() const;
};

enum class LineDriver { fe_h, c_h, t_eff };

struct LineSpec {
  double center;      // rest wavelength, Å
  double base_depth;  // depth at driver value 0 (abundances) or 7000 K (t_eff)
  double width;       // Gaussian sigma, Å
  LineDriver driver;
};

struct SnrComponent {
  double lo;
  double hi;
  double probability;
};

struct WavelengthGrid {
  double lambda_min = 3800.0;
  double lambda_max = 9000.0;
  std::size_t n_points = 5200;

  std::vector<double> nodes() const;  // linear in λ
};

// Sampling prior for stellar parameters before class-conditional rejection.
struct ParamPrior {
  double t_eff_mean = 5600.0, t_eff_sd = 900.0;
  double log_g_mean = 3.8, log_g_sd = 0.9;
  double fe_h_mean = -0.6, fe_h_sd = 0.9;
  double c_fe_mean = 0.3, c_fe_sd = 0.45;
  double rv_sd = 60.0;
};

struct GeneratorConfig {
  std::size_t n_samples = 1316;
  std::array<double, 3> class_proportions{0.5047, 0.0174, 0.4779};  // NMP, CEMP, CnMP
  std::vector<SnrComponent> snr_mixture;
  WavelengthGrid grid;
  std::uint64_t seed = 0;
  std::vector<LineSpec> line_catalog;
  ParamPrior prior;
  catalog::LabelRule label_rule;

  static GeneratorConfig defaults();
  static GeneratorConfig from_kv(const io::KeyValue& kv);
  io::KeyValue to_kv() const;
  void validate() const;
  // Probability mass of the SNR mixture strictly below `threshold`.
  double snr_mass_below(double threshold) const;
};

std::vector<LineSpec> default_line_catalog();
std::vector<SnrComponent> default_snr_mixture();

struct ResolvedLine {
  double center;  // rest wavelength, Å
  double depth;   // in [0, 0.95]
  double width;   // rest-frame sigma, Å
};

// Parameter-dependent but noise-free description of a spectrum.
struct SpectrumModel {
  std::array<double, 4> continuum_coeffs{};  // cubic in wavelength normalized to [-1, 1] over the grid
  double continuum_scale = 100.0;
  double lambda_min = 0.0;
  double lambda_max = 1.0;
  std::vector<ResolvedLine> lines;
};

SpectrumModel build_model(const StellarParams& params, const GeneratorConfig& cfg);

// Continuum evaluated on observed wavelengths.
std::vector<double> continuum_flux(const SpectrumModel& model, std::span<const double> wavelengths);
// Noise-free flux: continuum times Gaussian line dips, lines Doppler-shifted by rv.
std::vector<double> render_flux(const SpectrumModel& model, std::span<const double> wavelengths, double rv);

// Observed wavelength of a rest-frame wavelength for radial velocity rv (km/s).
double doppler_shift(double rest_wavelength, double rv);

// snr = +inf disables noise. Per-pixel noise sigma is continuum / snr.
RawSpectrum generate_spectrum(const StellarParams& params, double snr, const GeneratorConfig& cfg,
                              std::uint64_t seed);

struct SnrMeasurement {
  double value = 0.0;      // +inf when noise_free
  bool noise_free = false; // residual has zero variance
};

SnrMeasurement measure_snr(const RawSpectrum& spec, std::span<const double> continuum_estimate);

// Exact class counts (largest-remainder rounding of proportions × n).
std::array<std::size_t, 3> class_counts(const GeneratorConfig& cfg);

// Draws parameters for `label` by rejection against the labeling rule.
StellarParams sample_params(catalog::ClassLabel label, const GeneratorConfig& cfg, Rng& rng);
double sample_snr(const GeneratorConfig& cfg, Rng& rng);

// Sample i uses seed cfg.seed + i; output is independent of evaluation order.
std::vector<RawSpectrum> generate_dataset(const GeneratorConfig& cfg);
// Parameters, SNR and labels only (no flux synthesis).
std::vector<RawSpectrum> generate_labels(const GeneratorConfig& cfg);

}  // namespace wsl::synth
