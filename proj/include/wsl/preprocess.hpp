#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsl/error.hpp"
#include "wsl/io.hpp"
#include "wsl/synth.hpp"

namespace wsl::prep {

// Uniform grid in natural-log wavelength.
struct LogGrid {
  double log_start = 0.0;
  double step = 0.0;
  std::size_t length = 0;

  static LogGrid spanning(double lambda_min, double lambda_max, std::size_t length);
  double log_at(std::size_t i) const;
  std::vector<double> wavelengths() const;
};

struct ProcessedSpectrum {
  std::uint64_t id = 0;
  std::vector<double> values;
  LogGrid log_grid;
};

struct PipelineConfig {
  std::size_t target_length = 3450;
  std::size_t median_window = 3;
  int continuum_degree = 5;
  double clip_k = 3.0;
  double range_min = 0.0;  // common rest-frame interval, Å
  double range_max = 0.0;

  static PipelineConfig from_kv(const io::KeyValue& kv);
  io::KeyValue to_kv() const;
  void validate() const;
  bool has_range() const { return range_max > range_min && range_min > 0.0; }
};

// A failure inside run_pipeline, tagged with the step that raised it.
class PipelineError : public ValidationError {
 public:
  PipelineError(std::string step, const std::string& what)
      : ValidationError("preprocess step '" + step + "': " + what), step_(std::move(step)) {}
  const std::string& step() const noexcept { return step_; }

 private:
  std::string step_;
};

// λ' = λ / (1 + rv/c).
std::vector<double> rest_frame_correct(std::span<const double> wavelengths, double rv);

struct Resampled {
  LogGrid grid;
  std::vector<double> flux;
};
Resampled log_resample(std::span<const double> wavelengths, std::span<const double> fluxes, const PipelineConfig& cfg);

// Centered running median with edge replication; window must be odd.
std::vector<double> median_filter(std::span<const double> values, std::size_t window);

// Least-squares polynomial on node index mapped to [-1, 1].
std::vector<double> fit_continuum(std::span<const double> values, int degree);
std::vector<double> continuum_normalize(std::span<const double> values, int degree);

// One 3-sigma-style clipping pass (outliers replaced by the mean) then z-scoring
// with statistics recomputed on the clipped vector. Population variance throughout.
std::vector<double> sigma_clip_standardize(std::span<const double> values, double clip_k);

struct PipelineTrace {
  std::vector<double> rest_wavelengths;
  Resampled resampled;
  std::vector<double> median_filtered;
  std::vector<double> normalized;
  ProcessedSpectrum output;
};

PipelineTrace run_pipeline_traced(const synth::RawSpectrum& spec, const PipelineConfig& cfg);
ProcessedSpectrum run_pipeline(const synth::RawSpectrum& spec, const PipelineConfig& cfg);

// Largest interval covered by every spectrum after rest-frame correction.
std::pair<double, double> common_range(std::span<const synth::RawSpectrum> spectra);
// Same, for spectra on `grid` with radial velocities in [rv_min, rv_max].
std::pair<double, double> common_range(const synth::WavelengthGrid& grid, double rv_min, double rv_max);

}  // namespace wsl::prep
