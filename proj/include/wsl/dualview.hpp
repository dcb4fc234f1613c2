#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "wsl/io.hpp"

namespace wsl::dualview {

enum class WindowFn { hann, rectangular };

// Reflect padding of window_length/2 on both sides is always applied.
struct StftConfig {
  std::size_t window_length = 256;
  std::size_t hop = 64;
  WindowFn window = WindowFn::hann;

  std::size_t bins() const { return window_length / 2 + 1; }
  std::size_t pad() const { return window_length / 2; }
  std::size_t frames(std::size_t signal_length) const;
  void validate(std::size_t signal_length) const;

  static StftConfig from_kv(const io::KeyValue& kv);
  static StftConfig from_kv(const io::KeyValue& kv, const StftConfig& fallback);
  void write_kv(io::KeyValue& kv) const;
};

// Row-major frames × bins magnitude image.
struct TimeFrequencyMap {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> magnitudes;
  StftConfig cfg;

  double at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * bins + bin]; }
};

// Periodic Hann or all-ones window of the configured length.
std::vector<double> window_coefficients(const StftConfig& cfg);
// numpy-style "reflect" padding (edge sample not repeated).
std::vector<double> reflect_pad(std::span<const double> values, std::size_t pad);

TimeFrequencyMap stft_magnitude(std::span<const double> values, const StftConfig& cfg);
TimeFrequencyMap log_compress(const TimeFrequencyMap& map, double eps);

// Cached view file: one text header line, then little-endian float32 maps back to back.
void write_view_file(const std::filesystem::path& path, std::span<const TimeFrequencyMap> maps);
std::vector<TimeFrequencyMap> read_view_file(const std::filesystem::path& path);

}  // namespace wsl::dualview
