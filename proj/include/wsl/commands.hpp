#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsl/io.hpp"

namespace wsl::cli {

inline constexpr const char* kToolVersion = "wsl 0.1.0";
inline constexpr const char* kRunManifestName = "run_manifest.txt";
inline constexpr const char* kFluxName = "flux.f32";
inline constexpr const char* kCheckpointName = "checkpoint.bin";
inline constexpr const char* kLossLogName = "loss_log.tsv";
inline constexpr const char* kMetricsName = "metrics.txt";
inline constexpr const char* kPredictionsName = "predictions.tsv";
inline constexpr const char* kSnrBinsName = "snr_bins.csv";
inline constexpr const char* kDensityBinsName = "density_bins.csv";
inline constexpr const char* kMaeVsSnrName = "mae_vs_snr.csv";
inline constexpr const char* kDensityGridName = "density_grid.csv";
inline constexpr const char* kSnrHistName = "snr_histogram.csv";

// Everything a command needs besides its output directory. Config files are
// captured by content so a replay does not depend on them still existing.
struct Invocation {
  std::string command;                        // generate | preprocess | train | evaluate | report
  std::map<std::string, std::string> args;    // flag name -> value
  std::map<std::string, io::KeyValue> configs;
  std::optional<std::uint64_t> seed;
};

struct RunManifest {
  Invocation invocation;
  std::string tool_version = kToolVersion;
  std::map<std::string, std::uint64_t> seeds;        // per-stage seeds actually used
  std::map<std::string, std::string> inputs;          // path -> sha256
  std::map<std::string, std::string> outputs;         // path relative to out dir -> sha256

  std::string serialize() const;
  static RunManifest parse(const std::string& text, const std::string& origin);
  static RunManifest load(const std::filesystem::path& path);
};

// Per-stage seed derived from the single --seed flag.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

// Runs one pipeline stage into `out`, writes out/run_manifest.txt and returns it.
RunManifest run(const Invocation& inv, const std::filesystem::path& out);

// Re-runs a recorded invocation into `out` and checks inputs and outputs against
// the recorded checksums. Any difference raises IntegrityError.
RunManifest replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out);

}  // namespace wsl::cli
