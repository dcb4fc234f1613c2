#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wsl/catalog.hpp"
#include "wsl/io.hpp"
#include "wsl/synth.hpp"

namespace wsl::corpus {

inline constexpr const char* kManifestName = "manifest.tsv";

struct Record {
  std::uint64_t id = 0;
  synth::StellarParams params;
  double snr = 0.0;
  catalog::ClassLabel label = catalog::ClassLabel::nmp;
  catalog::Split split = catalog::Split::train;
};

// Text manifest: "# key=value" header lines, a column header, then one
// tab-separated record per sample. The header names the flux matrix file
// (data_file) and its row width.
struct Manifest {
  io::KeyValue header;
  std::vector<Record> records;

  std::size_t width() const;
  std::string data_file() const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// Manifest plus its float32 matrix, rows in manifest order.
struct Corpus {
  Manifest manifest;
  std::vector<double> values;  // records.size() x width

  std::size_t size() const { return manifest.records.size(); }
  std::size_t width() const { return manifest.width(); }
  std::span<const double> row(std::size_t i) const;
};

Corpus load_corpus(const std::filesystem::path& dir);
// Writes the manifest and matrix into dir; returns the files written.
std::vector<std::filesystem::path> save_corpus(const std::filesystem::path& dir, const Corpus& c);

std::vector<std::size_t> indices_of(const Manifest& m, catalog::Split split);

}  // namespace wsl::corpus
