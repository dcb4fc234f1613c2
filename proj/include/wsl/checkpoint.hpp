#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "wsl/io.hpp"
#include "wsl/pdvfn.hpp"

namespace wsl::train {

// File layout:
//   wsl-checkpoint v1
//   model.<key>=<value>      model config echo
//   meta.<key>=<value>       training metadata (target scaling, epoch, ...)
//   records=<n>
//   payload_bytes=<n>
//   payload_sha256=<hex>
//   end-header
//   payload: per tensor u32 name length, name, u32 rank, u64 dims, f64 values
// Parameters come first in registration order, then buffers.
std::string serialize_checkpoint(const pdvfn::Model& model, const io::KeyValue& meta);
void save_checkpoint(const std::filesystem::path& path, const pdvfn::Model& model, const io::KeyValue& meta);

struct LoadedCheckpoint {
  std::unique_ptr<pdvfn::Model> model;
  io::KeyValue meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& origin);

}  // namespace wsl::train
