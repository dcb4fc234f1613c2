#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wsl::io {

// Ordered key=value configuration. Blank lines and lines starting with '#'
// are ignored; whitespace around keys and values is trimmed.
class KeyValue {
 public:
  KeyValue() = default;
  static KeyValue parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValue load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<long long> get_ints(const std::string& key, const std::vector<long long>& fallback) const;

  // Rejects keys outside `allowed` so typos in config files do not pass silently.
  void require_known(std::span<const std::string_view> allowed) const;

  std::string serialize() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_ = "<string>";
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Flat little-endian float32 matrix, row-major.
void write_f32_matrix(const std::filesystem::path& path, std::span<const double> values);
// Reads exactly rows*cols floats; a short file raises IntegrityError naming
// the first incomplete row via `row_names`.
std::vector<double> read_f32_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                                    std::span<const std::string> row_names = {});

void append_f32(std::string& out, double v);
void append_f64(std::string& out, double v);
void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);

// Sequential reader over a byte buffer; throws IntegrityError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  float f32();
  double f64();
  std::uint32_t u32();
  std::uint64_t u64();
  std::string bytes(std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string format_double(double v);

}  // namespace wsl::io
