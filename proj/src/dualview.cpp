#include "wsl/dualview.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

#include "wsl/error.hpp"

namespace wsl::dualview {
namespace {

std::string window_name(WindowFn w) { return w == WindowFn::hann ? "hann" : "rectangular"; }

WindowFn parse_window(const std::string& s) {
  if (s == "hann") return WindowFn::hann;
  if (s == "rectangular") return WindowFn::rectangular;
  throw ValidationError("unknown STFT window '" + s + "'");
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

std::size_t StftConfig::frames(std::size_t signal_length) const {
  const std::size_t padded = signal_length + 2 * pad();
  return (padded - window_length) / hop + 1;
}

void StftConfig::validate(std::size_t signal_length) const {
  if (window_length == 0 || hop == 0 || hop > window_length) {
    throw ValidationError("STFT config needs 0 < hop <= window_length");
  }
  if (signal_length <= pad()) throw ValidationError("STFT: signal too short for reflect padding");
  if (signal_length + 2 * pad() < window_length) throw ValidationError("STFT: signal shorter than window after padding");
}

StftConfig StftConfig::from_kv(const io::KeyValue& kv) { return from_kv(kv, StftConfig{}); }

StftConfig StftConfig::from_kv(const io::KeyValue& kv, const StftConfig& fallback) {
  StftConfig cfg = fallback;
  cfg.window_length = static_cast<std::size_t>(kv.get_int("stft_window", static_cast<long long>(cfg.window_length)));
  cfg.hop = static_cast<std::size_t>(kv.get_int("stft_hop", static_cast<long long>(cfg.hop)));
  cfg.window = parse_window(kv.get_string("stft_window_fn", window_name(cfg.window)));
  return cfg;
}

void StftConfig::write_kv(io::KeyValue& kv) const {
  kv.set("stft_window", std::to_string(window_length));
  kv.set("stft_hop", std::to_string(hop));
  kv.set("stft_window_fn", window_name(window));
}

std::vector<double> window_coefficients(const StftConfig& cfg) {
  std::vector<double> w(cfg.window_length, 1.0);
  if (cfg.window == WindowFn::hann) {
    const double n = double(cfg.window_length);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / n);
  }
  return w;
}

std::vector<double> reflect_pad(std::span<const double> values, std::size_t pad) {
  const std::size_t n = values.size();
  if (pad >= n) throw ValidationError("reflect_pad: pad must be shorter than the signal");
  std::vector<double> out(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    out[pad - 1 - i] = values[i + 1];
    out[pad + n + i] = values[n - 2 - i];
  }
  std::copy(values.begin(), values.end(), out.begin() + static_cast<std::ptrdiff_t>(pad));
  return out;
}

TimeFrequencyMap stft_magnitude(std::span<const double> values, const StftConfig& cfg) {
  cfg.validate(values.size());
  const auto padded = reflect_pad(values, cfg.pad());
  const auto window = window_coefficients(cfg);
  const std::size_t w = cfg.window_length;

  TimeFrequencyMap map;
  map.cfg = cfg;
  map.frames = cfg.frames(values.size());
  map.bins = cfg.bins();
  map.magnitudes.assign(map.frames * map.bins, 0.0);

  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(w));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(map.bins));
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(
      fftw_plan_dft_r2c_1d(static_cast<int>(w), in.get(), out.get(), FFTW_ESTIMATE));
  if (!plan) throw ValidationError("STFT: failed to create FFT plan");

  for (std::size_t f = 0; f < map.frames; ++f) {
    const std::size_t start = f * cfg.hop;
    for (std::size_t i = 0; i < w; ++i) in.get()[i] = padded[start + i] * window[i];
    fftw_execute(plan.get());
    for (std::size_t b = 0; b < map.bins; ++b) {
      map.magnitudes[f * map.bins + b] = std::hypot(out.get()[b][0], out.get()[b][1]);
    }
  }
  return map;
}

TimeFrequencyMap log_compress(const TimeFrequencyMap& map, double eps) {
  if (!(eps > 0.0)) throw ValidationError("log_compress: eps must be positive");
  TimeFrequencyMap out = map;
  for (double& v : out.magnitudes) v = std::log(v + eps);
  return out;
}

void write_view_file(const std::filesystem::path& path, std::span<const TimeFrequencyMap> maps) {
  const StftConfig cfg = maps.empty() ? StftConfig{} : maps.front().cfg;
  const std::size_t frames = maps.empty() ? 0 : maps.front().frames;
  const std::size_t bins = maps.empty() ? 0 : maps.front().bins;
  std::ostringstream header;
  header << "wsl-tfview v1 frames=" << frames << " bins=" << bins << " window=" << cfg.window_length
         << " hop=" << cfg.hop << " window_fn=" << window_name(cfg.window) << " count=" << maps.size() << "\n";
  std::string buf = header.str();
  for (const auto& m : maps) {
    if (m.frames != frames || m.bins != bins) throw ValidationError("write_view_file: maps differ in shape");
    for (double v : m.magnitudes) io::append_f32(buf, v);
  }
  io::write_text(path, buf);
}

std::vector<TimeFrequencyMap> read_view_file(const std::filesystem::path& path) {
  const auto bytes = io::read_text(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw IntegrityError(path.string() + ": missing view header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version;
  header >> magic >> version;
  if (magic != "wsl-tfview" || version != "v1") throw IntegrityError(path.string() + ": not a view file");
  io::KeyValue kv;
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw IntegrityError(path.string() + ": malformed header field '" + field + "'");
    kv.set(field.substr(0, eq), field.substr(eq + 1));
  }
  StftConfig cfg;
  cfg.window_length = static_cast<std::size_t>(kv.get_int("window", 256));
  cfg.hop = static_cast<std::size_t>(kv.get_int("hop", 64));
  cfg.window = parse_window(kv.get_string("window_fn", "hann"));
  const auto frames = static_cast<std::size_t>(kv.get_int("frames", 0));
  const auto bins = static_cast<std::size_t>(kv.get_int("bins", 0));
  const auto count = static_cast<std::size_t>(kv.get_int("count", 0));
  io::ByteReader reader(std::string_view(bytes).substr(nl + 1));
  if (reader.remaining() != count * frames * bins * 4) {
    throw IntegrityError(path.string() + ": payload size does not match header");
  }
  std::vector<TimeFrequencyMap> maps(count);
  for (auto& m : maps) {
    m.cfg = cfg;
    m.frames = frames;
    m.bins = bins;
    m.magnitudes.resize(frames * bins);
    for (double& v : m.magnitudes) v = reader.f32();
  }
  return maps;
}

}  // namespace wsl::dualview
