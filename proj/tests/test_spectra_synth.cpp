#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "wsl/error.hpp"
#include "wsl/synth.hpp"

using namespace wsl;
using namespace wsl::synth;

namespace {

GeneratorConfig small_cfg(std::size_t n) {
  auto cfg = GeneratorConfig::defaults();
  cfg.n_samples = n;
  cfg.grid.n_points = 400;
  return cfg;
}

std::size_t argmin(const std::vector<double>& v) {
  return std::size_t(std::min_element(v.begin(), v.end()) - v.begin());
}

std::size_t nearest(const std::vector<double>& grid, double x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (std::abs(grid[i] - x) < std::abs(grid[best] - x)) best = i;
  return best;
}

}  // namespace

TEST_CASE("stellar params reject out-of-range and non-finite fields") {
  CHECK_NOTHROW(StellarParams::make(5000, 4, -1, -1, 0));
  CHECK_THROWS_AS(StellarParams::make(3000, 4, -1, -1, 0), ValidationError);
  CHECK_THROWS_AS(StellarParams::make(5000, 6, -1, -1, 0), ValidationError);
  CHECK_THROWS_AS(StellarParams::make(5000, 4, 1, -1, 0), ValidationError);
  CHECK_THROWS_AS(StellarParams::make(5000, 4, -1, 2, 0), ValidationError);
  CHECK_THROWS_AS(StellarParams::make(5000, 4, -1, -1, 600), ValidationError);
  CHECK_THROWS_AS(StellarParams::make(std::nan(""), 4, -1, -1, 0), ValidationError);
}

TEST_CASE("noise-free line-free spectrum is the positive continuum") {
  auto cfg = GeneratorConfig::defaults();
  cfg.line_catalog.clear();
  const auto p = StellarParams::make(6000, 4, -0.5, -0.5, 30);
  const auto spec = generate_spectrum(p, std::numeric_limits<double>::infinity(), cfg, 3);
  const auto cont = continuum_flux(build_model(p, cfg), spec.wavelengths);
  REQUIRE(spec.fluxes.size() == cont.size());
  for (std::size_t i = 0; i < cont.size(); ++i) {
    CHECK(spec.fluxes[i] == cont[i]);
    CHECK(spec.fluxes[i] > 0.0);
  }
}

TEST_CASE("single line lands at its rest wavelength when rv is zero") {
  auto cfg = GeneratorConfig::defaults();
  cfg.line_catalog = {{4300.0, 0.5, 2.0, LineDriver::fe_h}};
  const auto p = StellarParams::make(6000, 4, 0.0, 0.0, 0.0);
  const auto spec = generate_spectrum(p, std::numeric_limits<double>::infinity(), cfg, 1);
  // divide out the continuum so only the dip shapes the minimum
  const auto cont = continuum_flux(build_model(p, cfg), spec.wavelengths);
  std::vector<double> ratio(cont.size());
  for (std::size_t i = 0; i < cont.size(); ++i) ratio[i] = spec.fluxes[i] / cont[i];
  CHECK(argmin(ratio) == nearest(spec.wavelengths, 4300.0));
}

TEST_CASE("line shifts to 4730 A at rv = c/10") {
  SpectrumModel m;
  m.continuum_coeffs = {1.0, 0.0, 0.0, 0.0};
  m.lambda_min = 3800.0;
  m.lambda_max = 9000.0;
  m.lines = {{4300.0, 0.6, 2.0}};
  WavelengthGrid grid;
  const auto lam = grid.nodes();
  const auto flux = render_flux(m, lam, kSpeedOfLight / 10.0);
  CHECK(argmin(flux) == nearest(lam, 4730.0));
  CHECK(doppler_shift(4300.0, kSpeedOfLight / 10.0) == doctest::Approx(4730.0).epsilon(1e-12));
}

TEST_CASE("measure_snr reports the ratio and flags a zero residual") {
  RawSpectrum s;
  s.wavelengths = {1, 2, 3, 4};
  s.fluxes = {1.02, 0.98, 1.02, 0.98};
  const std::vector<double> cont(4, 1.0);
  auto m = measure_snr(s, cont);
  CHECK_FALSE(m.noise_free);
  CHECK(m.value == doctest::Approx(50.0).epsilon(1e-12));

  s.fluxes = {1.04, 0.96, 1.04, 0.96};
  CHECK(measure_snr(s, cont).value == doctest::Approx(25.0).epsilon(1e-12));

  s.fluxes = cont;
  m = measure_snr(s, cont);
  CHECK(m.noise_free);
  CHECK(std::isinf(m.value));
}

TEST_CASE("generated noise has the configured per-pixel sigma") {
  auto cfg = GeneratorConfig::defaults();
  const auto p = StellarParams::make(5500, 3.5, -1.2, -0.2, -40);
  const auto clean = generate_spectrum(p, std::numeric_limits<double>::infinity(), cfg, 9);
  const auto noisy = generate_spectrum(p, 40.0, cfg, 9);
  const auto cont = continuum_flux(build_model(p, cfg), clean.wavelengths);
  std::vector<double> z;
  for (std::size_t i = 0; i < cont.size(); ++i) z.push_back((noisy.fluxes[i] - clean.fluxes[i]) * 40.0 / cont[i]);
  CHECK(std::abs(oracle::mean(z)) < 0.06);
  CHECK(oracle::pop_std(z) == doctest::Approx(1.0).epsilon(0.04));
}

TEST_CASE("generate_spectrum rejects non-positive snr") {
  const auto p = StellarParams::make(5500, 3.5, -1.2, -0.2, 0);
  CHECK_THROWS_AS(generate_spectrum(p, 0.0, GeneratorConfig::defaults(), 1), ValidationError);
  CHECK_THROWS_AS(generate_spectrum(p, -5.0, GeneratorConfig::defaults(), 1), ValidationError);
}

TEST_CASE("class counts for the desk corpus are 664/23/629") {
  auto cfg = GeneratorConfig::defaults();
  cfg.n_samples = 1316;
  const auto c = class_counts(cfg);
  CHECK(c[0] == 664);
  CHECK(c[1] == 23);
  CHECK(c[2] == 629);
}

TEST_CASE("generated labels follow the requested counts and the labeling rule") {
  auto cfg = small_cfg(300);
  const auto data = generate_labels(cfg);
  const auto want = class_counts(cfg);
  std::array<std::size_t, 3> got{};
  for (const auto& s : data) {
    REQUIRE(s.class_label.has_value());
    ++got[static_cast<std::size_t>(*s.class_label)];
    const double c_fe = s.params.c_h - s.params.fe_h;
    const int expect = s.params.fe_h >= -1.0 ? 0 : (c_fe >= 0.7 ? 1 : 2);
    CHECK(static_cast<int>(*s.class_label) == expect);
  }
  CHECK(got == want);
}

TEST_CASE("all-NMP proportions label every sample 0") {
  auto cfg = small_cfg(50);
  cfg.class_proportions = {1.0, 0.0, 0.0};
  for (const auto& s : generate_labels(cfg)) CHECK(*s.class_label == catalog::ClassLabel::nmp);
}

TEST_CASE("snr mixture with 60% below 50 yields that fraction at n=2000") {
  auto cfg = small_cfg(2000);
  cfg.snr_mixture = {{10.0, 50.0, 0.6}, {50.0, 200.0, 0.4}};
  const auto data = generate_labels(cfg);
  double below = 0;
  for (const auto& s : data) below += s.snr < 50.0;
  CHECK(below / 2000.0 >= 0.58);
  CHECK(below / 2000.0 <= 0.62);
}

TEST_CASE("default snr mixture puts more than 55% of mass below 50") {
  CHECK(GeneratorConfig::defaults().snr_mass_below(50.0) > 0.55);
}

TEST_CASE("invalid generator configs are rejected") {
  auto cfg = small_cfg(10);
  cfg.class_proportions = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_cfg(10);
  cfg.grid.n_points = 32;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_cfg(10);
  cfg.snr_mixture = {{10.0, 50.0, 0.5}};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("generator config round-trips through key=value text") {
  auto cfg = small_cfg(77);
  cfg.seed = 12345;
  const auto back = GeneratorConfig::from_kv(io::KeyValue::parse(cfg.to_kv().serialize()));
  CHECK(back.to_kv().serialize() == cfg.to_kv().serialize());
  CHECK_THROWS_AS(GeneratorConfig::from_kv(io::KeyValue::parse("n_sample = 4\n")), ValidationError);
}
