#include <doctest.h>

#include <cmath>

#include "wsl/error.hpp"
#include "wsl/gradcheck.hpp"
#include "wsl/pdvfn.hpp"
#include "wsl/rng.hpp"

using namespace wsl;
using namespace wsl::pdvfn;
using tc::Shape;

namespace {

PdvfnConfig toy_cfg(Task task = Task::regression) {
  PdvfnConfig c;
  c.acr.input_length = 64;
  c.acr.channels = {4, 4, 8};
  c.acr.kernels = {7, 5, 3};
  c.acr.strides = {2, 2, 2};
  c.acr.cbam_reduction = 2;
  c.acr.cbam_kernel = 3;
  c.acr.gru_hidden = 4;
  c.acr.gru_layers = 4;
  c.acr.heads = 2;
  c.acr.output_dim = 8;
  c.pmtf.mfpf_channels = 2;
  c.pmtf.rc_ratio = 2;
  c.pmtf.rc_channels = 2;
  c.pmtf.ffc_channels = 4;
  c.pmtf.target_h = 4;
  c.pmtf.target_w = 4;
  c.pmtf.ssm_dim = 8;
  c.pmtf.ssm_blocks = 4;
  c.pmtf.ssm_state = 4;
  c.pmtf.output_dim = 8;
  c.head.task = task;
  c.head.hidden = 8;
  // 64 samples, window 30, hop 8 -> 9 x 16 map, trimmed to 8 x 16
  c.stft = dualview::StftConfig{30, 8, dualview::WindowFn::hann};
  c.seed = 5;
  c.sync_map_shape();
  return c;
}

Tensor randn(Shape s, std::uint64_t seed, bool grad = false, double scale = 1.0) {
  auto rng = make_rng(seed, 31);
  std::vector<double> d(tc::numel(s));
  for (double& v : d) v = scale * normal(rng);
  return Tensor::from(std::move(s), std::move(d), grad);
}

Tensor probe(const Tensor& t, std::uint64_t seed = 4242) { return tc::sum(tc::mul(t, randn(t.shape(), seed))); }

std::vector<Tensor> all_params(const tc::ParameterSet& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps.params()) out.push_back(p.tensor);
  return out;
}

tc::GradCheckResult sampled_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                  std::size_t coords, std::uint64_t seed) {
  tc::GradCheckOptions o;
  o.coordinates = coords;
  o.seed = seed;
  const auto r = tc::finite_difference_check(f, params, o);
  if (r.max_rel_error >= 1e-3) MESSAGE(r.worst);
  return r;
}

std::vector<double> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

bool in_unit_interval(const Tensor& t) {
  for (double v : t.data())
    if (!(v > 0.0 && v < 1.0)) return false;
  return true;
}

}  // namespace

TEST_CASE("output arity: regression 4+4, classification 3") {
  Model reg(toy_cfg(Task::regression));
  const auto v = randn({64}, 1), m = randn({9, 16}, 2);
  const auto r = reg.forward(v, m, false);
  CHECK(r.mu.shape() == Shape{1, 4});
  CHECK(r.log_var.shape() == Shape{1, 4});
  CHECK(all_finite(r.mu));
  CHECK(all_finite(r.log_var));
  Model cls(toy_cfg(Task::classification));
  const auto c = cls.forward(v, m, false);
  CHECK(c.logits.shape() == Shape{1, 3});
  auto sub = toy_cfg();
  sub.head.targets = {Target::feh, Target::ch};
  CHECK(Model(sub).forward(v, m, false).mu.shape() == Shape{1, 2});
}

TEST_CASE("branch output dims and stage-tagged shape errors") {
  Model model(toy_cfg());
  CHECK(model.acr_forward(randn({64}, 3)).shape() == Shape{1, 8});
  CHECK(model.pmtf_forward(randn({9, 16}, 4), false).shape() == Shape{1, 8});
  try {
    model.acr_forward(randn({63}, 3));
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("acr stage 'input'") != std::string::npos);
  }
  try {
    model.pmtf_forward(randn({8, 16}, 3), false);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("pmtf stage 'input'") != std::string::npos);
  }
  CHECK_THROWS_AS(model.forward(Tensor(), randn({9, 16}, 4), false), ValidationError);
}

TEST_CASE("shape contracts hold across a config fuzz") {
  auto rng = make_rng(2024);
  const auto pick = [&](std::initializer_list<std::size_t> xs) {
    return *(xs.begin() + std::size_t(rng() % xs.size()));
  };
  int tested = 0, attempts = 0;
  while (tested < 20 && attempts < 500) {
    ++attempts;
    PdvfnConfig c;
    c.acr.input_length = pick({40, 48, 64, 80, 96});
    for (std::size_t i = 0; i < 3; ++i) {
      c.acr.channels[i] = pick({2, 3, 4, 6, 8});
      c.acr.kernels[i] = pick({1, 3, 5, 7});
      c.acr.strides[i] = pick({1, 2});
    }
    c.acr.cbam_reduction = pick({1, 2});
    c.acr.cbam_kernel = pick({3, 5});
    c.acr.gru_hidden = pick({2, 3, 4});
    c.acr.gru_layers = pick({1, 2, 4});
    c.acr.heads = pick({1, 2});
    c.acr.output_dim = pick({3, 8});
    c.pmtf.mfpf_channels = pick({1, 2, 3});
    c.pmtf.rc_ratio = pick({1, 2});
    c.pmtf.rc_channels = pick({1, 2});
    c.pmtf.ffc_channels = pick({2, 4});
    c.pmtf.target_h = pick({1, 2, 4});
    c.pmtf.target_w = pick({1, 3, 4});
    c.pmtf.ssm_dim = pick({4, 6});
    c.pmtf.ssm_blocks = pick({1, 2, 4});
    c.pmtf.ssm_state = pick({1, 3});
    c.pmtf.output_dim = pick({2, 5});
    c.head.task = rng() % 2 ? Task::classification : Task::regression;
    c.stft = dualview::StftConfig{pick({14, 16, 22}), pick({4, 6}), dualview::WindowFn::hann};
    c.seed = rng();
    try {
      c.sync_map_shape();
      c.validate();
    } catch (const ValidationError&) {
      continue;
    }
    ++tested;
    Model model(c);
    const auto v = randn({c.acr.input_length}, rng());
    const auto m = randn({c.pmtf.map_frames, c.pmtf.map_bins}, rng());
    const auto a = model.acr_forward(v);
    const auto p = model.pmtf_forward(m, true);
    CHECK(a.shape() == Shape{1, c.acr.output_dim});
    CHECK(p.shape() == Shape{1, c.pmtf.output_dim});
    const auto out = model.forward(v, m, false);
    if (c.head.task == Task::classification) {
      CHECK(out.logits.shape() == Shape{1, 3});
      CHECK(all_finite(out.logits));
    } else {
      CHECK(out.mu.shape() == Shape{1, 4});
      CHECK(all_finite(out.mu));
      CHECK(all_finite(out.log_var));
    }
  }
  CHECK(tested == 20);
}

TEST_CASE("cbam gating") {
  tc::ParameterSet ps(8);
  const auto c1 = Cbam::make(ps, "c1", 4, 2, 3, false);
  const auto c2 = Cbam::make(ps, "c2", 3, 1, 3, true);
  Cbam::Weights w1, w2;
  const auto x1 = randn({4, 10}, 9, false, 50.0);
  const auto x2 = randn({3, 4, 5}, 10, false, 3.0);
  CHECK(c1(x1, &w1).shape() == x1.shape());
  CHECK(c2(x2, &w2).shape() == x2.shape());
  CHECK(in_unit_interval(w1.channel));
  CHECK(in_unit_interval(w1.spatial));
  CHECK(in_unit_interval(w2.channel));
  CHECK(in_unit_interval(w2.spatial));
  for (double v : vals(c1(Tensor::zeros({4, 10}))) ) CHECK(v == 0.0);
  for (double v : vals(c2(Tensor::zeros({3, 4, 5})))) CHECK(v == 0.0);
  CHECK_THROWS_AS(Cbam::make(ps, "bad", 2, 3, 3, false), ValidationError);

  tc::ParameterSet gp(12);
  const auto g = Cbam::make(gp, "g", 2, 1, 3, false);
  // distinct values so max-pooling has no ties
  auto x = Tensor::from({2, 5}, {0.3, -1.2, 0.8, 1.9, -0.4, 1.1, 0.05, -0.7, 0.6, -1.6}, true);
  auto params = all_params(gp);
  params.push_back(x);
  CHECK(tc::finite_difference_check([&] { return probe(g(x)); }, params).max_rel_error < 1e-4);
}

TEST_CASE("mfpf unit") {
  tc::ParameterSet ps(3);
  const auto u = MfpfUnit::make(ps, "m", 2, 3);
  CHECK(u(randn({2, 6, 8}, 1)).shape() == Shape{9, 6, 8});
  CHECK_THROWS_AS(u(randn({2, 5, 8}, 1)), ValidationError);
  CHECK_THROWS_AS(u(randn({2, 2, 8}, 1)), ValidationError);

  // identity kernels: centre tap 1, zero bias
  tc::ParameterSet ps1(4);
  auto id = MfpfUnit::make(ps1, "m", 1, 1);
  for (auto* conv : {&id.path_a, &id.path_b, &id.path_c}) {
    auto w = conv->weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    w[4] = 1.0;
  }
  // interior rows/cols only: zero padding touches the border
  const auto out = id(Tensor::full({1, 8, 8}, 2.5));
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 2; i < 6; ++i)
      for (std::size_t j = 2; j < 6; ++j) CHECK(out[ch * 64 + i * 8 + j] == doctest::Approx(2.5).epsilon(1e-14));

  tc::ParameterSet gp(5);
  const auto g = MfpfUnit::make(gp, "g", 1, 2);
  auto x = randn({1, 4, 4}, 6, true);
  auto params = all_params(gp);
  params.push_back(x);
  CHECK(tc::finite_difference_check([&] { return probe(g(x)); }, params).max_rel_error < 1e-4);
}

TEST_CASE("rc block") {
  tc::ParameterSet ps(6);
  auto rc = RcBlock::make(ps, "rc", 2, 2, 3, 10);
  CHECK(rc(randn({2, 6, 10}, 1), true).shape() == Shape{3, 6, 10});
  CHECK(rc(randn({2, 6, 10}, 2), false).shape() == Shape{3, 6, 10});
  tc::ParameterSet fresh_ps(6);
  auto fresh = RcBlock::make(fresh_ps, "rc", 2, 2, 3, 10);
  for (double v : vals(fresh(Tensor::zeros({2, 6, 10}), false))) CHECK(v == 0.0);
  CHECK_THROWS_AS(RcBlock::make(ps, "bad", 2, 0, 3, 10), ValidationError);

  tc::ParameterSet gp(7);
  auto g = RcBlock::make(gp, "g", 1, 2, 2, 6);
  auto x = randn({1, 4, 6}, 8, true);
  auto params = all_params(gp);
  params.push_back(x);
  CHECK(tc::finite_difference_check([&] { return probe(g(x, true)); }, params).max_rel_error < 1e-4);
}

TEST_CASE("ffc unit") {
  tc::ParameterSet ps(9);
  const auto f = FfcUnit::make(ps, "f", 6, 4, 3, 5);
  Tensor w;
  const auto y = f(randn({6, 8, 10}, 1, false, 4.0), &w);
  CHECK(y.shape() == Shape{4, 3, 5});
  CHECK(w.shape() == Shape{6, 1, 10});
  CHECK(in_unit_interval(w));
  for (double v : vals(f(Tensor::zeros({6, 8, 10})))) CHECK(v == 0.0);
  CHECK_THROWS_AS(f(randn({6, 2, 10}, 1)), ValidationError);

  tc::ParameterSet gp(10);
  const auto g = FfcUnit::make(gp, "g", 4, 2, 2, 2);
  auto x = randn({4, 4, 4}, 11, true);
  auto params = all_params(gp);
  params.push_back(x);
  CHECK(tc::finite_difference_check([&] { return probe(g(x)); }, params).max_rel_error < 1e-4);
}

TEST_CASE("ssm block is causal") {
  tc::ParameterSet ps(11);
  const auto s = SsmBlock::make(ps, "s", 4, 3);
  const auto x = randn({6, 4}, 1);
  const auto y = s(x);
  CHECK(y.shape() == Shape{6, 4});
  for (std::size_t t = 0; t < 6; ++t) {
    auto xp = x.detach();
    for (std::size_t d = 0; d < 4; ++d) xp.mutable_data()[t * 4 + d] += 0.7 * double(d + 1);
    const auto yp = s(xp);
    for (std::size_t i = 0; i < t * 4; ++i) CHECK(yp[i] == y[i]);
    if (t < 5) {
      bool later_changed = false;
      for (std::size_t i = (t + 1) * 4; i < 24; ++i) later_changed |= yp[i] != y[i];
      CHECK(later_changed);
    }
  }
  CHECK_THROWS_AS(SsmBlock::make(ps, "bad", 4, 0), ValidationError);
}

TEST_CASE("ssm block forgets its state when decay is extreme") {
  tc::ParameterSet ps(12);
  auto s = SsmBlock::make(ps, "s", 3, 2);
  for (double& v : s.a_log.mutable_data()) v = 12.0;
  // keep step sizes well above zero so delta * A is hugely negative
  for (double& v : s.delta.bias.mutable_data()) v = 4.0;
  const auto x = randn({3, 3}, 2);
  const auto y = s(x);
  auto xp = x.detach();
  for (std::size_t d = 0; d < 3; ++d) xp.mutable_data()[d] += 1.5;
  const auto yp = s(xp);
  for (std::size_t i = 3; i < 9; ++i) CHECK(yp[i] == y[i]);
}

TEST_CASE("ssm block gradient") {
  tc::ParameterSet gp(13);
  const auto g = SsmBlock::make(gp, "g", 3, 2);
  auto x = randn({4, 3}, 14, true);
  auto params = all_params(gp);
  params.push_back(x);
  CHECK(tc::finite_difference_check([&] { return probe(g(x)); }, params).max_rel_error < 1e-4);
}

TEST_CASE("acr branch gradient at input length 64") {
  Model model(toy_cfg());
  auto v = randn({64}, 20, true);
  auto params = all_params(model.params());
  params.push_back(v);
  const auto r = sampled_check([&] { return probe(model.acr_forward(v)); }, params, 40, 1);
  CHECK(r.checked == 40);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("pmtf branch gradient at map 8x16") {
  auto cfg = toy_cfg();
  CHECK(cfg.pmtf.trimmed_frames() == 8);
  CHECK(cfg.pmtf.trimmed_bins() == 16);
  Model model(cfg);
  auto m = randn({9, 16}, 21, true);
  auto params = all_params(model.params());
  params.push_back(m);
  const auto r = sampled_check([&] { return probe(model.pmtf_forward(m, true)); }, params, 40, 2);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("full model gradient on 20 random parameters") {
  for (auto task : {Task::regression, Task::classification}) {
    Model model(toy_cfg(task));
    const auto v = randn({64}, 22), m = randn({9, 16}, 23);
    const auto f = [&] {
      const auto out = model.forward(v, m, true);
      return task == Task::regression ? tc::add(probe(out.mu), probe(out.log_var, 7)) : probe(out.logits);
    };
    const auto r = sampled_check(f, all_params(model.params()), 20, 3);
    CHECK(r.checked == 20);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("pmtf tolerates an all-zero map") {
  Model model(toy_cfg());
  CHECK(all_finite(model.pmtf_forward(Tensor::zeros({9, 16}), true)));
  CHECK(all_finite(model.pmtf_forward(Tensor::zeros({9, 16}), false)));
}

TEST_CASE("different inputs give distinct finite features") {
  Model model(toy_cfg());
  const auto a = randn({64}, 30);
  auto b = a.detach();
  for (std::size_t i = 40; i < 64; ++i) b.mutable_data()[i] = 0.0;
  const auto fa = model.acr_forward(a), fb = model.acr_forward(b);
  CHECK(all_finite(fa));
  CHECK(all_finite(fb));
  CHECK(vals(fa) != vals(fb));
}

TEST_CASE("the head consumes both branches") {
  Model model(toy_cfg());
  const auto a = model.acr_forward(randn({64}, 40));
  const auto p = model.pmtf_forward(randn({9, 16}, 41), false);
  const auto full = model.head_forward(tc::concat({a, p}, 1));
  const auto no_acr = model.head_forward(tc::concat({Tensor::zeros({1, 8}), p}, 1));
  const auto no_pmtf = model.head_forward(tc::concat({a, Tensor::zeros({1, 8})}, 1));
  CHECK(vals(full.mu) != vals(no_acr.mu));
  CHECK(vals(full.mu) != vals(no_pmtf.mu));
}

TEST_CASE("fixed seed and config give bit-identical outputs") {
  const auto v = randn({64}, 50), m = randn({9, 16}, 51);
  Model a(toy_cfg()), b(toy_cfg());
  CHECK(vals(a.forward(v, m, false).mu) == vals(b.forward(v, m, false).mu));
  auto other = toy_cfg();
  other.seed = 6;
  CHECK(vals(Model(other).forward(v, m, false).mu) != vals(a.forward(v, m, false).mu));
}

TEST_CASE("paper-stated layer counts are the defaults") {
  const PdvfnConfig c;
  CHECK(c.acr.gru_layers == 4);
  CHECK(c.pmtf.ssm_blocks == 4);
}

TEST_CASE("model config key=value round trip and rejection") {
  auto cfg = toy_cfg(Task::classification);
  const auto back = PdvfnConfig::from_kv(io::KeyValue::parse(cfg.to_kv().serialize()));
  CHECK(back.to_kv().serialize() == cfg.to_kv().serialize());
  CHECK(back.pmtf.map_frames == 9);
  CHECK_THROWS_AS(PdvfnConfig::from_kv(io::KeyValue::parse("gru_hiden = 3\n")), ValidationError);
  CHECK_THROWS_AS(PdvfnConfig::from_kv(io::KeyValue::parse("gru_hidden = 3\nattn_heads = 4\n")), ValidationError);
  CHECK_THROWS_AS(PdvfnConfig::from_kv(io::KeyValue::parse("acr_channels = 4,4\n")), ValidationError);
  CHECK(parse_targets("all").size() == 4);
  CHECK(parse_targets("feh,ch") == std::vector<Target>{Target::feh, Target::ch});
  CHECK_THROWS(parse_targets("mass"));
}
