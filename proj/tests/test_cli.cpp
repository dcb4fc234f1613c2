#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wsl/commands.hpp"
#include "wsl/corpus.hpp"
#include "wsl/error.hpp"
#include "wsl/io.hpp"
#include "wsl/rng.hpp"
#include "wsl/synth.hpp"

#ifndef WSL_EXE
#error "WSL_EXE must point at the wsl binary"
#endif

namespace fs = std::filesystem;
using namespace wsl;
using cli::Invocation;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("wsl_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

io::KeyValue small_generator(std::uint64_t seed) {
  return io::KeyValue::parse("n_samples = 60\nclass_proportions = 0.5,0.1,0.4\ngrid_min = 3800\ngrid_max = 9000\n"
                             "grid_points = 700\nseed = " +
                             std::to_string(seed) + "\n");
}

io::KeyValue toy_model() {
  return io::KeyValue::parse(
      "input_length = 64\nstft_window = 30\nstft_hop = 8\nacr_channels = 4,4,8\nacr_kernels = 7,5,3\n"
      "acr_strides = 2,2,2\ncbam_reduction = 2\ncbam_kernel = 3\ngru_hidden = 4\ngru_layers = 4\nattn_heads = 2\n"
      "acr_output_dim = 8\nmfpf_channels = 2\nrc_ratio = 2\nrc_channels = 2\nffc_channels = 4\nffc_target_h = 4\n"
      "ffc_target_w = 4\nssm_dim = 8\nssm_blocks = 4\nssm_state = 4\npmtf_output_dim = 8\nhead_hidden = 8\n"
      "model_seed = 3\n");
}

io::KeyValue short_train(int epochs) {
  return io::KeyValue::parse("lr0 = 0.003\nepochs = " + std::to_string(epochs) + "\nbatch_size = 8\nseed = 5\n");
}

Invocation generate(std::uint64_t seed) {
  Invocation inv;
  inv.command = "generate";
  inv.configs["generator"] = small_generator(seed);
  return inv;
}

Invocation preprocess(const fs::path& in) {
  Invocation inv;
  inv.command = "preprocess";
  inv.args["input"] = in.string();
  inv.configs["pipeline"] = io::KeyValue::parse("target_length = 128\n");
  return inv;
}

Invocation train(const fs::path& in, const std::string& task, int epochs) {
  Invocation inv;
  inv.command = "train";
  inv.args["input"] = in.string();
  inv.args["task"] = task;
  inv.args["quiet"] = "1";
  inv.configs["model"] = toy_model();
  inv.configs["train"] = short_train(epochs);
  return inv;
}

Invocation evaluate(const fs::path& in, const fs::path& ckpt) {
  Invocation inv;
  inv.command = "evaluate";
  inv.args["input"] = in.string();
  inv.args["checkpoint"] = ckpt.string();
  return inv;
}

int run_exe(const std::string& args) {
  const std::string cmd = std::string(WSL_EXE) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> metric_lines(const fs::path& p) {
  std::map<std::string, std::string> m;
  std::istringstream in(io::read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

// shared small pipeline, built once
struct Pipeline {
  fs::path root, raw, proc, reg, reg_eval, rep;
  Pipeline() {
    root = scratch("pipeline");
    raw = root / "raw";
    proc = root / "proc";
    reg = root / "reg";
    reg_eval = root / "reg_eval";
    rep = root / "rep";
    cli::run(generate(17), raw);
    cli::run(preprocess(raw), proc);
    cli::run(train(proc, "regression", 6), reg);
    cli::run(evaluate(proc, reg / cli::kCheckpointName), reg_eval);
    Invocation r;
    r.command = "report";
    r.args["input"] = reg_eval.string();
    cli::run(r, rep);
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("generate is deterministic per seed and writes a checksummed manifest") {
  const auto a = scratch("gen_a"), b = scratch("gen_b"), c = scratch("gen_c");
  const auto ma = cli::run(generate(9), a);
  const auto mb = cli::run(generate(9), b);
  const auto mc = cli::run(generate(10), c);
  CHECK(ma.outputs == mb.outputs);
  CHECK(ma.outputs.at(cli::kFluxName) != mc.outputs.at(cli::kFluxName));
  for (const auto& [name, sum] : ma.outputs) CHECK(io::sha256_file(a / name) == sum);
  const auto back = cli::RunManifest::load(a / cli::kRunManifestName);
  CHECK(back.outputs == ma.outputs);
  CHECK(back.invocation.configs.at("generator").entries() == small_generator(9).entries());
  CHECK(back.seeds.at("synth") == 9);
}

TEST_CASE("one --seed fans out to distinct stage seeds") {
  auto inv = generate(9);
  inv.seed = 123;
  const auto m = cli::run(inv, scratch("gen_seed"));
  CHECK(m.seeds.at("synth") == cli::stage_seed(123, "synth"));
  CHECK(m.seeds.at("split") == cli::stage_seed(m.seeds.at("synth"), "split"));
  CHECK(m.seeds.at("synth") != m.seeds.at("split"));
  CHECK(cli::stage_seed(123, "model") != cli::stage_seed(123, "shuffle"));
}

TEST_CASE("desk generator config gives 1316 samples split 7:1:2") {
  const auto dir = scratch("desk");
  Invocation inv;
  inv.command = "generate";
  inv.configs["generator"] = io::KeyValue::load(fs::path(WSL_SOURCE_DIR) / "configs/desk_generator.cfg");
  inv.configs["generator"].set("grid_points", "200");
  cli::run(inv, dir);
  const auto c = corpus::load_corpus(dir);
  REQUIRE(c.size() == 1316);
  const auto n_train = corpus::indices_of(c.manifest, catalog::Split::train).size();
  const auto n_val = corpus::indices_of(c.manifest, catalog::Split::val).size();
  const auto n_test = corpus::indices_of(c.manifest, catalog::Split::test).size();
  CHECK(std::abs(double(n_train) - 921.0) <= 1.0);
  CHECK(std::abs(double(n_val) - 131.0) <= 1.0);
  CHECK(std::abs(double(n_test) - 264.0) <= 1.0);
  CHECK(n_train + n_val + n_test == 1316);
}

TEST_CASE("preprocess writes the target width and is idempotent") {
  const auto& p = pipeline();
  const auto c = corpus::load_corpus(p.proc);
  CHECK(c.width() == 128);
  CHECK(c.manifest.header.get_string("stage", "") == "processed");
  const auto again = cli::run(preprocess(p.raw), scratch("proc_again"));
  CHECK(again.outputs == cli::RunManifest::load(p.proc / cli::kRunManifestName).outputs);
}

TEST_CASE("corrupt flux length names the offending record") {
  const auto dir = scratch("corrupt");
  cli::run(generate(4), dir);
  const auto c = corpus::load_corpus(dir);
  const auto flux = dir / cli::kFluxName;
  // cut into the middle of row 7
  fs::resize_file(flux, (7 * c.width() + 3) * 4);
  try {
    cli::run(preprocess(dir), scratch("corrupt_out"));
    FAIL("expected an integrity error");
  } catch (const IntegrityError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("id " + std::to_string(c.manifest.records[7].id)) != std::string::npos);
  }
}

TEST_CASE("train logs every epoch and the task selects the head") {
  const auto& p = pipeline();
  const auto log = io::read_text(p.reg / cli::kLossLogName);
  CHECK(std::count(log.begin(), log.end(), '\n') == 6 + 1);

  const auto cls = scratch("cls");
  cli::run(train(p.proc, "classification", 1), cls);
  const auto ev = scratch("cls_eval");
  cli::run(evaluate(p.proc, cls / cli::kCheckpointName), ev);
  const auto m = metric_lines(ev / cli::kMetricsName);
  CHECK(m.at("task") == "classification");
  for (const char* k : {"test.auc", "test.f1", "test.g_mean", "test.mcc"}) CHECK(m.count(k) == 1);
  const auto header = io::read_text(ev / cli::kPredictionsName).substr(0, 60);
  CHECK(header.find("p_nmp\tp_cemp\tp_cnmp") != std::string::npos);

  auto single = train(p.proc, "regression", 1);
  single.args["targets"] = "feh";
  const auto one = scratch("feh");
  cli::run(single, one);
  const auto ev1 = scratch("feh_eval");
  cli::run(evaluate(p.proc, one / cli::kCheckpointName), ev1);
  const auto m1 = metric_lines(ev1 / cli::kMetricsName);
  CHECK(m1.at("targets") == "feh");
  CHECK(m1.count("test.feh.mae") == 1);
  CHECK(m1.count("test.teff.mae") == 0);
}

TEST_CASE("regression evaluation reports mu, sigma and mae for every target") {
  const auto m = metric_lines(pipeline().reg_eval / cli::kMetricsName);
  CHECK(m.at("task") == "regression");
  for (const char* t : {"teff", "logg", "feh", "ch"})
    for (const char* s : {".mu", ".sigma", ".mae"}) {
      const auto key = std::string("test.") + t + s;
      REQUIRE(m.count(key) == 1);
      CHECK(std::isfinite(std::stod(m.at(key))));
    }
  CHECK(m.count("test.auc") == 0);
}

TEST_CASE("evaluate rejects a corpus narrower than the checkpoint input") {
  const auto& p = pipeline();
  auto narrow = preprocess(p.raw);
  narrow.configs["pipeline"].set("target_length", "40");
  const auto dir = scratch("narrow");
  cli::run(narrow, dir);
  try {
    cli::run(evaluate(dir, p.reg / cli::kCheckpointName), scratch("narrow_eval"));
    FAIL("expected a dimension error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("model expects 64") != std::string::npos);
  }
}

TEST_CASE("report writes plot tables and reproduces the SNR mass below 50") {
  const auto& p = pipeline();
  for (const char* f : {cli::kMaeVsSnrName, cli::kDensityGridName, cli::kSnrHistName}) CHECK(fs::exists(p.rep / f));
  Invocation r;
  r.command = "report";
  r.args["input"] = p.reg_eval.string();
  const auto again = cli::run(r, scratch("rep_again"));
  CHECK(again.outputs == cli::RunManifest::load(p.rep / cli::kRunManifestName).outputs);

  // large synthetic SNR sample fed through report's histogram
  synth::GeneratorConfig cfg;
  cfg.snr_mixture = synth::default_snr_mixture();
  const double want = cfg.snr_mass_below(50.0);
  CHECK(want > 0.55);
  auto rng = make_rng(77);
  const auto dir = scratch("hist_in");
  std::ostringstream preds;
  preds << "id\tsplit\tsnr\tclass\n";
  for (int i = 0; i < 20000; ++i) preds << i << "\ttest\t" << io::format_double(synth::sample_snr(cfg, rng)) << "\t0\n";
  io::write_text(dir / cli::kPredictionsName, preds.str());
  io::write_text(dir / cli::kSnrBinsName, "lo,hi,count,error\n0,10,0,nan\n");
  io::write_text(dir / cli::kDensityBinsName, "ix,iy,fe_h_lo,fe_h_hi,c_fe_lo,c_fe_hi,count,error\n0,0,0,1,0,1,0,nan\n");
  r.args["input"] = dir.string();
  const auto out = scratch("hist_out");
  cli::run(r, out);
  const auto text = io::read_text(out / cli::kSnrHistName);
  const auto at = text.find("fraction_below_50=");
  REQUIRE(at != std::string::npos);
  const double got = std::stod(text.substr(at + 18));
  CHECK(std::abs(got - want) <= 0.02);
  CHECK(got > 0.55);
}

TEST_CASE("report on an empty directory fails") {
  Invocation r;
  r.command = "report";
  r.args["input"] = scratch("empty").string();
  CHECK_THROWS_AS(cli::run(r, scratch("empty_out")), ValidationError);
}

TEST_CASE("replay reproduces every stage bit-exactly") {
  const auto& p = pipeline();
  for (const auto& dir : {p.raw, p.proc, p.reg, p.reg_eval, p.rep}) {
    const auto fresh = scratch("replay_" + dir.filename().string());
    const auto m = cli::replay(dir / cli::kRunManifestName, fresh);
    CHECK(m.outputs == cli::RunManifest::load(dir / cli::kRunManifestName).outputs);
  }
}

TEST_CASE("replay detects changed inputs and tampered manifests") {
  const auto& p = pipeline();
  const auto copy = scratch("tamper");
  fs::copy(p.raw, copy / "raw");
  auto inv = preprocess(copy / "raw");
  cli::run(inv, copy / "proc");
  {
    std::fstream f(copy / "raw" / cli::kFluxName, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(cli::replay(copy / "proc" / cli::kRunManifestName, scratch("tamper_out")), IntegrityError);

  auto text = io::read_text(p.raw / cli::kRunManifestName);
  const auto at = text.find("output.flux.f32");
  REQUIRE(at != std::string::npos);
  const auto eq = text.find('=', at);
  text[eq + 3] = text[eq + 3] == '0' ? '1' : '0';
  const auto bad = scratch("bad_manifest");
  io::write_text(bad / cli::kRunManifestName, text);
  CHECK_THROWS_AS(cli::replay(bad / cli::kRunManifestName, scratch("bad_out")), IntegrityError);
  io::write_text(bad / cli::kRunManifestName, "not a manifest\n");
  CHECK_THROWS_AS(cli::replay(bad / cli::kRunManifestName, scratch("bad_out2")), IntegrityError);
}

TEST_CASE("exit codes distinguish failure kinds") {
  const auto dir = scratch("exit");
  CHECK(run_exe("") == 2);
  CHECK(run_exe("generate --out " + (dir / "g").string()) == 2);
  CHECK(run_exe("generate --config " + (dir / "missing.cfg").string() + " --out " + (dir / "g").string()) == 2);
  CHECK(run_exe("train --out " + (dir / "t").string()) == 2);
  io::write_text(dir / "bad.cfg", "n_samples = many\n");
  CHECK(run_exe("generate --config " + (dir / "bad.cfg").string() + " --out " + (dir / "g").string()) == 3);
  CHECK(run_exe("report --input " + scratch("exit_empty").string() + " --out " + (dir / "r").string()) == 3);
  io::write_text(dir / "junk_manifest.txt", "junk\n");
  CHECK(run_exe("replay " + (dir / "junk_manifest.txt").string() + " --out " + (dir / "x").string()) == 4);
  const auto& p = pipeline();
  CHECK(run_exe("replay " + (p.raw / cli::kRunManifestName).string() + " --out " + (dir / "ok").string()) == 0);
  CHECK(exit_code(ErrorKind::divergence) == 5);
}
