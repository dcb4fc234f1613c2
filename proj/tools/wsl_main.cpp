#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wsl/commands.hpp"
#include "wsl/error.hpp"

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config, train_config, input, checkpoint, out, task, targets, split, snr_edges;
  std::optional<std::uint64_t> seed;
  std::size_t density_bins = 0;
  double hist_width = 0.0;
  bool quiet = false;
};

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

wsl::cli::Invocation build(const std::string& command, const Flags& f) {
  wsl::cli::Invocation inv;
  inv.command = command;
  inv.seed = f.seed;
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) inv.args[key] = v;
  };
  put("input", absolute(f.input));
  put("checkpoint", absolute(f.checkpoint));
  put("task", f.task);
  put("targets", f.targets);
  put("split", f.split);
  put("snr_edges", f.snr_edges);
  if (f.density_bins) inv.args["density_bins"] = std::to_string(f.density_bins);
  if (f.hist_width > 0.0) inv.args["hist_width"] = std::to_string(f.hist_width);
  if (f.quiet) inv.args["quiet"] = "1";
  const char* config_name = command == "generate"     ? "generator"
                            : command == "preprocess" ? "pipeline"
                            : command == "train"      ? "model"
                                                      : nullptr;
  if (!f.config.empty()) {
    if (!config_name) throw wsl::UsageError(command + " takes no --config");
    inv.configs[config_name] = wsl::io::KeyValue::load(f.config);
  }
  if (!f.train_config.empty()) inv.configs["train"] = wsl::io::KeyValue::load(f.train_config);
  return inv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weak-signal spectra pipeline"};
  app.require_subcommand(1);
  Flags f;
  std::string manifest;

  auto add_common = [&](CLI::App* sub, bool takes_config) {
    sub->add_option("--out", f.out, "output directory")->required();
    if (takes_config) sub->add_option("--config", f.config, "key=value config file");
  };
  auto* gen = app.add_subcommand("generate", "synthesize a labeled, split raw corpus");
  add_common(gen, true);
  gen->add_option("--seed", f.seed, "master seed, fanned out per stage");

  auto* pre = app.add_subcommand("preprocess", "run the preprocessing pipeline over a raw corpus");
  add_common(pre, true);
  pre->add_option("--input", f.input, "raw corpus directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a processed corpus");
  add_common(tr, true);
  tr->add_option("--input", f.input, "processed corpus directory")->required();
  tr->add_option("--train-config", f.train_config, "optimizer and schedule config");
  tr->add_option("--task", f.task, "regression or classification")->check(CLI::IsMember({"regression", "classification"}));
  tr->add_option("--targets", f.targets, "all, or a comma list of teff,logg,feh,ch");
  tr->add_option("--seed", f.seed, "master seed, fanned out per stage");
  tr->add_flag("--quiet", f.quiet, "no per-epoch progress");

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint and write metric and bin tables");
  add_common(ev, false);
  ev->add_option("--input", f.input, "processed corpus directory")->required();
  ev->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  ev->add_option("--split", f.split, "split used for the bin tables (default test)");
  ev->add_option("--snr-edges", f.snr_edges, "comma separated SNR bin edges");
  ev->add_option("--density-bins", f.density_bins, "bins per axis of the abundance grid");

  auto* rep = app.add_subcommand("report", "turn evaluation outputs into plot-ready tables");
  add_common(rep, false);
  rep->add_option("--input", f.input, "evaluate output directory")->required();
  rep->add_option("--hist-width", f.hist_width, "SNR histogram bin width");

  auto* rp = app.add_subcommand("replay", "re-run a recorded stage and verify its checksums");
  rp->add_option("manifest", manifest, "run_manifest.txt of the recorded run")->required();
  rp->add_option("--out", f.out, "output directory (default: the manifest's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : wsl::exit_code(wsl::ErrorKind::usage);
  }

  try {
    if (rp->parsed()) {
      const fs::path out = f.out.empty() ? fs::absolute(manifest).parent_path() : fs::path(f.out);
      const auto m = wsl::cli::replay(manifest, out);
      std::cout << "replayed " << m.invocation.command << ": " << m.outputs.size() << " outputs match\n";
      return 0;
    }
    const auto* sub = app.get_subcommands().front();
    const auto m = wsl::cli::run(build(sub->get_name(), f), f.out);
    for (const auto& [name, sum] : m.outputs) std::cout << name << "  " << sum << "\n";
    return 0;
  } catch (const wsl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return wsl::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
