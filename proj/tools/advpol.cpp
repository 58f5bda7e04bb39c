// advpol command-line driver.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "advpol/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::filesystem::path default_out(const std::string& command) {
  const char* root = std::getenv("ADVPOL_OUT");
  return std::filesystem::path(root && *root ? root : "runs") / command;
}

advpol::EntrantSpec parse_opponent(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw advpol::ConfigError("--opponent expects LABEL=PATH, LABEL=rand or LABEL=zero, got '" + s + "'");
  advpol::EntrantSpec e;
  e.label = s.substr(0, eq);
  const std::string v = s.substr(eq + 1);
  if (v == "rand")
    e.baseline = advpol::BaselineKind::Rand;
  else if (v == "zero")
    e.baseline = advpol::BaselineKind::Zero;
  else
    e.checkpoint = v;
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial policies workbench: self-play victims, attacks, evaluation and activation analysis"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool deterministic = false;
  bool no_plots = false;
  bool quiet = false;
  std::string victim;
  std::vector<std::string> opponents;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (YAML)")->required();
    sub->add_option("--out", out, "Output directory (default $ADVPOL_OUT/<command> or runs/<command>)");
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          seed = s;
          seed_given = true;
        },
        "Override the config seed");
    sub->add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");
    sub->add_flag("--no-plots", no_plots, "Skip SVG figures");
    sub->add_flag("-q,--quiet", quiet, "Suppress progress messages");
  };
  auto* tv = app.add_subcommand("train-victim", "Train victim and opponent by self-play");
  auto* ta = app.add_subcommand("train-adversary", "Train an adversarial policy against a frozen victim");
  auto* ev = app.add_subcommand("evaluate", "Build a score grid of opponents against victims");
  auto* an = app.add_subcommand("analyze", "Victim activation analysis (GMM likelihoods, t-SNE)");
  auto* sw = app.add_subcommand("sweep-dim", "Attack success as a function of pose_dim");
  for (auto* s : {tv, ta, ev, an, sw}) common(s);
  ta->add_option("--victim", victim, "Victim checkpoint (overrides adversary.victim_checkpoint)");
  an->add_option("--victim", victim, "Victim checkpoint (overrides analysis.victim)");
  an->add_option("--opponent", opponents, "Extra probe opponent as LABEL=PATH|rand|zero");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    advpol::RunContext ctx;
    ctx.config = advpol::load_config(config_path);
    if (seed_given) ctx.config.seed = seed;
    ctx.out = out.empty() ? default_out(command) : std::filesystem::path(out);
    ctx.deterministic = deterministic;
    ctx.plots = !no_plots;
    ctx.command = command;
    if (!quiet) ctx.log = [](const std::string& s) { std::cerr << s << '\n'; };

    if (sub == tv) {
      advpol::cmd_train_victim(ctx);
    } else if (sub == ta) {
      advpol::cmd_train_adversary(ctx, victim);
    } else if (sub == ev) {
      advpol::cmd_evaluate(ctx);
    } else if (sub == an) {
      std::vector<advpol::EntrantSpec> extra;
      for (const auto& o : opponents) extra.push_back(parse_opponent(o));
      advpol::cmd_analyze(ctx, extra, victim);
    } else {
      advpol::cmd_sweep_dim(ctx);
    }
    if (!quiet) std::cerr << "wrote " << (ctx.out / "manifest.json").string() << '\n';
    return kExitOk;
  } catch (const advpol::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const advpol::NumericalFault& e) {
    std::cerr << "numerical fault at step " << e.step() << ": " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}
