#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "histcode/pipeline.hpp"

namespace {

struct Cli {
  std::string config_path;
  std::int64_t seed = -1;  // <0 = not given
  int workers = 0;         // 0 = not given
  bool deterministic = false;
};

histcode::RunOptions resolve_options(const Cli& cli,
                                     const histcode::Config& cfg) {
  histcode::RunOptions opt;
  opt.seed = cfg.get_u64("seed", 0);
  if (cli.seed >= 0) opt.seed = static_cast<std::uint64_t>(cli.seed);
  if (const char* env = std::getenv("HISTCODE_SEED")) {
    try {
      std::size_t pos = 0;
      opt.seed = std::stoull(env, &pos, 10);
      if (pos != std::string(env).size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw histcode::ConfigError(std::string("HISTCODE_SEED is not a "
                                              "nonnegative integer: ") +
                                  env);
    }
  }
  opt.workers = static_cast<int>(cfg.get_int("workers", 1));
  if (cli.workers > 0) opt.workers = cli.workers;
  if (opt.workers < 1)
    throw histcode::ConfigError("workers must be >= 1");
  opt.deterministic = cli.deterministic;
  if (opt.deterministic) opt.workers = 1;
  return opt;
}

int run_stage(const std::string& cmd, const Cli& cli) {
  histcode::Config cfg = histcode::Config::load(cli.config_path);
  histcode::pipe::check_config(cfg);
  histcode::RunOptions opt = resolve_options(cli, cfg);

  bool ran = false;
  if (cmd == "synth")
    ran = histcode::run_synth(cfg, opt);
  else if (cmd == "tile")
    ran = histcode::run_tile(cfg, opt);
  else if (cmd == "pretrain")
    ran = histcode::run_pretrain(cfg, opt);
  else if (cmd == "train-diag")
    ran = histcode::run_train_diag(cfg, opt);
  else if (cmd == "train-de")
    ran = histcode::run_train_de(cfg, opt);
  else if (cmd == "eval")
    ran = histcode::run_eval(cfg, opt);
  else if (cmd == "heatmap")
    ran = histcode::run_heatmap(cfg, opt);
  else
    throw histcode::ConfigError("unknown command: " + cmd);

  std::printf("%s: %s\n", cmd.c_str(), ran ? "done" : "up to date");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"histcode: tile, pretrain and evaluate slide pipelines"};
  app.require_subcommand(1);
  app.fallthrough();

  Cli cli;
  app.add_option("--config", cli.config_path, "pipeline config file")
      ->required();
  app.add_option("--seed", cli.seed, "seed override (env HISTCODE_SEED wins)");
  app.add_option("--workers", cli.workers, "worker thread count");
  app.add_flag("--deterministic", cli.deterministic,
               "single-worker, byte-reproducible run");

  static const char* kStages[] = {"synth",    "tile",     "pretrain",
                                  "train-diag", "train-de", "eval",
                                  "heatmap"};
  for (const char* s : kStages) app.add_subcommand(s)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run_stage(cmd, cli);
  } catch (const histcode::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const histcode::MissingUpstreamArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const histcode::NonFinite& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const histcode::NumericalDegeneracy& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const histcode::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
