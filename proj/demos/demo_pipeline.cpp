// Runs the whole pipeline on a small synthetic corpus and prints the
// headline numbers from the resulting metrics report.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "histcode/pipeline.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const std::string root =
      argc > 1 ? argv[1] : (fs::temp_directory_path() / "histcode_demo")
                               .string();

  histcode::Config cfg = histcode::Config::from_string(
      "paths.data = " + root + "/data\n" +
      "paths.out = " + root + "/out\n" +
      "synth.n_patients = 6\n"
      "synth.slide_px = 768\n"
      "pretrain.epochs = 2\n"
      "pretrain.bank_size = 64\n"
      "mil.pools = gated,mean\n"
      "eval.k = 3\n"
      "de.l = 4\n");
  histcode::RunOptions opt{7, 2, false};

  std::printf("workspace: %s\n", root.c_str());
  histcode::run_synth(cfg, opt);
  std::printf("synth done\n");
  histcode::run_tile(cfg, opt);
  std::printf("tile done\n");
  histcode::run_pretrain(cfg, opt);
  std::printf("pretrain done\n");
  histcode::run_train_diag(cfg, opt);
  std::printf("train-diag done\n");
  histcode::run_train_de(cfg, opt);
  std::printf("train-de done\n");
  histcode::run_eval(cfg, opt);
  histcode::run_heatmap(cfg, opt);

  std::ifstream in(root + "/out/eval/metrics.json");
  nlohmann::json m;
  in >> m;
  for (auto& [pool, d] : m.at("diagnosis").items())
    std::printf("%-5s pooling: auc %.3f accuracy %.3f\n", pool.c_str(),
                d.at("auc").get<double>(), d.at("accuracy").get<double>());
  for (auto& [gene, g] : m.at("diffexpr").at("genes").items())
    if (!g.at("pearson").is_null())
      std::printf("%-8s pearson %+.3f\n", gene.c_str(),
                  g.at("pearson").get<double>());
  std::printf("full report: %s/out/eval/metrics.json\n", root.c_str());
  return 0;
}
