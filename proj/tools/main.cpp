#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csasr/experiment.hpp"

using namespace csasr;

namespace {

// nonzero exits carry a machine-readable record on stderr
int fail(const std::string& what) {
  std::cerr << "{\"error\":\"";
  for (char c : what) {
    if (c == '"' || c == '\\') std::cerr << '\\';
    if (c == '\n') { std::cerr << "\\n"; continue; }
    std::cerr << c;
  }
  std::cerr << "\"}\n";
  return 1;
}

struct StageArgs {
  std::string config;
  std::string stage_dir = "exp/default";
  int64_t seed = -1;
  bool force = false;
};

void add_stage_options(CLI::App* cmd, StageArgs& a) {
  cmd->add_option("--config", a.config, "experiment config file")->required();
  cmd->add_option("--stage-dir", a.stage_dir, "experiment directory");
  cmd->add_option("--seed", a.seed, "override training/mix seeds");
  cmd->add_flag("--force", a.force, "rerun even if the stage looks complete");
}

int run_stage(const StageArgs& a, const std::string& stage) {
  ExperimentConfig cfg = ExperimentConfig::load(a.config);
  if (a.seed >= 0) {
    std::string s = std::to_string(a.seed);
    cfg.set("mix.seed", s);
    cfg.set("pretrain.seed", s);
    cfg.set("finetune.seed", s);
  }
  if (stage == "prepare") {
    // print the data summary the rest of the pipeline will train on
    for (const char* key : {"data.native", "data.nonnative", "data.cs"}) {
      std::string path = cfg.get(key, "");
      if (path.empty()) continue;
      for (const auto& [tag, hours] : manifest_hours(parse_manifest(path)))
        std::cout << key << ": " << hours << " h (" << tag << ")\n";
    }
  }
  run_pipeline(cfg, a.stage_dir, {stage}, a.force);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"code-switching ASR pipeline"};
  app.require_subcommand(1);

  // stage subcommand name -> pipeline stage name
  const std::vector<std::pair<std::string, std::string>> stage_cmds = {
      {"prepare", "prepare"},   {"bpe-train", "bpe"},
      {"lm-train", "lm"},       {"pretrain", "pretrain"},
      {"finetune", "finetune"}, {"decode", "decode"},
      {"score", "score"},
  };
  std::map<const CLI::App*, std::string> stage_of;
  StageArgs args;
  for (const auto& [cmd, stage] : stage_cmds) {
    CLI::App* sub = app.add_subcommand(cmd, "run the " + stage + " stage");
    add_stage_options(sub, args);
    stage_of[sub] = stage;
  }

  std::string toy_out = "toy_data";
  int64_t toy_seed = 7;
  int toy_size = 32;
  CLI::App* toy = app.add_subcommand("toy-data", "generate the synthetic toy dataset");
  toy->add_option("--out", toy_out, "output directory");
  toy->add_option("--seed", toy_seed, "generation seed");
  toy->add_option("--size", toy_size, "utterances per pool");

  CLI11_PARSE(app, argc, argv);

  try {
    const CLI::App* sub = app.get_subcommands().at(0);
    if (sub == toy) {
      make_toy_dataset(toy_out, uint64_t(toy_seed), toy_size);
      std::cout << "wrote " << toy_size << " utterances per pool to " << toy_out
                << "\n";
      return 0;
    }
    return run_stage(args, stage_of.at(sub));
  } catch (const std::exception& e) {
    return fail(e.what());
  }
}
