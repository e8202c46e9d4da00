#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "dacca/config.hpp"
#include "dacca/errors.hpp"
#include "dacca/runner.hpp"

namespace {

dacca::RunConfig load_config(const std::string& config_file,
                             const std::vector<std::string>& overrides) {
  dacca::RunConfig config;
  if (!config_file.empty()) config = dacca::parse_config_file(config_file);
  for (const std::string& entry : overrides) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos)
      throw dacca::config_error("--set expects key=value, got '" + entry +
                                "'");
    dacca::apply_config_entry(config, entry.substr(0, eq),
                              entry.substr(eq + 1));
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DACCA: domain-adaptive lane detection on synthetic data"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "config file (key = value lines)");
  app.add_option("--set", overrides, "override a config entry (key=value)");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  dacca::GenDataArgs gen_args;
  gen->add_option("--out", gen_args.out_dir, "output directory")->required();
  gen->add_option("--domain", gen_args.domain, "source or target");
  gen->add_option("--count", gen_args.count, "number of scenes");
  gen->add_option("--seed", gen_args.seed, "generation seed");
  gen->add_flag("--hide-labels", gen_args.hide_labels,
                "write 255 label masks (UDA target training split)");
  gen->add_flag("--force", gen_args.force, "overwrite a non-empty directory");

  auto* pre = app.add_subcommand("pretrain", "source-only supervised training");
  dacca::PretrainArgs pre_args;
  pre->add_option("--source", pre_args.source_dir, "labeled source dataset")
      ->required();
  pre->add_option("--out", pre_args.out_checkpoint, "output checkpoint")
      ->required();
  pre->add_option("--iters", pre_args.iters, "training iterations");
  pre->add_option("--seed", pre_args.seed, "training seed");
  pre->add_option("--csv", pre_args.csv_path, "loss CSV path");
  pre->add_option("--init", pre_args.init_checkpoint,
                  "resume from this checkpoint");

  auto* adapt = app.add_subcommand("adapt", "run domain adaptation");
  dacca::AdaptArgs adapt_args;
  std::vector<std::string> ablate_list;
  adapt->add_option("--source", adapt_args.source_dir, "labeled source dataset")
      ->required();
  adapt->add_option("--target", adapt_args.target_dir,
                    "hidden-label target dataset")
      ->required();
  adapt->add_option("--init", adapt_args.init_checkpoint,
                    "initial checkpoint (from pretrain)")
      ->required();
  adapt->add_option("--out", adapt_args.out_checkpoint, "output checkpoint")
      ->required();
  adapt->add_option("--iters", adapt_args.iters, "adaptation iterations");
  adapt->add_option("--seed", adapt_args.seed, "training seed");
  adapt->add_option("--csv", adapt_args.csv_path, "loss CSV path");
  adapt->add_option("--ablate", ablate_list,
                    "disable components: ccl, dfa, ubp (comma separated)")
      ->delimiter(',');

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  dacca::EvalArgs eval_args;
  eval->add_option("--ckpt", eval_args.checkpoint, "checkpoint")->required();
  eval->add_option("--data", eval_args.data_dir, "evaluation dataset")
      ->required();
  eval->add_option("--report", eval_args.report_csv, "report CSV")->required();
  eval->add_option("--svg", eval_args.svg_path,
                   "optional SVG report (histogram + overlays)");

  auto* cfg_cmd = app.add_subcommand("config", "inspect the configuration");
  bool dump = false;
  cfg_cmd->add_flag("--dump", dump, "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const dacca::RunConfig config = load_config(config_file, overrides);
    if (gen->parsed()) {
      dacca::run_gen_data(config, gen_args);
    } else if (pre->parsed()) {
      dacca::run_pretrain(config, pre_args);
    } else if (adapt->parsed()) {
      adapt_args.ablate.insert(ablate_list.begin(), ablate_list.end());
      adapt_args.ablate.erase("none");
      dacca::run_adapt(config, adapt_args);
    } else if (eval->parsed()) {
      dacca::EvalSummary s = dacca::run_eval(config, eval_args);
      std::printf(
          "images=%d accuracy=%.4f fp=%.4f fn=%.4f precision=%.4f "
          "recall=%.4f f1=%.4f\n",
          s.images, s.accuracy, s.fp_rate, s.fn_rate, s.precision, s.recall,
          s.f1);
    } else if (cfg_cmd->parsed()) {
      if (dump) std::fputs(dacca::dump_config(config).c_str(), stdout);
    }
  } catch (const dacca::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const dacca::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const dacca::contract_error& e) {
    std::fprintf(stderr, "contract violation: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
