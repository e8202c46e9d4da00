#ifndef DACCA_RUNNER_HPP
#define DACCA_RUNNER_HPP

#include <set>
#include <string>

#include "dacca/config.hpp"

namespace dacca {

struct GenDataArgs {
  std::string out_dir;
  std::string domain = "source";
  long long count = -1;  // -1: config gen_count
  long long seed = -1;   // -1: config seed
  bool hide_labels = false;
  bool force = false;
};

void run_gen_data(const RunConfig& config, const GenDataArgs& args);

struct PretrainArgs {
  std::string source_dir;
  std::string out_checkpoint;
  std::string csv_path;        // empty: next to the checkpoint
  std::string init_checkpoint; // resume point, optional
  long long iters = -1;        // -1: config pretrain_iters
  long long seed = -1;
};

void run_pretrain(const RunConfig& config, const PretrainArgs& args);

struct AdaptArgs {
  std::string source_dir;
  std::string target_dir;
  std::string init_checkpoint;
  std::string out_checkpoint;
  std::string csv_path;
  long long iters = -1;  // -1: config adapt_iters
  long long seed = -1;
  std::set<std::string> ablate;  // subsets of {ccl, dfa, ubp}
};

void run_adapt(const RunConfig& config, const AdaptArgs& args);

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string report_csv;
  std::string svg_path;  // optional
};

struct EvalSummary {
  double accuracy = 0.0;
  double fp_rate = 0.0;
  double fn_rate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long tp = 0, fp = 0, fn = 0;
  int images = 0;
};

EvalSummary run_eval(const RunConfig& config, const EvalArgs& args);

}  // namespace dacca

#endif
