#ifndef DACCA_SELFTRAIN_HPP
#define DACCA_SELFTRAIN_HPP

#include <cstdint>
#include <vector>

#include "dacca/contrast.hpp"
#include "dacca/labels.hpp"
#include "dacca/model.hpp"
#include "dacca/psmm.hpp"
#include "dacca/tensor.hpp"

namespace dacca {

struct TrainerConfig {
  double ema_beta = 0.9;                // beta
  double pseudo_label_threshold = 0.3;  // alpha_c
  double contrastive_weight = 0.1;      // lambda_c
  int total_iters = 1;                  // T
  double base_lr = 1e-4;
  double lr_power = 0.9;
  int batch_size = 2;  // per domain
  int warmup_iters = 50;
  // The losses sum over pixels per image (the batch mean supplies the outer
  // 1/N factors); this flag switches to a per-valid-pixel mean instead.
  bool normalize_ce_by_pixels = false;
  bool dfa_enabled = true;
  bool ccl_enabled = true;
  double weight_decay = 0.01;
  double bank_t0 = 0.9;
  double bank_p = 0.9;
  std::uint64_t seed = 1;
  DfaOptions dfa;
  ContrastConfig contrast;

  void validate() const;
};

// Poly schedule: base_lr * (1 - m/T)^power.
double poly_lr(int m, int total_iters, double base_lr, double power);

// Decoupled-weight-decay adaptive moments (beta1 0.9, beta2 0.999,
// eps 1e-8); gradients are consumed and zeroed by step().
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Tensor> params, double weight_decay);
  void step(double lr);
  int step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
  double weight_decay_ = 0.0;
};

struct PseudoLabels {
  LabelMap map;                    // one-hot at the teacher argmax
  std::vector<double> confidence;  // softmax value at the argmax class
};

// Teacher inference; no gradients flow into the teacher.
PseudoLabels generate_pseudo_labels(const SegModel& teacher,
                                    const Tensor& image,
                                    const BankPair* banks, bool dfa_enabled,
                                    const DfaOptions& options);

// Pixels with confidence < alpha_c become all-zero rows.
LabelMap filter_pseudo_labels(const LabelMap& labels,
                              const std::vector<double>& confidence,
                              double alpha_c);

// -sum y * log(softmax(logits)); all-zero label rows contribute exactly 0.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const LabelMap& labels,
                     bool normalize_by_valid = false);

// Nearest-neighbor downsample of an image-resolution class map to feature
// resolution (factor 2).
LabelMap downsample_labels(const std::vector<int>& classes, int height,
                           int width, int num_channels);

struct TrainBatch {
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;  // feature resolution; EMPTY for target data
};

// Frozen hard selections of one iteration, for finite-difference replays of
// the total loss as a smooth function of the student weights.
struct ImagePlan {
  LabelMap labels;
  CclPlan ccl;
  DfaSelection dfa;
};

struct IterationPlan {
  std::vector<ImagePlan> source, target;
  bool ccl_on = false;
  bool dfa_on = false;
};

struct LossReport {
  double lr = 0.0;
  double source_ce = 0.0;  // L_S, batch mean
  double target_ce = 0.0;  // L_T, batch mean
  double sccl = 0.0;
  double tccl = 0.0;
  double total = 0.0;
};

struct TrainerState {
  TrainerConfig config;
  SegModel student;
  SegModel teacher;
  BankPair banks;
  AdamW optimizer;
  int iter = 0;
};

TrainerState make_trainer(const SegModel& student, const TrainerConfig& config);

// Total adaptation loss: mean_k(lambda_c*SCCL^k + L_S^k) over the source batch
// plus mean_k(lambda_c*TCCL^k + L_T^k) over the target batch. With
// mutate_banks the banks are initialized/updated from the batch anchors
// before the contrastive terms read them. A frozen plan replays previous
// selections; capture records them.
Tensor total_loss(Tape& tape, TrainerState& state, const TrainBatch& source,
                  const TrainBatch& target, bool mutate_banks,
                  const IterationPlan* frozen = nullptr,
                  IterationPlan* capture = nullptr,
                  LossReport* report = nullptr);

// One adaptation iteration: pseudo-labels, forward, selection, bank update,
// loss, optimizer step at the poly LR, teacher EMA.
LossReport train_step(TrainerState& state, const TrainBatch& source,
                      const TrainBatch& target);

// Source-only supervised iteration (no teacher, no banks, no DFA).
LossReport pretrain_step(TrainerState& state, const TrainBatch& source);

}  // namespace dacca

#endif
