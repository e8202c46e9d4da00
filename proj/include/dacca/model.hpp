#ifndef DACCA_MODEL_HPP
#define DACCA_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dacca/dfa.hpp"
#include "dacca/psmm.hpp"
#include "dacca/tensor.hpp"

namespace dacca {

struct ModelConfig {
  int num_lanes = 2;    // C; lanes are classes 1..C, background is C+1
  int feature_dim = 16; // D
  int image_height = 64;
  int image_width = 64;
  std::vector<int> encoder_channels = {8, 16};  // hidden widths before D
  bool share_dfa_head = true;  // DFA pixel selection reuses the prediction head
  std::uint64_t seed = 1;

  int num_classes() const { return num_lanes + 1; }
  int feature_height() const { return image_height / 2; }
  int feature_width() const { return image_width / 2; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

// Hidden encoder stage: conv + per-channel spatial normalization + relu.
struct EncoderStage {
  ConvLayer conv;
  Tensor norm_gamma, norm_beta;
  bool normalized = false;  // the final stage leaves E unnormalized
};

// Encoder + prediction head + representation head U + DFA fusion weights.
struct SegModel {
  ModelConfig config;
  std::vector<EncoderStage> encoder;  // 3x3 convs, first stage stride 2
  ConvLayer pred_head;             // 1x1, D -> C+1
  ConvLayer repr_head;             // 1x1, D -> D (the representation head U)
  ConvLayer dfa_head;              // 1x1, D -> C+1; used iff !share_dfa_head
  Tensor dfa_linear_source_w, dfa_linear_source_b;
  Tensor dfa_linear_target_w, dfa_linear_target_b;
  ConvLayer fuse;                  // 1x1, 3D -> D

  // Declaration order; also the checkpoint serialization order.
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool value);
  SegModel clone(bool requires_grad) const;
  DfaWeights dfa_weights() const;
};

// Weights drawn from a zero-mean uniform fan-in scheme; biases zero.
// Identical seeds produce identical weights.
SegModel init_model(const ModelConfig& config);

struct ForwardResult {
  Tensor features;  // E  [D, H_f, W_f]
  Tensor fused;     // F_aug (== E when DFA is bypassed)
  Tensor logits;    // [C+1, H_f, W_f]
  Tensor repr;      // V  [D, H_f, W_f], unnormalized
  DfaSelection dfa;
};

ForwardResult forward(Tape& tape, const SegModel& model, const Tensor& image,
                      const BankPair* banks, bool dfa_enabled,
                      const DfaOptions& options = {},
                      const DfaSelection* frozen = nullptr);

// teacher <- beta * teacher + (1 - beta) * student, elementwise.
void ema_update(SegModel& teacher, const SegModel& student, double beta);

// Flat binary checkpoint: "DACCA1", config integers, weight tensors as
// (rank, dims, float64 values) in declaration order, then both banks and
// the iteration counter. Round-trips bit-exactly. `dfa_trained` records
// whether the fusion path was part of training, so inference can route
// through it only when its weights are meaningful.
struct Checkpoint {
  SegModel model;
  BankPair banks;
  std::int64_t iteration = 0;
  bool dfa_trained = false;
};

void save_checkpoint(const std::string& path, const SegModel& model,
                     const BankPair& banks, std::int64_t iteration,
                     bool dfa_trained);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dacca

#endif
