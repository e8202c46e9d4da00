#ifndef DACCA_CONFIG_HPP
#define DACCA_CONFIG_HPP

#include <string>
#include <vector>

#include "dacca/data.hpp"
#include "dacca/model.hpp"
#include "dacca/selftrain.hpp"

namespace dacca {

// Every tunable of the pipeline as plain `key = value` text. Unknown keys
// are rejected; dump_config() is a formatting fixed point (parsing a dump
// and dumping again is byte-identical).
struct RunConfig {
  // model
  long long num_lanes = 2;
  long long feature_dim = 16;
  long long image_height = 64;
  long long image_width = 64;
  std::string encoder_channels = "8,16";
  bool share_dfa_head = true;
  // self-training
  double ema_beta = 0.9;
  double pseudo_label_threshold = 0.65;
  double contrastive_weight = 0.1;
  double base_lr = 1e-3;    // pretraining
  double adapt_lr = 3e-4;   // adaptation
  double lr_power = 0.9;
  long long batch_size = 2;
  long long warmup_iters = 50;
  bool normalize_ce_by_pixels = false;
  double weight_decay = 0.01;
  long long pretrain_iters = 600;
  long long adapt_iters = 400;
  long long checkpoint_every = 0;
  bool augment_flip = true;
  // contrastive loss
  long long anchors_per_class = 32;
  long long negatives_per_anchor = 8;
  double tau = 0.07;
  double anchor_confidence = 0.2;
  // memory banks
  double bank_t0 = 0.9;
  double bank_p = 0.9;
  // domain-level feature aggregation
  double ubp_threshold = 0.7;
  // data generation
  long long stroke_width = 4;
  long long gen_count = 256;
  double source_background = 0.15;
  double source_texture = 0.03;
  double source_lane_brightness = 0.9;
  double source_noise_sigma = 0.01;
  double source_brightness_shift = 0.0;
  double source_saturation = 1.0;
  double source_jitter = 0.0;
  bool source_blur = false;
  long long source_occlusions = 5;
  double target_background = 0.33;
  double target_texture = 0.09;
  double target_lane_brightness = 0.68;
  double target_noise_sigma = 0.05;
  double target_brightness_shift = 0.035;
  double target_saturation = 0.8;
  double target_jitter = 0.0;
  bool target_blur = true;
  long long target_occlusions = 5;
  double occlusion_size = 30.0;
  double occlusion_opacity = 0.95;
  // metrics
  double point_threshold_base = 20.0;
  bool point_threshold_scale_to_width = true;
  double iou_threshold = 0.5;
  // reporting
  long long svg_overlay_count = 4;
  // master seed
  long long seed = 1;
};

RunConfig parse_config_file(const std::string& path);
// Single `key = value` assignment (used for flag overrides).
void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value);
std::string dump_config(const RunConfig& config);
// FNV-1a 64 of the canonical dump, as hex.
std::string config_hash(const RunConfig& config);

std::string format_double(double value);

// Materialized per-module views.
ModelConfig model_config(const RunConfig& config, std::uint64_t seed);
TrainerConfig trainer_config(const RunConfig& config, int total_iters,
                             std::uint64_t seed);
DomainStyle domain_style(const RunConfig& config, Domain domain);
double effective_point_base(const RunConfig& config);

}  // namespace dacca

#endif
