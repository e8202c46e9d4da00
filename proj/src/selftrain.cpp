#include "dacca/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dacca/errors.hpp"
#include "dacca/rng.hpp"

namespace dacca {

void TrainerConfig::validate() const {
  if (ema_beta <= 0.0 || ema_beta >= 1.0)
    throw config_error("trainer: ema_beta must be in (0,1)");
  if (pseudo_label_threshold < 0.0 || pseudo_label_threshold > 1.0)
    throw config_error("trainer: pseudo_label_threshold must be in [0,1]");
  if (contrastive_weight < 0.0)
    throw config_error("trainer: contrastive_weight must be >= 0");
  if (total_iters < 1) throw config_error("trainer: total_iters must be >= 1");
  if (batch_size < 1) throw config_error("trainer: batch_size must be >= 1");
  if (warmup_iters < 0) throw config_error("trainer: warmup_iters must be >= 0");
  if (contrast.anchors_per_class < 1 || contrast.negatives_per_anchor < 1)
    throw config_error("trainer: anchor/negative counts must be >= 1");
  if (contrast.tau <= 0.0) throw config_error("trainer: tau must be > 0");
  if (contrast.anchor_confidence < 0.0 || contrast.anchor_confidence > 1.0)
    throw config_error("trainer: anchor_confidence must be in [0,1]");
}

double poly_lr(int m, int total_iters, double base_lr, double power) {
  if (m < 0 || m > total_iters)
    throw std::invalid_argument("poly_lr: iteration outside [0, T]");
  return base_lr * std::pow(1.0 - static_cast<double>(m) / total_iters, power);
}

AdamW::AdamW(std::vector<Tensor> params, double weight_decay)
    : params_(std::move(params)), weight_decay_(weight_decay) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, t_);
  const double bc2 = 1.0 - std::pow(kBeta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].values();
    auto& g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay_ * w[j]);
      g[j] = 0.0;
    }
  }
}

PseudoLabels generate_pseudo_labels(const SegModel& teacher,
                                    const Tensor& image,
                                    const BankPair* banks, bool dfa_enabled,
                                    const DfaOptions& options) {
  Tape scratch;  // teacher weights are untracked, nothing is recorded
  ForwardResult fw =
      forward(scratch, teacher, image, banks, dfa_enabled, options);
  Tensor probs = softmax_channel(scratch, fw.logits);
  const int classes = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const int hw = h * w;
  PseudoLabels out;
  out.confidence.resize(hw);
  std::vector<int> argmax(hw);
  for (int p = 0; p < hw; ++p) {
    int best = 0;
    double best_v = probs.values()[p];
    for (int c = 1; c < classes; ++c) {
      const double v = probs.values()[c * hw + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    argmax[p] = best + 1;
    out.confidence[p] = best_v;
  }
  out.map = LabelMap::from_classes(argmax, h, w, classes);
  return out;
}

LabelMap filter_pseudo_labels(const LabelMap& labels,
                              const std::vector<double>& confidence,
                              double alpha_c) {
  if (static_cast<int>(confidence.size()) != labels.height * labels.width)
    throw std::invalid_argument("filter_pseudo_labels: confidence size");
  LabelMap out = labels;
  for (int i = 0; i < labels.height; ++i)
    for (int j = 0; j < labels.width; ++j)
      if (confidence[i * labels.width + j] < alpha_c) out.clear_pixel(i, j);
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const LabelMap& labels,
                     bool normalize_by_valid) {
  if (logits.rank() != 3 || logits.dim(0) != labels.num_channels ||
      logits.dim(1) != labels.height || logits.dim(2) != labels.width)
    throw std::invalid_argument("cross_entropy: logits " +
                                shape_string(logits.shape()) +
                                " do not match the label map");
  Tensor log_probs = dacca::log(tape, softmax_channel(tape, logits));
  Tensor total = weighted_sum(tape, log_probs, labels.onehot);
  double denom = 1.0;
  if (normalize_by_valid) denom = std::max(1, labels.valid_count());
  return scale(tape, total, -1.0 / denom);
}

LabelMap downsample_labels(const std::vector<int>& classes, int height,
                           int width, int num_channels) {
  if (static_cast<int>(classes.size()) != height * width)
    throw std::invalid_argument("downsample_labels: size mismatch");
  const int hf = height / 2, wf = width / 2;
  std::vector<int> out(static_cast<std::size_t>(hf) * wf);
  for (int i = 0; i < hf; ++i)
    for (int j = 0; j < wf; ++j)
      out[i * wf + j] = classes[(2 * i) * width + (2 * j)];
  return LabelMap::from_classes(out, hf, wf, num_channels);
}

TrainerState make_trainer(const SegModel& student,
                          const TrainerConfig& config) {
  config.validate();
  TrainerState state;
  state.config = config;
  state.student = student;
  state.teacher = student.clone(false);
  const ModelConfig& mc = student.config;
  state.banks.source = make_bank(Domain::source, mc.num_lanes, mc.feature_dim,
                                 config.bank_t0, config.bank_p);
  state.banks.target = make_bank(Domain::target, mc.num_lanes, mc.feature_dim,
                                 config.bank_t0, config.bank_p);
  state.optimizer = AdamW(student.parameters(), config.weight_decay);
  return state;
}

namespace {

constexpr std::uint64_t kSelectionStream = 0x5e1ec7;

struct ImagePass {
  ForwardResult fw;
  Tensor probs;
  LabelMap labels;
  std::vector<AnchorSet> anchor_sets;
  std::vector<std::vector<std::vector<double>>> negative_pools;  // per class
};

// Detached copies of the anchor features, pooled for bank maintenance.
std::vector<std::vector<double>> detached_features(const AnchorSet& set) {
  std::vector<std::vector<double>> out;
  out.reserve(set.features.size());
  for (const Tensor& f : set.features) out.push_back(f.values());
  return out;
}

}  // namespace

Tensor total_loss(Tape& tape, TrainerState& state, const TrainBatch& source,
                  const TrainBatch& target, bool mutate_banks,
                  const IterationPlan* frozen, IterationPlan* capture,
                  LossReport* report) {
  const TrainerConfig& cfg = state.config;
  if (source.images.empty() || target.images.empty())
    throw std::invalid_argument("total_loss: empty batch");
  if (source.labels.size() != source.images.size())
    throw std::invalid_argument("total_loss: source batch needs labels");
  if (!target.labels.empty())
    throw contract_error(
        "total_loss: target labels present during adaptation");

  const bool past_warmup = state.iter >= cfg.warmup_iters;
  const bool banks_ready = state.banks.fully_initialized();
  bool dfa_on = cfg.dfa_enabled && past_warmup && banks_ready;
  bool ccl_on = cfg.ccl_enabled && past_warmup && banks_ready;
  if (frozen) {
    dfa_on = frozen->dfa_on;
    ccl_on = frozen->ccl_on;
  }
  if (capture) {
    capture->source.clear();
    capture->target.clear();
    capture->dfa_on = dfa_on;
    capture->ccl_on = ccl_on;
  }
  const double lambda = ccl_on ? cfg.contrastive_weight : 0.0;

  Rng rng = Rng(cfg.seed).child(kSelectionStream).child(
      static_cast<std::uint64_t>(state.iter));

  const int lanes = state.student.config.num_lanes;
  const int pool_count =
      cfg.contrast.negatives_per_anchor * cfg.contrast.anchors_per_class;

  auto run_images = [&](const TrainBatch& batch, Domain domain,
                        const std::vector<ImagePlan>* frozen_plans)
      -> std::vector<ImagePass> {
    std::vector<ImagePass> passes;
    for (std::size_t k = 0; k < batch.images.size(); ++k) {
      ImagePass pass;
      const DfaSelection* frozen_dfa =
          (frozen_plans && dfa_on) ? &(*frozen_plans)[k].dfa : nullptr;
      pass.fw = forward(tape, state.student, batch.images[k],
                        dfa_on ? &state.banks : nullptr, dfa_on, cfg.dfa,
                        frozen_dfa);
      pass.probs = softmax_channel(tape, pass.fw.logits);
      if (domain == Domain::source) {
        pass.labels = batch.labels[k];
      } else if (frozen_plans) {
        pass.labels = (*frozen_plans)[k].labels;
      } else {
        PseudoLabels pl =
            generate_pseudo_labels(state.teacher, batch.images[k],
                                   dfa_on ? &state.banks : nullptr, dfa_on,
                                   cfg.dfa);
        pass.labels = filter_pseudo_labels(pl.map, pl.confidence,
                                           cfg.pseudo_label_threshold);
      }
      if (!frozen_plans) {
        pass.anchor_sets = select_anchors(
            tape, pass.fw.repr, pass.labels, pass.probs,
            cfg.contrast.anchor_confidence, cfg.contrast.anchors_per_class,
            rng);
        pass.negative_pools.resize(lanes);
        for (int c = 1; c <= lanes; ++c) {
          if (pass.anchor_sets[c - 1].features.empty()) continue;
          pass.negative_pools[c - 1] =
              domain == Domain::source
                  ? select_negatives_source(pass.fw.repr, pass.labels, c,
                                            pool_count, rng)
                  : select_negatives_target(pass.fw.repr, pass.probs, c,
                                            pool_count, rng);
        }
      }
      passes.push_back(std::move(pass));
    }
    return passes;
  };

  std::vector<ImagePass> source_passes =
      run_images(source, Domain::source, frozen ? &frozen->source : nullptr);
  std::vector<ImagePass> target_passes =
      run_images(target, Domain::target, frozen ? &frozen->target : nullptr);

  if (mutate_banks) {
    auto maintain = [&](const std::vector<ImagePass>& passes,
                        MemoryBank& bank, Domain domain) {
      for (int c = 1; c <= lanes; ++c) {
        std::vector<std::vector<double>> pooled;
        for (const ImagePass& pass : passes) {
          if (pass.anchor_sets.empty()) continue;
          auto feats = detached_features(pass.anchor_sets[c - 1]);
          pooled.insert(pooled.end(), feats.begin(), feats.end());
        }
        if (pooled.empty()) continue;
        if (!bank.initialized[c - 1])
          initialize_class(bank, domain, c, pooled);
        else
          update_class(bank, domain, c, pooled, state.iter, cfg.total_iters);
      }
    };
    maintain(source_passes, state.banks.source, Domain::source);
    maintain(target_passes, state.banks.target, Domain::target);
  }

  auto domain_term = [&](std::vector<ImagePass>& passes, Domain domain,
                         const std::vector<ImagePlan>* frozen_plans,
                         std::vector<ImagePlan>* captured, double* ce_mean,
                         double* ccl_mean) -> Tensor {
    Tensor total;
    double ce_acc = 0.0, ccl_acc = 0.0;
    const MemoryBank& own =
        domain == Domain::source ? state.banks.source : state.banks.target;
    const MemoryBank& other =
        domain == Domain::source ? state.banks.target : state.banks.source;
    for (std::size_t k = 0; k < passes.size(); ++k) {
      ImagePass& pass = passes[k];
      Tensor ce = cross_entropy(tape, pass.fw.logits, pass.labels,
                                cfg.normalize_ce_by_pixels);
      ce_acc += ce.item();
      Tensor term = ce;
      ImagePlan plan;
      plan.labels = pass.labels;
      plan.dfa = pass.fw.dfa;
      if (ccl_on) {
        std::vector<ClassSamples> samples;
        if (frozen_plans) {
          for (const CclClassPlan& cp : (*frozen_plans)[k].ccl.classes) {
            ClassSamples s;
            s.class_id = cp.class_id;
            s.anchor_positions = cp.anchor_positions;
            for (auto [i, j] : cp.anchor_positions)
              s.anchors.push_back(gather_pixel(tape, pass.fw.repr, i, j));
            samples.push_back(std::move(s));
          }
        } else {
          for (int c = 1; c <= lanes; ++c) {
            ClassSamples s;
            s.class_id = c;
            s.anchors = pass.anchor_sets[c - 1].features;
            s.anchor_positions = pass.anchor_sets[c - 1].positions;
            s.negative_pool = pass.negative_pools[c - 1];
            samples.push_back(std::move(s));
          }
        }
        bool any = false;
        Tensor c_loss = ccl(tape, samples, own, other, cfg.contrast, rng,
                            &any, frozen_plans ? &(*frozen_plans)[k].ccl
                                               : nullptr,
                            captured ? &plan.ccl : nullptr);
        ccl_acc += c_loss.item();
        if (any || c_loss.tracked())
          term = add(tape, term, scale(tape, c_loss, lambda));
      }
      if (captured) captured->push_back(std::move(plan));
      total = total.defined() ? add(tape, total, term) : term;
    }
    const double inv = 1.0 / static_cast<double>(passes.size());
    if (ce_mean) *ce_mean = ce_acc * inv;
    if (ccl_mean) *ccl_mean = ccl_acc * inv;
    return scale(tape, total, inv);
  };

  LossReport rep;
  Tensor source_total = domain_term(
      source_passes, Domain::source, frozen ? &frozen->source : nullptr,
      capture ? &capture->source : nullptr, &rep.source_ce, &rep.sccl);
  Tensor target_total = domain_term(
      target_passes, Domain::target, frozen ? &frozen->target : nullptr,
      capture ? &capture->target : nullptr, &rep.target_ce, &rep.tccl);
  Tensor loss = add(tape, source_total, target_total);
  rep.total = loss.item();
  if (report) {
    rep.lr = report->lr;
    *report = rep;
  }
  return loss;
}

LossReport train_step(TrainerState& state, const TrainBatch& source,
                      const TrainBatch& target) {
  const TrainerConfig& cfg = state.config;
  if (state.iter >= cfg.total_iters)
    throw contract_error("train_step: iteration " +
                         std::to_string(state.iter) + " past total_iters");
  Tape tape;
  LossReport report;
  for (Tensor p : state.student.parameters()) p.zero_grad();
  Tensor loss = total_loss(tape, state, source, target, /*mutate_banks=*/true,
                           nullptr, nullptr, &report);
  backward(loss, tape);
  const double lr =
      poly_lr(state.iter, cfg.total_iters, cfg.base_lr, cfg.lr_power);
  state.optimizer.step(lr);
  ema_update(state.teacher, state.student, cfg.ema_beta);
  state.iter += 1;
  report.lr = lr;
  return report;
}

LossReport pretrain_step(TrainerState& state, const TrainBatch& source) {
  const TrainerConfig& cfg = state.config;
  if (state.iter >= cfg.total_iters)
    throw contract_error("pretrain_step: iteration past total_iters");
  if (source.labels.size() != source.images.size())
    throw data_error("pretrain_step: source batch needs labels");
  Tape tape;
  for (Tensor p : state.student.parameters()) p.zero_grad();
  Tensor total;
  for (std::size_t k = 0; k < source.images.size(); ++k) {
    ForwardResult fw =
        forward(tape, state.student, source.images[k], nullptr, false);
    Tensor ce = cross_entropy(tape, fw.logits, source.labels[k],
                              cfg.normalize_ce_by_pixels);
    total = total.defined() ? add(tape, total, ce) : ce;
  }
  Tensor loss =
      scale(tape, total, 1.0 / static_cast<double>(source.images.size()));
  backward(loss, tape);
  const double lr =
      poly_lr(state.iter, cfg.total_iters, cfg.base_lr, cfg.lr_power);
  state.optimizer.step(lr);
  state.iter += 1;
  LossReport report;
  report.lr = lr;
  report.source_ce = loss.item();
  report.total = loss.item();
  return report;
}

}  // namespace dacca
