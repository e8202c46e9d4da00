#include "dacca/contrast.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dacca/errors.hpp"

namespace dacca {

// --- labels -----------------------------------------------------------------

LabelMap LabelMap::zeros(int height, int width, int num_channels) {
  LabelMap m;
  m.height = height;
  m.width = width;
  m.num_channels = num_channels;
  m.onehot.assign(static_cast<std::size_t>(num_channels) * height * width,
                  0.0);
  return m;
}

LabelMap LabelMap::from_classes(const std::vector<int>& classes, int height,
                                int width, int num_channels) {
  if (static_cast<int>(classes.size()) != height * width)
    throw std::invalid_argument("labels: class list size mismatch");
  LabelMap m = zeros(height, width, num_channels);
  const int hw = height * width;
  for (int i = 0; i < hw; ++i) {
    const int c = classes[i];
    if (c == 0) continue;
    if (c < 1 || c > num_channels)
      throw std::invalid_argument("labels: class " + std::to_string(c) +
                                  " outside 1.." +
                                  std::to_string(num_channels));
    m.onehot[static_cast<std::size_t>(c - 1) * hw + i] = 1.0;
  }
  return m;
}

int LabelMap::class_at(int i, int j) const {
  const int hw = height * width;
  const int p = i * width + j;
  for (int c = 0; c < num_channels; ++c)
    if (onehot[static_cast<std::size_t>(c) * hw + p] != 0.0) return c + 1;
  return 0;
}

void LabelMap::set_class(int i, int j, int class_id) {
  clear_pixel(i, j);
  const int hw = height * width;
  onehot[static_cast<std::size_t>(class_id - 1) * hw + i * width + j] = 1.0;
}

void LabelMap::clear_pixel(int i, int j) {
  const int hw = height * width;
  const int p = i * width + j;
  for (int c = 0; c < num_channels; ++c)
    onehot[static_cast<std::size_t>(c) * hw + p] = 0.0;
}

int LabelMap::valid_count() const {
  int n = 0;
  const int hw = height * width;
  for (int p = 0; p < hw; ++p) {
    for (int c = 0; c < num_channels; ++c) {
      if (onehot[static_cast<std::size_t>(c) * hw + p] != 0.0) {
        ++n;
        break;
      }
    }
  }
  return n;
}

// --- selection ---------------------------------------------------------------

namespace {

void check_feature_map(const char* op, const Tensor& repr, int height,
                       int width) {
  if (repr.rank() != 3 || repr.dim(1) != height || repr.dim(2) != width)
    throw std::invalid_argument(std::string(op) + ": representation map " +
                                shape_string(repr.shape()) +
                                " does not match " + std::to_string(height) +
                                "x" + std::to_string(width));
}

std::vector<double> pixel_values(const Tensor& map, int p) {
  const int c = map.dim(0), hw = map.dim(1) * map.dim(2);
  std::vector<double> v(c);
  for (int ci = 0; ci < c; ++ci) v[ci] = map.values()[ci * hw + p];
  return v;
}

// Uniform pool draw: without replacement when enough pixels exist,
// with replacement otherwise.
std::vector<int> draw_pool(const std::vector<int>& eligible, int count,
                           Rng& rng) {
  const int n = static_cast<int>(eligible.size());
  std::vector<int> out;
  if (n == 0 || count <= 0) return out;
  if (n >= count) {
    for (int idx : rng.sample_indices(n, count)) out.push_back(eligible[idx]);
  } else {
    out.reserve(count);
    for (int i = 0; i < count; ++i)
      out.push_back(eligible[rng.uniform_int(n)]);
  }
  return out;
}

}  // namespace

std::vector<AnchorSet> select_anchors(Tape& tape, const Tensor& repr,
                                      const LabelMap& labels,
                                      const Tensor& probs, double mu_c,
                                      int max_anchors, Rng& rng) {
  check_feature_map("select_anchors", repr, labels.height, labels.width);
  check_feature_map("select_anchors", probs, labels.height, labels.width);
  const int lanes = labels.num_channels - 1;
  const int hw = labels.height * labels.width;
  std::vector<AnchorSet> out;
  for (int c = 1; c <= lanes; ++c) {
    std::vector<int> eligible;
    for (int p = 0; p < hw; ++p) {
      const int i = p / labels.width, j = p % labels.width;
      if (labels.class_at(i, j) != c) continue;
      if (probs.values()[(c - 1) * hw + p] < mu_c) continue;
      eligible.push_back(p);
    }
    AnchorSet set;
    set.class_id = c;
    std::vector<int> chosen;
    if (static_cast<int>(eligible.size()) <= max_anchors) {
      chosen = eligible;
    } else {
      for (int idx :
           rng.sample_indices(static_cast<int>(eligible.size()), max_anchors))
        chosen.push_back(eligible[idx]);
    }
    for (int p : chosen) {
      const int i = p / labels.width, j = p % labels.width;
      set.positions.emplace_back(i, j);
      set.features.push_back(gather_pixel(tape, repr, i, j));
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<std::vector<double>> select_negatives_source(
    const Tensor& repr, const LabelMap& labels, int class_id, int count,
    Rng& rng) {
  check_feature_map("select_negatives_source", repr, labels.height,
                    labels.width);
  const int lanes = labels.num_channels - 1;
  const int hw = labels.height * labels.width;
  std::vector<int> other_lanes, background;
  for (int p = 0; p < hw; ++p) {
    const int c = labels.class_at(p / labels.width, p % labels.width);
    if (c >= 1 && c <= lanes && c != class_id)
      other_lanes.push_back(p);
    else if (c == lanes + 1)
      background.push_back(p);
  }
  // fall back to background when no other lane pixel exists (e.g. C=1)
  const std::vector<int>& eligible =
      other_lanes.empty() ? background : other_lanes;
  std::vector<std::vector<double>> pool;
  for (int p : draw_pool(eligible, count, rng))
    pool.push_back(pixel_values(repr, p));
  return pool;
}

std::vector<std::vector<double>> select_negatives_target(const Tensor& repr,
                                                         const Tensor& probs,
                                                         int class_id,
                                                         int count, Rng& rng) {
  const int h = probs.dim(1), w = probs.dim(2);
  check_feature_map("select_negatives_target", repr, h, w);
  const int classes = probs.dim(0);
  const int hw = h * w;
  if (class_id < 1 || class_id > classes)
    throw std::invalid_argument("select_negatives_target: class out of range");
  std::vector<int> eligible;
  for (int p = 0; p < hw; ++p) {
    int arg = 0;
    double best = probs.values()[p];
    for (int c = 1; c < classes; ++c) {
      const double v = probs.values()[c * hw + p];
      if (v < best) {
        best = v;
        arg = c;
      }
    }
    if (arg == class_id - 1) eligible.push_back(p);
  }
  if (eligible.empty()) {
    // fallback: the `count` pixels least confident for this class
    std::vector<int> order(hw);
    std::iota(order.begin(), order.end(), 0);
    const double* pc = &probs.values()[(class_id - 1) * hw];
    std::stable_sort(order.begin(), order.end(),
                     [pc](int a, int b) { return pc[a] < pc[b]; });
    order.resize(std::min(count, hw));
    eligible = order;
  }
  std::vector<std::vector<double>> pool;
  for (int p : draw_pool(eligible, count, rng))
    pool.push_back(pixel_values(repr, p));
  return pool;
}

// --- loss --------------------------------------------------------------------

Tensor info_nce(Tape& tape, const std::vector<Tensor>& anchors,
                const std::vector<double>& positive,
                const std::vector<std::vector<std::vector<double>>>& negatives,
                double tau, std::vector<double>* per_anchor_terms) {
  if (anchors.empty())
    throw std::invalid_argument("info_nce: no anchors");
  if (negatives.size() != anchors.size())
    throw std::invalid_argument("info_nce: need one negative list per anchor");
  if (tau <= 0.0) throw std::invalid_argument("info_nce: tau must be > 0");
  if (per_anchor_terms) per_anchor_terms->clear();
  const Tensor pos = Tensor::from_values(
      {static_cast<int>(positive.size())}, positive);
  std::vector<Tensor> terms;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (negatives[a].empty())
      throw std::invalid_argument("info_nce: anchor without negatives");
    Tensor s_pos = scale(tape, cosine_similarity(tape, anchors[a], pos),
                         1.0 / tau);
    std::vector<Tensor> logits{s_pos};
    for (const auto& neg : negatives[a]) {
      Tensor nt =
          Tensor::from_values({static_cast<int>(neg.size())}, neg);
      logits.push_back(
          scale(tape, cosine_similarity(tape, anchors[a], nt), 1.0 / tau));
    }
    Tensor term =
        sub(tape, logsumexp(tape, stack_scalars(tape, logits)), s_pos);
    if (per_anchor_terms) per_anchor_terms->push_back(term.item());
    terms.push_back(term);
  }
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i)
    total = add(tape, total, terms[i]);
  return scale(tape, total, 1.0 / static_cast<double>(terms.size()));
}

Tensor ccl(Tape& tape, const std::vector<ClassSamples>& samples,
           const MemoryBank& own_bank, const MemoryBank& other_bank,
           const ContrastConfig& config, Rng& rng, bool* any_class,
           const CclPlan* frozen, CclPlan* capture) {
  if (capture) capture->classes.clear();
  std::vector<Tensor> intra_terms, inter_terms;
  for (const ClassSamples& cls : samples) {
    if (cls.anchors.empty()) continue;
    CclClassPlan plan;
    plan.class_id = cls.class_id;
    plan.anchor_positions = cls.anchor_positions;
    if (frozen) {
      const CclClassPlan* match = nullptr;
      for (const CclClassPlan& p : frozen->classes)
        if (p.class_id == cls.class_id) match = &p;
      if (!match) continue;  // class had no samples at capture time
      plan = *match;
    } else {
      if (cls.negative_pool.empty()) continue;
      const int pool_size = static_cast<int>(cls.negative_pool.size());
      for (std::size_t a = 0; a < cls.anchors.size(); ++a) {
        std::vector<std::vector<double>> negs;
        if (pool_size >= config.negatives_per_anchor) {
          for (int idx : rng.sample_indices(pool_size,
                                            config.negatives_per_anchor))
            negs.push_back(cls.negative_pool[idx]);
        } else {
          for (int q = 0; q < config.negatives_per_anchor; ++q)
            negs.push_back(cls.negative_pool[rng.uniform_int(pool_size)]);
        }
        plan.negatives.push_back(std::move(negs));
      }
      plan.positive_own = get_positive(own_bank, cls.class_id);
      plan.positive_other = get_positive(other_bank, cls.class_id);
    }
    if (plan.negatives.size() != cls.anchors.size())
      throw std::invalid_argument("ccl: frozen plan anchor count mismatch");
    intra_terms.push_back(info_nce(tape, cls.anchors, plan.positive_own,
                                   plan.negatives, config.tau));
    inter_terms.push_back(info_nce(tape, cls.anchors, plan.positive_other,
                                   plan.negatives, config.tau));
    if (capture) capture->classes.push_back(std::move(plan));
  }
  if (any_class) *any_class = !intra_terms.empty();
  if (intra_terms.empty()) return Tensor::scalar(0.0);
  auto mean_of = [&](std::vector<Tensor>& terms) {
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i)
      total = add(tape, total, terms[i]);
    return scale(tape, total, 1.0 / static_cast<double>(terms.size()));
  };
  return add(tape, mean_of(intra_terms), mean_of(inter_terms));
}

}  // namespace dacca
