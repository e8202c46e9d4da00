#ifndef DACCA_CONTRAST_HPP
#define DACCA_CONTRAST_HPP

#include <utility>
#include <vector>

#include "dacca/labels.hpp"
#include "dacca/psmm.hpp"
#include "dacca/rng.hpp"
#include "dacca/tensor.hpp"

namespace dacca {

struct ContrastConfig {
  int anchors_per_class = 32;     // M; 256 at benchmark scale
  int negatives_per_anchor = 8;   // N; 50 at benchmark scale
  double tau = 0.07;
  double anchor_confidence = 0.2; // mu_c
};

// Anchors of one lane class: pixels whose (pseudo-)label is the class and
// whose predicted confidence for it clears mu_c, subsampled to at most M.
// Feature vectors are gathered from the representation map and stay on the
// tape; positions allow re-gathering under frozen selections.
struct AnchorSet {
  int class_id = 0;
  std::vector<std::pair<int, int>> positions;  // (row, col)
  std::vector<Tensor> features;
};

std::vector<AnchorSet> select_anchors(Tape& tape, const Tensor& repr,
                                      const LabelMap& labels,
                                      const Tensor& probs, double mu_c,
                                      int max_anchors, Rng& rng);

// Source rule: pixels of a lane not labeled class_id (background excluded),
// falling back to background pixels when no other lane exists. Values are
// gradient-stopped copies.
std::vector<std::vector<double>> select_negatives_source(
    const Tensor& repr, const LabelMap& labels, int class_id, int count,
    Rng& rng);

// Target rule: pixels whose argmin softmax class equals class_id (ties to
// the lowest index), falling back to the `count` globally
// lowest-confidence-for-class pixels when the set is empty.
std::vector<std::vector<double>> select_negatives_target(const Tensor& repr,
                                                         const Tensor& probs,
                                                         int class_id,
                                                         int count, Rng& rng);

// Category-wise InfoNCE over one class: mean over anchors of
//   -log[ e^{<a,pos>/tau} / (e^{<a,pos>/tau} + sum_q e^{<a,neg_q>/tau}) ]
// with cosine similarities and a max-subtracted log-sum.
Tensor info_nce(Tape& tape, const std::vector<Tensor>& anchors,
                const std::vector<double>& positive,
                const std::vector<std::vector<std::vector<double>>>& negatives,
                double tau, std::vector<double>* per_anchor_terms = nullptr);

struct ClassSamples {
  int class_id = 0;
  std::vector<Tensor> anchors;
  std::vector<std::pair<int, int>> anchor_positions;
  std::vector<std::vector<double>> negative_pool;
};

// Frozen per-class sampling decisions for finite-difference replays.
struct CclClassPlan {
  int class_id = 0;
  std::vector<std::pair<int, int>> anchor_positions;
  std::vector<std::vector<std::vector<double>>> negatives;  // per anchor
  std::vector<double> positive_own, positive_other;
};

struct CclPlan {
  std::vector<CclClassPlan> classes;
};

// CCL = L_intra + L_inter, both InfoNCE with the same anchors and per-anchor
// negatives but positives from the own/other bank respectively. Classes are
// averaged by their actual non-empty count. Returns an untracked zero (and
// sets *any_class=false) when no class has anchors and negatives.
Tensor ccl(Tape& tape, const std::vector<ClassSamples>& samples,
           const MemoryBank& own_bank, const MemoryBank& other_bank,
           const ContrastConfig& config, Rng& rng, bool* any_class = nullptr,
           const CclPlan* frozen = nullptr, CclPlan* capture = nullptr);

}  // namespace dacca

#endif
