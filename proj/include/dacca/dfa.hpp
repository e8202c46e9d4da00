#ifndef DACCA_DFA_HPP
#define DACCA_DFA_HPP

#include <vector>

#include "dacca/psmm.hpp"
#include "dacca/tensor.hpp"

namespace dacca {

// Per-pixel predicted category (1..C+1) and its softmax confidence.
struct CategoryMap {
  int height = 0;
  int width = 0;
  std::vector<int> classes;
  std::vector<double> confidence;
};

// Hard selections made during one DFA pass. They are non-differentiable
// constants; freezing them lets a finite-difference harness re-evaluate the
// loss as a smooth function of the weights.
struct DfaSelection {
  CategoryMap categories;
  std::vector<int> assign_source;  // per pixel: 0 (zero row) or class 1..C
  std::vector<int> assign_target;
};

struct DfaOptions {
  double ubp_threshold = 0.7;  // epsilon
  bool ubp_enabled = true;
};

struct DfaWeights {
  Tensor head_w, head_b;                      // 1x1 conv, D -> C+1
  Tensor linear_source_w, linear_source_b;    // D x D, D
  Tensor linear_target_w, linear_target_b;
  Tensor fuse_w, fuse_b;                      // 1x1 conv, 3D -> D
};

// Argmax class and max confidence of softmax(head(features)), evaluated
// outside the autodiff graph. Ties break to the lowest class index.
CategoryMap predict_categories(const Tensor& features, const Tensor& head_w,
                               const Tensor& head_b);

// Per-pixel bank-row assignment: foreground pixels take their predicted
// class, unreliable background pixels (confidence < epsilon) take the lane
// class whose bank row is nearest in Euclidean distance to the pixel
// feature, reliable background stays 0.
std::vector<int> domain_assignment(const CategoryMap& categories,
                                   const MemoryBank& bank,
                                   const Tensor& features, double epsilon,
                                   bool ubp_enabled);

// Domain-level feature map Z: bank rows scattered by assignment, zeros
// elsewhere. The result is a gradient-stopped constant.
Tensor build_domain_map(const CategoryMap& categories, const MemoryBank& bank,
                        const Tensor& features, double epsilon,
                        bool ubp_enabled,
                        std::vector<int>* assignment_out = nullptr);

Tensor domain_map_from_assignment(const std::vector<int>& assignment,
                                  const MemoryBank& bank, int height,
                                  int width);

// F_aug = conv1x1(concat(E, linear_s(Z_s), linear_t(Z_t))). Gradients flow
// through E and the linear/fusion weights; bank rows are constants.
Tensor dfa_fuse(Tape& tape, const Tensor& features, const BankPair& banks,
                const DfaWeights& weights, const DfaOptions& options,
                const DfaSelection* frozen = nullptr,
                DfaSelection* capture = nullptr);

}  // namespace dacca

#endif
