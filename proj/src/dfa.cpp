#include "dacca/dfa.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dacca/errors.hpp"

namespace dacca {

namespace {

void check_bank_ready(const MemoryBank& bank) {
  if (!bank.fully_initialized())
    throw contract_error("dfa: bank not warmed up (" +
                         std::string(domain_name(bank.domain)) + ")");
}

}  // namespace

CategoryMap predict_categories(const Tensor& features, const Tensor& head_w,
                               const Tensor& head_b) {
  // Selection is non-differentiable; run the classifier on detached values.
  Tape scratch;
  Tensor probs = softmax_channel(
      scratch, add_channel_bias(scratch,
                                conv2d(scratch, features.detach(), head_w.detach(),
                                       1, 0),
                                head_b.detach()));
  const int c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  CategoryMap map;
  map.height = h;
  map.width = w;
  map.classes.resize(static_cast<std::size_t>(h) * w);
  map.confidence.resize(map.classes.size());
  const auto& pv = probs.values();
  const int hw = h * w;
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    double best_p = pv[i];
    for (int ci = 1; ci < c; ++ci) {
      const double p = pv[ci * hw + i];
      if (p > best_p) {
        best_p = p;
        best = ci;
      }
    }
    map.classes[i] = best + 1;
    map.confidence[i] = best_p;
  }
  return map;
}

std::vector<int> domain_assignment(const CategoryMap& categories,
                                   const MemoryBank& bank,
                                   const Tensor& features, double epsilon,
                                   bool ubp_enabled) {
  check_bank_ready(bank);
  const int hw = categories.height * categories.width;
  const int background = bank.num_lanes + 1;
  const int dim = bank.dim;
  if (features.rank() != 3 || features.dim(0) != dim ||
      features.dim(1) != categories.height ||
      features.dim(2) != categories.width)
    throw std::invalid_argument("dfa: feature map " +
                                shape_string(features.shape()) +
                                " does not match category map");
  std::vector<int> assign(hw, 0);
  const auto& ev = features.values();
  for (int i = 0; i < hw; ++i) {
    const int pred = categories.classes[i];
    if (pred != background) {
      assign[i] = pred;
      continue;
    }
    if (!ubp_enabled || categories.confidence[i] >= epsilon) continue;
    // unreliable background: nearest bank row by Euclidean distance
    int best = 1;
    double best_d = 0.0;
    for (int c = 1; c <= bank.num_lanes; ++c) {
      const double* row = bank.row(c);
      double d2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = ev[d * hw + i] - row[d];
        d2 += diff * diff;
      }
      if (c == 1 || d2 < best_d) {
        best_d = d2;
        best = c;
      }
    }
    assign[i] = best;
  }
  return assign;
}

Tensor domain_map_from_assignment(const std::vector<int>& assignment,
                                  const MemoryBank& bank, int height,
                                  int width) {
  check_bank_ready(bank);
  const int hw = height * width;
  if (static_cast<int>(assignment.size()) != hw)
    throw std::invalid_argument("dfa: assignment size mismatch");
  std::vector<double> z(static_cast<std::size_t>(bank.dim) * hw, 0.0);
  for (int i = 0; i < hw; ++i) {
    const int c = assignment[i];
    if (c == 0) continue;
    const double* row = bank.row(c);
    for (int d = 0; d < bank.dim; ++d) z[d * hw + i] = row[d];
  }
  return Tensor::from_values({bank.dim, height, width}, std::move(z));
}

Tensor build_domain_map(const CategoryMap& categories, const MemoryBank& bank,
                        const Tensor& features, double epsilon,
                        bool ubp_enabled, std::vector<int>* assignment_out) {
  std::vector<int> assign =
      domain_assignment(categories, bank, features, epsilon, ubp_enabled);
  Tensor z = domain_map_from_assignment(assign, bank, categories.height,
                                        categories.width);
  if (assignment_out) *assignment_out = std::move(assign);
  return z;
}

Tensor dfa_fuse(Tape& tape, const Tensor& features, const BankPair& banks,
                const DfaWeights& weights, const DfaOptions& options,
                const DfaSelection* frozen, DfaSelection* capture) {
  check_bank_ready(banks.source);
  check_bank_ready(banks.target);
  const int h = features.dim(1), w = features.dim(2);

  DfaSelection selection;
  if (frozen) {
    selection = *frozen;
  } else {
    selection.categories =
        predict_categories(features, weights.head_w, weights.head_b);
    selection.assign_source =
        domain_assignment(selection.categories, banks.source, features,
                          options.ubp_threshold, options.ubp_enabled);
    selection.assign_target =
        domain_assignment(selection.categories, banks.target, features,
                          options.ubp_threshold, options.ubp_enabled);
  }

  Tensor z_source =
      domain_map_from_assignment(selection.assign_source, banks.source, h, w);
  Tensor z_target =
      domain_map_from_assignment(selection.assign_target, banks.target, h, w);

  Tensor f_source = channel_linear(tape, z_source, weights.linear_source_w,
                                   weights.linear_source_b);
  Tensor f_target = channel_linear(tape, z_target, weights.linear_target_w,
                                   weights.linear_target_b);
  Tensor stacked = concat_channels(tape, {features, f_source, f_target});
  Tensor fused = add_channel_bias(
      tape, conv2d(tape, stacked, weights.fuse_w, 1, 0), weights.fuse_b);

  if (capture) *capture = std::move(selection);
  return fused;
}

}  // namespace dacca
