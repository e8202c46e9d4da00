#include "dacca/psmm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dacca/errors.hpp"

namespace dacca {

namespace {

void check_class(const MemoryBank& bank, int class_id) {
  if (class_id < 1 || class_id > bank.num_lanes)
    throw std::invalid_argument("memory bank: class " +
                                std::to_string(class_id) +
                                " outside 1.." + std::to_string(bank.num_lanes));
}

void check_domain(const MemoryBank& bank, Domain expected) {
  if (bank.domain != expected)
    throw contract_error(std::string("memory bank: expected ") +
                         domain_name(expected) + " bank, got " +
                         domain_name(bank.domain));
}

void check_anchor_dims(const MemoryBank& bank,
                       const std::vector<std::vector<double>>& anchors) {
  for (const auto& a : anchors)
    if (static_cast<int>(a.size()) != bank.dim)
      throw std::invalid_argument("memory bank: anchor dim " +
                                  std::to_string(a.size()) + " != " +
                                  std::to_string(bank.dim));
}

}  // namespace

const char* domain_name(Domain d) {
  return d == Domain::source ? "source" : "target";
}

bool MemoryBank::fully_initialized() const {
  for (char c : initialized)
    if (!c) return false;
  return true;
}

const double* MemoryBank::row(int class_id) const {
  return &features[static_cast<std::size_t>(class_id - 1) * dim];
}

double* MemoryBank::row(int class_id) {
  return &features[static_cast<std::size_t>(class_id - 1) * dim];
}

MemoryBank make_bank(Domain domain, int num_lanes, int dim, double t0,
                     double p) {
  if (num_lanes < 1 || dim < 1)
    throw std::invalid_argument("memory bank: need num_lanes, dim >= 1");
  MemoryBank bank;
  bank.domain = domain;
  bank.num_lanes = num_lanes;
  bank.dim = dim;
  bank.features.assign(static_cast<std::size_t>(num_lanes) * dim, 0.0);
  bank.initialized.assign(num_lanes, 0);
  bank.t0 = t0;
  bank.p = p;
  return bank;
}

double schedule_t(int m, int total_iters, double t0, double p) {
  if (total_iters < 1)
    throw std::invalid_argument("schedule_t: total_iters must be >= 1");
  const double floor = t0 / 100.0;
  if (m < 0) m = 0;
  if (m > total_iters) return floor;
  const double frac = 1.0 - static_cast<double>(m) / total_iters;
  return std::pow(frac, p) * (t0 - floor) + floor;
}

void initialize_class(MemoryBank& bank, Domain expected, int class_id,
                      const std::vector<std::vector<double>>& anchors) {
  check_domain(bank, expected);
  check_class(bank, class_id);
  if (bank.initialized[class_id - 1])
    throw contract_error("memory bank: class " + std::to_string(class_id) +
                         " already initialized");
  if (anchors.empty()) return;  // class stays uninitialized
  check_anchor_dims(bank, anchors);
  double* r = bank.row(class_id);
  for (int d = 0; d < bank.dim; ++d) {
    double s = 0.0;
    for (const auto& a : anchors) s += a[d];
    r[d] = s / static_cast<double>(anchors.size());
  }
  bank.initialized[class_id - 1] = 1;
}

std::vector<double> similarity_vector(
    const std::vector<std::vector<double>>& anchors, const double* memory_row,
    int dim) {
  double norm_m = 0.0;
  for (int d = 0; d < dim; ++d) norm_m += memory_row[d] * memory_row[d];
  norm_m = std::sqrt(norm_m);
  if (norm_m == 0.0)
    throw std::invalid_argument("similarity_vector: degenerate feature");
  std::vector<double> sims;
  sims.reserve(anchors.size());
  for (const auto& a : anchors) {
    double dot = 0.0, norm_a = 0.0;
    for (int d = 0; d < dim; ++d) {
      dot += a[d] * memory_row[d];
      norm_a += a[d] * a[d];
    }
    norm_a = std::sqrt(norm_a);
    if (norm_a == 0.0)
      throw std::invalid_argument("similarity_vector: degenerate feature");
    sims.push_back(dot / (norm_a * norm_m));
  }
  return sims;
}

bool aggregate_anchors(const std::vector<std::vector<double>>& anchors,
                       const std::vector<double>& similarities,
                       std::vector<double>* out) {
  if (anchors.empty() || anchors.size() != similarities.size())
    throw std::invalid_argument("aggregate_anchors: need matching non-empty "
                                "anchor and similarity lists");
  const int dim = static_cast<int>(anchors.front().size());
  double total = 0.0;
  std::vector<double> one_minus(similarities.size());
  for (std::size_t i = 0; i < similarities.size(); ++i) {
    double s = similarities[i];
    if (s > 1.0 + 1e-12)
      throw std::invalid_argument("aggregate_anchors: similarity " +
                                  std::to_string(s) + " above 1");
    s = std::min(s, 1.0);
    one_minus[i] = 1.0 - s;
    total += one_minus[i];
  }
  if (total < 1e-12) return false;  // all anchors identical to the row
  out->assign(dim, 0.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double w = one_minus[i] / total;
    for (int d = 0; d < dim; ++d) (*out)[d] += w * anchors[i][d];
  }
  return true;
}

void update_class(MemoryBank& bank, Domain expected, int class_id,
                  const std::vector<std::vector<double>>& anchors, int m,
                  int total_iters) {
  check_domain(bank, expected);
  check_class(bank, class_id);
  if (!bank.initialized[class_id - 1])
    throw contract_error("memory bank: class " + std::to_string(class_id) +
                         " not initialized");
  if (anchors.empty())
    throw std::invalid_argument("update_class: empty anchor set");
  check_anchor_dims(bank, anchors);
  double* r = bank.row(class_id);
  const std::vector<double> sims =
      similarity_vector(anchors, r, bank.dim);
  std::vector<double> agg;
  if (!aggregate_anchors(anchors, sims, &agg)) return;
  const double t = schedule_t(m - 1, total_iters, bank.t0, bank.p);
  for (int d = 0; d < bank.dim; ++d) r[d] = t * r[d] + (1.0 - t) * agg[d];
}

std::vector<double> get_positive(const MemoryBank& bank, int class_id) {
  check_class(bank, class_id);
  if (!bank.initialized[class_id - 1])
    throw contract_error("memory bank: bank not warmed up (class " +
                         std::to_string(class_id) + ")");
  const double* r = bank.row(class_id);
  return std::vector<double>(r, r + bank.dim);
}

}  // namespace dacca
