#ifndef DACCA_PSMM_HPP
#define DACCA_PSMM_HPP

#include <vector>

namespace dacca {

enum class Domain { source, target };

const char* domain_name(Domain d);

// Positive sample memory module: one domain-level feature row per lane
// class, EMA-updated with a polynomially annealed factor.
struct MemoryBank {
  Domain domain = Domain::source;
  int num_lanes = 0;  // C; rows are lane classes 1..C
  int dim = 0;        // D
  std::vector<double> features;  // C x D row-major
  std::vector<char> initialized;
  double t0 = 0.9;
  double p = 0.9;

  bool fully_initialized() const;
  const double* row(int class_id) const;  // class_id in 1..C
  double* row(int class_id);
};

MemoryBank make_bank(Domain domain, int num_lanes, int dim, double t0 = 0.9,
                     double p = 0.9);

struct BankPair {
  MemoryBank source;
  MemoryBank target;
  bool fully_initialized() const {
    return source.fully_initialized() && target.fully_initialized();
  }
};

// Annealed EMA factor: (1 - m/T)^p * (t0 - t0/100) + t0/100, clamped to the
// endpoint value for m > T.
double schedule_t(int m, int total_iters, double t0, double p);

// Mean of the anchors becomes the class row; empty anchor sets leave the
// class uninitialized.
void initialize_class(MemoryBank& bank, Domain expected, int class_id,
                      const std::vector<std::vector<double>>& anchors);

// Cosine similarity of each anchor against the stored row.
std::vector<double> similarity_vector(
    const std::vector<std::vector<double>>& anchors,
    const double* memory_row, int dim);

// Similarity-weighted aggregation with weights (1-S_i)/sum_j(1-S_j).
// Returns false (no-update) when every anchor coincides with the row.
bool aggregate_anchors(const std::vector<std::vector<double>>& anchors,
                       const std::vector<double>& similarities,
                       std::vector<double>* out);

// EMA update with factor schedule_t(m-1); a no-update signal from the
// aggregation leaves the row unchanged.
void update_class(MemoryBank& bank, Domain expected, int class_id,
                  const std::vector<std::vector<double>>& anchors, int m,
                  int total_iters);

// Gradient-stopped copy of the class row.
std::vector<double> get_positive(const MemoryBank& bank, int class_id);

}  // namespace dacca

#endif
