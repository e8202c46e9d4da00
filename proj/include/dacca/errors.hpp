#ifndef DACCA_ERRORS_HPP
#define DACCA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dacca {

// Error categories mapped to CLI exit codes: config_error -> 2,
// data_error -> 3, contract_error -> 4. Everything else exits 1.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violations of the UDA protocol (e.g. reading target labels during
// adaptation) or of module preconditions that indicate a caller bug.
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dacca

#endif
