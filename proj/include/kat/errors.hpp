#pragma once

#include <stdexcept>
#include <string>

namespace kat {

// Error taxonomy. The CLI maps these onto exit codes:
//   usage/config errors -> 2, data/format errors -> 3, numeric errors -> 4.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors (e.g. matmul inner dims).
struct dimension_error : error {
  using error::error;
};

// Invalid argument value (tau <= 0, delta <= 0, K > n_p, ...).
struct parameter_error : error {
  using error::error;
};

// A stated precondition of an operation was violated by a caller.
struct contract_error : error {
  using error::error;
};

// Out-of-range index (class label, ...).
struct index_error : error {
  using error::error;
};

// Malformed file content (bad magic, truncation, unparsable text).
struct format_error : error {
  using error::error;
};

// Inconsistent or unknown configuration keys/values.
struct config_error : error {
  using error::error;
};

// Dataset-level problems (missing files, empty splits, degenerate inputs).
struct data_error : error {
  using error::error;
};

// NaN/Inf appeared in a computation.
struct numeric_error : error {
  using error::error;
};

// A metric is undefined for the given inputs (e.g. single-class AUC).
struct metric_error : error {
  using error::error;
};

}  // namespace kat
