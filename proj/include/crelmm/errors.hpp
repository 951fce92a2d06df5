#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crelmm {

// All library failures derive from Error so callers can distinguish
// library conditions from generic std exceptions at the CLI boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical factorization is unusable; carries a condition estimate when one
// is available (0 means "not computed").
class IllConditionedError : public Error {
 public:
  IllConditionedError(const std::string& msg, double condition_estimate)
      : Error(msg), condition_estimate(condition_estimate) {}
  double condition_estimate;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

// Input matrix failed the symmetry tolerance check.
class SymmetryError : public Error {
 public:
  SymmetryError(const std::string& msg, double max_asymmetry)
      : Error(msg), max_asymmetry(max_asymmetry) {}
  double max_asymmetry;
};

// A (row, column) factor combination has no observations.
class IncompleteGridError : public Error {
 public:
  IncompleteGridError(const std::string& msg,
                      std::vector<std::pair<std::string, std::string>> missing)
      : Error(msg), missing_cells(std::move(missing)) {}
  std::vector<std::pair<std::string, std::string>> missing_cells;
};

class CsvParseError : public Error {
 public:
  CsvParseError(const std::string& msg, std::size_t row)
      : Error(msg), row(row) {}
  std::size_t row;  // 1-based line number, header = 1
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Pooled second-moment matrix is singular; names the offending direction.
class CollinearityError : public Error {
 public:
  CollinearityError(const std::string& msg, std::vector<double> null_direction)
      : Error(msg), null_direction(std::move(null_direction)) {}
  std::vector<double> null_direction;
};

// Dense materialization refused because the problem exceeds the size guard.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class DegenerateInferenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace crelmm
