#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mhde {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter or argument lies outside its admissible domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Array lengths do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// All observations coincide (or the weighted spread is zero).
class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

/// A Poisson draw produced an empty sample; callers are expected to retry.
class EmptySampleError : public Error {
 public:
  using Error::Error;
};

/// The design information needed by an operation is missing or invalid.
class DesignError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& what, std::vector<int> clusters)
      : Error(what), clusters_(std::move(clusters)) {}
  const std::vector<int>& clusters() const noexcept { return clusters_; }

 private:
  std::vector<int> clusters_;
};

/// An iterative solver stopped without meeting its tolerance. Carries the
/// last (or best) iterate so callers can inspect or reuse it.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::array<double, 2> last,
                   int iterations)
      : Error(what), last_(last), iterations_(iterations) {}
  const std::array<double, 2>& last_iterate() const noexcept { return last_; }
  int iterations() const noexcept { return iterations_; }

 private:
  std::array<double, 2> last_;
  int iterations_;
};

/// A curvature matrix that must be positive definite is not.
class CurvatureError : public Error {
 public:
  CurvatureError(const std::string& what, std::array<double, 2> eigenvalues)
      : Error(what), eigenvalues_(eigenvalues) {}
  const std::array<double, 2>& eigenvalues() const noexcept {
    return eigenvalues_;
  }

 private:
  std::array<double, 2> eigenvalues_;
};

/// Monte-Carlo draws from the asymptotic distribution fell outside the
/// parameter domain too often.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or configuration; `where` names the line or key path.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& where, const std::string& what)
      : Error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mhde
