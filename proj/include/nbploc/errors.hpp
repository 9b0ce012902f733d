#pragma once

#include <stdexcept>
#include <string>

namespace nbploc {

// All weights are zero, negative, or non-finite; the caller decides whether
// to recover (the engine retries with re-drawn proposals) or to give up.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Circular mean of an orientation particle set with near-zero resultant.
class DegenerateOrientationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fewer than three NLOS paths; the joint problem is not solvable.
class InsufficientPathsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rank-deficient trial system in the least-squares baseline.
class SingularGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every trial of the baseline grid failed.
class EstimationFailedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed configuration file or invalid parameter combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nbploc
