#pragma once

#include <stdexcept>
#include <string>

namespace imfb {

enum class Errc {
  NonSPDMatrix,
  DimensionMismatch,
  InvalidTimeOrder,
  InvalidArgument,
  SingularBlock,
  NoConvergence,
  OdeBlowup,
  MarginalViolation,
  InvalidInitialCoupling,
  DegenerateWeights,
  TooFewParticles,
  SearchBoxTooSmall,
  FixedPointNotFound,
  InvalidAlpha,
  NonFiniteHessian,
};

const char* to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// True for failures of the numerics rather than of the inputs.
bool is_numerical_failure(Errc code) noexcept;

}  // namespace imfb
