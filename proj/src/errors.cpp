#include "imfbridge/errors.hpp"

namespace imfb {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::NonSPDMatrix: return "NonSPDMatrix";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidTimeOrder: return "InvalidTimeOrder";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::SingularBlock: return "SingularBlock";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::OdeBlowup: return "OdeBlowup";
    case Errc::MarginalViolation: return "MarginalViolation";
    case Errc::InvalidInitialCoupling: return "InvalidInitialCoupling";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::TooFewParticles: return "TooFewParticles";
    case Errc::SearchBoxTooSmall: return "SearchBoxTooSmall";
    case Errc::FixedPointNotFound: return "FixedPointNotFound";
    case Errc::InvalidAlpha: return "InvalidAlpha";
    case Errc::NonFiniteHessian: return "NonFiniteHessian";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

bool is_numerical_failure(Errc code) noexcept {
  switch (code) {
    case Errc::SingularBlock:
    case Errc::NoConvergence:
    case Errc::OdeBlowup:
    case Errc::MarginalViolation:
    case Errc::DegenerateWeights:
    case Errc::FixedPointNotFound:
    case Errc::NonFiniteHessian:
    case Errc::SearchBoxTooSmall:
      return true;
    default:
      return false;
  }
}

}  // namespace imfb
