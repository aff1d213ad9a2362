#include "committee/error.hpp"

namespace committee {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPsd: return "NonPsd";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::UnsupportedLabel: return "UnsupportedLabel";
    case ErrorCode::ImpossibleOutcome: return "ImpossibleOutcome";
    case ErrorCode::SingularSigma: return "SingularSigma";
    case ErrorCode::Domain: return "DomainError";
    case ErrorCode::ChannelUnderflow: return "ChannelUnderflow";
    case ErrorCode::NonPdCovariance: return "NonPdCovariance";
    case ErrorCode::Bracket: return "BracketError";
    case ErrorCode::Config: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace committee
