#include "freqopf/error.hpp"

namespace freqopf {

std::string_view errc_name(Errc code)
{
    switch (code) {
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
    case Errc::UnknownGen: return "UnknownGen";
    case Errc::NotOutageCandidate: return "NotOutageCandidate";
    case Errc::Unbalanced: return "Unbalanced";
    case Errc::NumericalDivergence: return "NumericalDivergence";
    case Errc::EmptySystem: return "EmptySystem";
    case Errc::TooShort: return "TooShort";
    case Errc::Empty: return "Empty";
    case Errc::NoOutageCandidates: return "NoOutageCandidates";
    case Errc::InfeasibleScenario: return "InfeasibleScenario";
    case Errc::UnsettledSimulation: return "UnsettledSimulation";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::FingerprintMismatch: return "FingerprintMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ArchMismatch: return "ArchMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::KinkProximity: return "KinkProximity";
    case Errc::EmptyBox: return "EmptyBox";
    case Errc::CorruptWeights: return "CorruptWeights";
    case Errc::NonConvexCost: return "NonConvexCost";
    case Errc::InvalidModel: return "InvalidModel";
    case Errc::UnsoundBounds: return "UnsoundBounds";
    case Errc::NotOptimal: return "NotOptimal";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what)
    , code_(code)
{
}

Error::Error(Errc code, const std::string& what, std::vector<std::string> details)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what)
    , code_(code)
    , details_(std::move(details))
{
}

}  // namespace freqopf
