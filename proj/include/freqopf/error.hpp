#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace freqopf {

enum class Errc {
    ParseError,
    ValidationError,
    UnknownGen,
    NotOutageCandidate,
    Unbalanced,
    NumericalDivergence,
    EmptySystem,
    TooShort,
    Empty,
    NoOutageCandidates,
    InfeasibleScenario,
    UnsettledSimulation,
    SchemaMismatch,
    FingerprintMismatch,
    DimensionMismatch,
    EmptyDataset,
    ArchMismatch,
    InvalidConfig,
    KinkProximity,
    EmptyBox,
    CorruptWeights,
    NonConvexCost,
    InvalidModel,
    UnsoundBounds,
    NotOptimal,
    IoError,
};

std::string_view errc_name(Errc code);

/// Single exception type for the library; the code identifies the failure.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what);
    Error(Errc code, const std::string& what, std::vector<std::string> details);

    Errc code() const noexcept { return code_; }
    const std::vector<std::string>& details() const noexcept { return details_; }

private:
    Errc code_;
    std::vector<std::string> details_;
};

}  // namespace freqopf
