#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sam2aug
{

enum class Errc
{
    UnsupportedDatatype,
    MalformedHeader,
    CompressedInput,
    NonBinaryMask,
    IoFailure,
    LossyDtype,
    EmptyMask,
    GeometryMismatch,
    InvalidArgument,
    MissingPrior,
    EmptyOverlap,
    DegenerateInput,
    EmptySurface,
    UndefinedDistance,
    BackendFailure,
    ProtocolViolation,
    MissingPrompt,
    MissingInput,
    SpawnFailure,
    HandshakeTimeout,
    VersionMismatch,
    TumorOutOfBounds,
    InvalidSpec,
    ManifestError,
};

constexpr std::string_view to_string(Errc e) noexcept
{
    switch (e) {
    case Errc::UnsupportedDatatype: return "unsupported datatype";
    case Errc::MalformedHeader: return "malformed header";
    case Errc::CompressedInput: return "compressed input";
    case Errc::NonBinaryMask: return "non-binary mask";
    case Errc::IoFailure: return "io failure";
    case Errc::LossyDtype: return "lossy dtype";
    case Errc::EmptyMask: return "empty mask";
    case Errc::GeometryMismatch: return "geometry mismatch";
    case Errc::InvalidArgument: return "invalid argument";
    case Errc::MissingPrior: return "missing prior";
    case Errc::EmptyOverlap: return "empty overlap";
    case Errc::DegenerateInput: return "degenerate input";
    case Errc::EmptySurface: return "empty surface";
    case Errc::UndefinedDistance: return "undefined distance";
    case Errc::BackendFailure: return "backend failure";
    case Errc::ProtocolViolation: return "protocol violation";
    case Errc::MissingPrompt: return "missing prompt";
    case Errc::MissingInput: return "missing input";
    case Errc::SpawnFailure: return "spawn failure";
    case Errc::HandshakeTimeout: return "handshake timeout";
    case Errc::VersionMismatch: return "version mismatch";
    case Errc::TumorOutOfBounds: return "tumor out of bounds";
    case Errc::InvalidSpec: return "invalid spec";
    case Errc::ManifestError: return "manifest error";
    }
    return "unknown error";
}

/// Every failure raised by the library carries one of the codes above.
/// what() is "<code text>: <detail>".
class Error : public std::runtime_error
{
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code)
    {
    }

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail)
{
    throw Error(code, detail);
}

} // namespace sam2aug
