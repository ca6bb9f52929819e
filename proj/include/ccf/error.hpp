#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccf {

enum class Errc {
    // geometry
    DegenerateLine,
    CoincidentLines,
    InvalidCalibration,
    ReferenceSelectionFailed,
    RecursionStalled,
    GridTooSmall,
    HorizonSingularity,
    // background
    TooFewFrames,
    // scene
    SchemaViolation,
    InvariantViolation,
    OutOfExtent,
    // simulation
    NoEntrances,
    NoExits,
    Unreachable,
    // compositor
    MissingImage,
    BadKeypoint,
    NoAlpha,
    // annotate / evaluate
    ManifestMismatch,
    DegenerateSkeleton,
    FrameMismatch,
    // plumbing
    Io,
};

std::string_view errc_name(Errc code);

/// Input was rejected before any work happened (CLI exit status 2).
bool is_validation_error(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, std::string field = {})
        : std::runtime_error(std::string(errc_name(code)) + ": " + message),
          code_(code),
          field_(std::move(field)) {}

    Errc code() const noexcept { return code_; }
    /// JSON-ish path of the offending field, empty when not applicable.
    const std::string& field() const noexcept { return field_; }

private:
    Errc code_;
    std::string field_;
};

}  // namespace ccf
