#include "ccf/error.hpp"

namespace ccf {

std::string_view errc_name(Errc code) {
    switch (code) {
        case Errc::DegenerateLine: return "DegenerateLine";
        case Errc::CoincidentLines: return "CoincidentLines";
        case Errc::InvalidCalibration: return "InvalidCalibration";
        case Errc::ReferenceSelectionFailed: return "ReferenceSelectionFailed";
        case Errc::RecursionStalled: return "RecursionStalled";
        case Errc::GridTooSmall: return "GridTooSmall";
        case Errc::HorizonSingularity: return "HorizonSingularity";
        case Errc::TooFewFrames: return "TooFewFrames";
        case Errc::SchemaViolation: return "SchemaViolation";
        case Errc::InvariantViolation: return "InvariantViolation";
        case Errc::OutOfExtent: return "OutOfExtent";
        case Errc::NoEntrances: return "NoEntrances";
        case Errc::NoExits: return "NoExits";
        case Errc::Unreachable: return "Unreachable";
        case Errc::MissingImage: return "MissingImage";
        case Errc::BadKeypoint: return "BadKeypoint";
        case Errc::NoAlpha: return "NoAlpha";
        case Errc::ManifestMismatch: return "ManifestMismatch";
        case Errc::DegenerateSkeleton: return "DegenerateSkeleton";
        case Errc::FrameMismatch: return "FrameMismatch";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

bool is_validation_error(Errc code) {
    switch (code) {
        case Errc::DegenerateLine:
        case Errc::CoincidentLines:
        case Errc::InvalidCalibration:
        case Errc::TooFewFrames:
        case Errc::SchemaViolation:
        case Errc::InvariantViolation:
        case Errc::NoEntrances:
        case Errc::NoExits:
        case Errc::MissingImage:
        case Errc::BadKeypoint:
        case Errc::NoAlpha:
        case Errc::ManifestMismatch:
        case Errc::FrameMismatch:
            return true;
        default:
            return false;
    }
}

}  // namespace ccf
