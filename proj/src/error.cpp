#include "tacmpc/error.hpp"

namespace tacmpc {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonPositiveDt: return "NonPositiveDt";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::SolverFailed: return "SolverFailed";
        case ErrorCode::DegenerateActiveSet: return "DegenerateActiveSet";
        case ErrorCode::InvalidProtocol: return "InvalidProtocol";
        case ErrorCode::MalformedName: return "MalformedName";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::Io: return "Io";
        case ErrorCode::EpisodeOver: return "EpisodeOver";
        case ErrorCode::NeverSettled: return "NeverSettled";
        case ErrorCode::Parse: return "Parse";
    }
    return "Unknown";
}

}  // namespace tacmpc
