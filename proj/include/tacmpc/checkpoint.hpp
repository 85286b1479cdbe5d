#pragma once

// Versioned JSON container for the learnable parameters and the layer
// configuration they were trained with.

#include <filesystem>

#include <json.hpp>

#include "tacmpc/params.hpp"

namespace tacmpc {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const qp::SolverSettings& s);
qp::SolverSettings solver_settings_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MpcConfig& cfg);
/// Missing keys keep their defaults. Throws Error{Parse | InvalidConfig}.
MpcConfig config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MpcParams& p);
/// Throws Error{Parse | DimensionMismatch | NonFinite}.
MpcParams params_from_json(const nlohmann::json& j);

struct Checkpoint {
    MpcConfig config;
    MpcParams params;
    nlohmann::json extra = nlohmann::json::object();  // training metadata
};

/// Throws Error{Io}.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Validates version, shapes and that the assembled tactile penalty keeps
/// lambda_min >= eps / 2. Throws Error{Io | Parse | DimensionMismatch |
/// NonFinite | InvalidConfig}.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tacmpc
