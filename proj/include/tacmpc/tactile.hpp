#pragma once

// Synthetic tactile sensing and the trial dataset layout.
//
// The encoder stands in for a frozen image backbone: it maps a contact state
// to an M-vector through two fixed projections plus deterministic noise.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacmpc/types.hpp"

namespace tacmpc {

struct ContactState {
    double depth = 0.0;      // gel indentation, mm, >= 0
    double shear = 0.0;      // tangential load proxy, signed
    double stiffness = 1.0;  // kappa, N/mm, > 0
    bool slipping = false;

    /// Throws Error{InvalidConfig}.
    void validate() const;
};

class SyntheticEncoder {
public:
    /// Projections are seeded Gaussian vectors scaled by 1/sqrt(M).
    SyntheticEncoder(int embed_dim, std::uint64_t seed, double noise_sigma = 0.01);

    /// f = tanh(kappa * depth) W_depth + shear W_shear + eta, where eta is
    /// Gaussian with a stream keyed by (seed, inputs rounded to 1e-3).
    VecX encode(const ContactState& c) const;

    int embed_dim() const { return static_cast<int>(w_depth_.size()); }
    std::uint64_t seed() const { return seed_; }
    double noise_sigma() const { return noise_sigma_; }
    const VecX& w_depth() const { return w_depth_; }
    const VecX& w_shear() const { return w_shear_; }

private:
    VecX w_depth_;
    VecX w_shear_;
    double noise_sigma_;
    std::uint64_t seed_;
};

/// Two-site contact physics shared by the data generator and the simulator.
/// Depth at a site is half the interference between site width and opening;
/// the normal force kappa * depth sets how the tangential load is shared.
struct GraspPhysics {
    std::array<double, 2> width{40.0, 40.0};  // mm
    double stiffness = 1.0;                   // N/mm
    double load = 0.6;                        // tangential load, N
    double friction = 1.0;                    // mu
    double shear_gain = 1.0;

    /// Opening above which friction at a site can no longer carry its half of
    /// the load: width - load / (mu * kappa).
    double slip_opening(int site) const;
    std::array<ContactState, 2> contacts(double p1, double p2) const;
};

// ─── Trial protocol ─────────────────────────────────────────────────────────

struct ObjectSpec {
    std::string name;
    double width = 40.0;
    double stiffness = 1.0;
    double load = 0.6;
    double friction = 1.0;

    GraspPhysics physics() const;
};

/// Blocks used for data collection (stiffness spans the simulator objects).
std::vector<ObjectSpec> default_training_objects();

struct ProtocolConfig {
    double init_jitter = 0.7;    // half-width, mm
    double slip_jitter = 0.35;   // half-width, mm
    double sweep_span = 1.5;     // base initial opening = base slip opening - span
    int frames = 25;
    int subtrials = 4;

    /// Throws Error{InvalidProtocol}.
    void validate() const;
};

struct TrialFrame {
    int index = 0;
    std::array<double, 2> opening{};  // mm, multiples of 1e-3
    std::array<VecXf, 2> embedding;   // float32, as stored on disk
};

struct TrialRecord {
    int trial_id = 0;
    int subtrial = 0;
    double slippage_opening = 0.0;  // mm, multiple of 1e-3
    int active_agent = 1;           // 1 or 2
    std::vector<TrialFrame> frames;

    /// Throws Error{InvalidProtocol | ShapeMismatch}.
    void validate(int embed_dim, int frames_expected = 25) const;
    bool operator==(const TrialRecord& o) const;
};

/// Openings are stored at 1e-3 mm resolution so filenames carry them exactly.
double quantize_mm(double v);

/// One trial of `protocol.subtrials` sub-trials. The active gripper opens in
/// uniform steps from a jittered initial opening to the jittered slippage
/// opening while the other holds its own jittered initial opening. Roles
/// alternate between sub-trials, and the first role alternates between
/// trials. Throws Error{InvalidProtocol}.
std::vector<TrialRecord> generate_trial(const ObjectSpec& object, const ProtocolConfig& protocol,
                                        const SyntheticEncoder& encoder, int trial_id, std::uint64_t seed);

// ─── On-disk layout ─────────────────────────────────────────────────────────

struct EmbName {
    int agent = 0;
    double opening = 0.0;
    int frame = 0;
};

std::string subtrial_dir_name(const TrialRecord& r);
std::string emb_file_name(int agent, double opening, int frame);
/// Throws Error{MalformedName}.
EmbName parse_emb_name(const std::string& name);

/// Throws Error{Io}.
void write_emb(const std::filesystem::path& path, const VecXf& v);
/// Throws Error{Io | BadMagic | ShapeMismatch}.
VecXf read_emb(const std::filesystem::path& path, int embed_dim);

/// Writes <root>/<subtrial_dir_name>/ with 2 files per frame. Returns the
/// directory. Throws Error{Io}.
std::filesystem::path write_trial(const std::filesystem::path& root, const TrialRecord& r);
/// Throws Error{MalformedName | ShapeMismatch | BadMagic | InvalidProtocol | Io}.
TrialRecord read_trial(const std::filesystem::path& dir, int embed_dim, int frames_expected = 25);

// ─── Datasets ───────────────────────────────────────────────────────────────

struct DatasetConfig {
    int trials = 200;
    std::uint64_t seed = 0;
    int embed_dim = 20;
    std::uint64_t encoder_seed = 1234;
    double noise_sigma = 0.01;
    ProtocolConfig protocol;
    std::vector<ObjectSpec> objects = default_training_objects();  // cycled by trial id
};

struct Dataset {
    DatasetConfig config;
    std::vector<TrialRecord> records;  // trial-major, sub-trial minor

    SyntheticEncoder encoder() const;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// Trials are generated independently (seed split per trial id), in parallel.
Dataset generate_dataset(const DatasetConfig& cfg);
/// Writes all sub-trial directories and dataset.json. Refuses to touch an
/// existing non-empty directory unless force is set. Throws Error{Io}.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, bool force);
/// Reads dataset.json and every referenced sub-trial directory.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace tacmpc
