#pragma once

// Batched forward-pass runtime of the coupled layer against the decoupled
// single-agent baseline across batch sizes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tacmpc/mpc.hpp"

namespace tacmpc {

struct BenchConfig {
    std::vector<int> batch_sizes{1, 2, 4, 8, 16, 32, 64, 128};
    int repetitions = 20;
    int warmup = 3;
    std::uint64_t seed = 0;
    Execution exec = Execution::Serial;  // acceptance numbers use the serial loop
    std::optional<MpcParams> params;     // default: MpcParams::init(M, seed, 1e4, 3e-4)

    /// Throws Error{InvalidConfig}.
    void validate() const;
};

struct BenchResult {
    int batch_size = 0;
    double multi_rt = 0.0;   // s, median over repetitions
    double single_rt = 0.0;  // s, median over repetitions
    double increase_pct = 0.0;
    int repetitions = 0;
    int warmup = 0;
    int multi_outliers = 0;   // repetitions slower than 3x the median
    int single_outliers = 0;
    int multi_failures = 0;   // failed solves, excluded from nothing but counted
    int single_failures = 0;
    std::uint64_t input_hash = 0;  // both arms consume the batch with this hash
};

/// Seeded grasp-like inputs: openings near the slip region of the training
/// objects, small velocities and encoder embeddings.
std::vector<MpcInputs> bench_inputs(const MpcConfig& cfg, int count, std::uint64_t seed);

/// FNV-1a over the bit patterns of every input value.
std::uint64_t hash_inputs(std::span<const MpcInputs> batch);

/// Throws Error{InvalidConfig}; a hash mismatch between arms throws
/// Error{InvalidConfig} as well since the comparison would be unfair.
std::vector<BenchResult> run_bench(const MpcConfig& cfg, const BenchConfig& bc);

/// Median multi_rt non-decreasing in batch size within `slack` (relative).
bool multi_monotone(const std::vector<BenchResult>& r, double slack = 0.1);

/// Table columns first (batch size, multi RT, single RT, increase %), then
/// bookkeeping.
void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& r);

}  // namespace tacmpc
