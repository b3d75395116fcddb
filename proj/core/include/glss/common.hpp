#pragma once

// Shared plumbing: error taxonomy, deterministic random numbers, seed
// derivation for independent work items, and a bounded worker pool.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace glss {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A caller-supplied value violates a documented precondition.
class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& what) : Error(what) {}
};

// A dataset directory exists but its contents break the layout contract.
class MalformedDatasetError : public Error {
public:
    explicit MalformedDatasetError(const std::string& what) : Error(what) {}
};

// Training produced a non-finite loss; reports where it happened.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& what, int epoch, int batch)
        : Error(what), epoch(epoch), batch(batch) {}
    int epoch = 0;
    int batch = 0;
};

// Latent search ran away; carries the loss trajectory seen so far.
class SearchDivergedError : public Error {
public:
    SearchDivergedError(const std::string& what, std::vector<double> trajectory)
        : Error(what), trajectory(std::move(trajectory)) {}
    std::vector<double> trajectory;
};

// A forward pass produced NaN/Inf outside of training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

// Command-line misuse (unknown flag, bad subcommand); maps to exit code 1.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic random numbers
// ---------------------------------------------------------------------------

// splitmix64 mix step; used to derive independent seeds from (seed, index)
// pairs so that parallel work items never share a stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

// Random generator with pinned algorithms (not implementation-defined
// distributions) so that every platform produces the same stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01();

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller (one spare cached).
    double normal();

    // Vector of i.i.d. standard normals.
    std::vector<double> normal_vector(int n);

    // Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<int> permutation(int n);

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

// Name of the environment variable selecting the worker-pool size.
inline constexpr const char* kWorkersEnvVar = "GLSS_WORKERS";

// Pool size from the environment, or hardware concurrency when unset.
int worker_count_from_env();

// Runs fn(i) for i in [0, n) on `workers` threads. Each index is claimed
// exactly once; fn must write only to per-index storage so results are
// identical for any worker count. workers <= 1 runs inline.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace glss
