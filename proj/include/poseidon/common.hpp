#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace poseidon {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kPi = 3.14159265358979323846;

// Error taxonomy. The CLI maps each kind onto a distinct exit code.
enum class ErrorKind { InvalidInput, Schema, Io, Config, Numerical, Estimation };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_input(const std::string& what) { return {ErrorKind::InvalidInput, what}; }
inline Error schema_error(const std::string& what) { return {ErrorKind::Schema, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::Io, what}; }
inline Error config_error(const std::string& what) { return {ErrorKind::Config, what}; }
inline Error numerical_error(const std::string& what) { return {ErrorKind::Numerical, what}; }
inline Error estimation_error(const std::string& what) { return {ErrorKind::Estimation, what}; }

/// Random source used everywhere: 64-bit Mersenne Twister (MT19937-64).
/// Independent streams are derived from (seed, stream id) through std::seed_seq,
/// so each consumer (generator, sampler, contrastive noise) owns a reproducible stream.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    return Rng(seq);
}

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in (0, 1].
inline double uniform_open_closed(Rng& rng) { return 1.0 - uniform01(rng); }

}  // namespace poseidon
