#ifndef ASYMBP_RNG_HPP
#define ASYMBP_RNG_HPP

#include <cstdint>
#include <random>

namespace asymbp {

using Rng = std::mt19937_64;

/// What a random stream is used for. Each (seed, purpose, index) triple gets
/// its own generator, so enabling one consumer never shifts another's draws.
enum class Stream : std::uint32_t {
    init = 1,            // weight initialization, index = weighted-layer ordinal
    magnitude = 2,       // feedback magnitudes M
    flip = 3,            // feedback sign flips S_p
    random_feedback = 4, // RndF draws
    shuffle = 5,         // per-epoch training order
    bn_stats = 6,        // mini-batches drawn for running statistics
    data = 7,            // synthetic data and subsetting
};

inline Rng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

} // namespace asymbp

#endif // ASYMBP_RNG_HPP
