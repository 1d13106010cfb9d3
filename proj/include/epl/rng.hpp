// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

#include "epl/tensor.hpp"

namespace epl {

/// Counter-based generator: every output is a pure function of (key, counter).
///
/// Independent consumers derive their own stream with `substream(tag)`, so adding a
/// new consumer never shifts the values seen by existing ones. The key derivation
/// and output mixing use the SplitMix64 finalizer, which is integer-only and
/// therefore identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    Rng substream(std::string_view tag) const;
    Rng substream(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, n); exact (rejection sampling). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal draw (Box-Muller, one value per pair of uniforms).
    double normal();

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// I.i.d. Normal(mean, sigma^2) tensor. Throws Error if sigma < 0.
Tensor sample_gaussian(Rng& rng, float mean, float sigma, const Shape& dims);

}  // namespace epl
