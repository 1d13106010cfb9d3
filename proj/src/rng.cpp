// SPDX-License-Identifier: Apache-2.0
#include "epl/rng.hpp"

#include <cmath>
#include <numbers>

namespace epl {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

Rng Rng::substream(std::string_view tag) const
{
    return Rng(mix64(key_ ^ mix64(fnv1a(tag))), 0);
}

Rng Rng::substream(std::uint64_t index) const
{
    return Rng(mix64(key_ + mix64(index ^ 0xA5A5A5A5A5A5A5A5ull) * kGolden), 0);
}

std::uint64_t Rng::next_u64()
{
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0) throw Error("rng: below(0)");
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal()
{
    double u1;
    do {
        u1 = uniform();
    } while (u1 == 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor sample_gaussian(Rng& rng, float mean, float sigma, const Shape& dims)
{
    if (!(sigma >= 0.0f)) throw Error("sample_gaussian: sigma must be >= 0");
    Tensor out(dims, mean);
    if (sigma == 0.0f) return out;
    for (auto& v : out.data()) {
        v = static_cast<float>(mean + static_cast<double>(sigma) * rng.normal());
    }
    return out;
}

}  // namespace epl
