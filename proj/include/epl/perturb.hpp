// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "epl/model.hpp"
#include "epl/rng.hpp"
#include "epl/state.hpp"

namespace epl {

// All perturbations act on the positions listed in the mask (the prunable
// kernels) and only where the mask keeps the weight. Pruned positions and
// parameters outside the mask are passed through unchanged.

/// out = sign(sign_src) * |mag_src| on surviving positions, 0 on pruned ones.
/// Parameters outside the mask are copied from `mag_src`.
WeightSnapshot recombine(const WeightSnapshot& sign_src, const WeightSnapshot& mag_src, const Mask& mask);

enum class Scope { global, layer, filter };

/// Permute surviving values within each scope group. Filter scope uses the conv
/// filter ranges of `index`; kernels without filters (dense) fall back to the
/// whole layer. With `sign_preserving`, each group is further split by sign bit.
WeightSnapshot shuffle(const WeightSnapshot& snap, const Mask& mask, const StructuralIndex& index, Scope scope,
                       bool sign_preserving, const Rng& rng);

/// Adds Normal(0, (n * init_sigma)^2) to every surviving kernel weight, using the
/// per-layer init sigma recorded in `model`. Throws Error if n < 0.
WeightSnapshot add_noise(const WeightSnapshot& snap, const Mask& mask, const Model& model, double n,
                         const Rng& rng);

struct EffectiveStats {
    double mean;
    double stddev;  ///< population (divide by N)
};

/// Mean and stddev of (perturbed - orig) over surviving positions pooled across
/// all layers. Throws Error if nothing survives.
EffectiveStats effective_std(const WeightSnapshot& perturbed, const WeightSnapshot& orig, const Mask& mask);

struct Correlation {
    double r;
    double p;  ///< two-sided, Student t with N-2 degrees of freedom
};

/// Pearson correlation. Requires N >= 3 and nonzero variance on both sides.
Correlation pearson(std::span<const double> xs, std::span<const double> ys);

/// Regularized incomplete beta I_x(a, b); `y` must equal 1 - x (passed
/// separately to avoid cancellation).
double incomplete_beta(double a, double b, double x, double y);

// --- declarative specs ------------------------------------------------------

enum class Variant { none, recombine, shuffle, noise };

/// Where a recombination takes signs or magnitudes from.
enum class Source { init, rewind, reinit };

enum class SignOverride { none, init };

struct PerturbationSpec {
    Variant variant = Variant::none;
    Source sign_source = Source::rewind;
    Source magnitude_source = Source::rewind;
    Scope scope = Scope::global;
    bool sign_preserving = false;
    SignOverride sign_override = SignOverride::none;
    double noise_multiple = 0.0;
    std::uint64_t seed = 0;

    /// Variant name as written to the CSV `variant` column.
    std::string variant_name() const;
    /// Semicolon-separated key=value parameters for the CSV `params` column.
    std::string params() const;
};

/// Parses "none", "recombine:sign=rewind;mag=init",
/// "shuffle:scope=filter;sign_preserving=true;sign_override=init", "noise:n=0.5".
PerturbationSpec parse_perturbation(const std::string& text);
std::string to_string(const PerturbationSpec& spec);

/// Inputs shared by every perturbation of one sub-network.
struct PerturbContext {
    const Model* model = nullptr;
    StructuralIndex index;
    WeightSnapshot init;
    WeightSnapshot rewind;
    Mask mask;
};

/// Perturbed starting weights for `spec`, applied to the rewind-point state.
WeightSnapshot apply_perturbation(const PerturbationSpec& spec, const PerturbContext& ctx);

}  // namespace epl
