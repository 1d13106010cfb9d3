// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "epl/model.hpp"
#include "epl/state.hpp"
#include "epl/trainer.hpp"

namespace epl {

/// Zero the floor(rate * survivors) smallest-magnitude surviving prunable weights,
/// ranked globally across all layers. Ties break by parameter id, then flat
/// index, so masks are reproducible everywhere. The round index advances by one.
Mask prune_mask(const ParamMap& final_params, const Mask& prev, double rate = 0.2);

struct ImpConfig {
    ArchSpec arch;
    Hparams hparams;
    std::uint64_t rewind_iteration = 0;
    std::size_t rounds = 6;
    double rate = 0.2;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::size_t workers = 1;
};

struct SeedRun {
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    Checkpoint init;
    Checkpoint rewind_point;
    /// masks[r] is the mask trained in round r; masks[0] is dense.
    std::vector<Mask> masks;
    std::vector<double> accuracy;
    std::vector<ParamMap> finals;
};

struct RoundSummary {
    std::size_t round;
    double fraction_remaining;
    double mean_accuracy;
    double std_accuracy;  ///< sample standard deviation over completed seeds
    std::size_t completed;
    std::size_t failed;
};

struct ImpResult {
    std::uint64_t rewind_iteration;
    std::vector<RoundSummary> rounds;
    std::vector<SeedRun> runs;
};

/// Called after each round of each seed with the mask used and its final weights.
struct ImpHooks {
    std::function<void(std::uint64_t seed, std::size_t round, const Mask&, const Checkpoint& final,
                       double accuracy)>
        on_round;
    std::function<void(std::uint64_t seed, const Checkpoint&)> on_checkpoint;
    std::set<std::uint64_t> extra_checkpoints;
};

/// Initial state for a seed; by default build_model(arch, Rng(seed)).
using StartFactory = std::function<TrainState(std::uint64_t seed)>;

/// Train dense to completion (capturing iteration k), then for each round prune
/// 20% of survivors, rewind to k and retrain from k. Seeds run in parallel on
/// `workers` threads; a diverged seed is marked failed and excluded from means.
ImpResult imp_with_rewinding(const ImpConfig& cfg, const TrainData& data, const ImpHooks& hooks = {},
                             const StartFactory& start = {});

SeedRun run_imp_seed(const ImpConfig& cfg, const TrainData& data, std::uint64_t seed, const TrainState& start,
                     const ImpHooks& hooks = {});

std::vector<RoundSummary> summarize_rounds(const std::vector<SeedRun>& runs, std::size_t rounds);

enum class VariantMode { reinit, random_prune };

struct MaskedStart {
    Mask mask;
    WeightSnapshot snapshot;
};

/// reinit: same mask, fresh initialization (masked). random_prune: new mask with
/// the same per-layer survivor counts at uniformly random positions, applied to
/// `source`.
MaskedStart random_variant(const Mask& mask, VariantMode mode, const ArchSpec& arch, const ParamMap& source,
                           const Rng& rng);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace epl
