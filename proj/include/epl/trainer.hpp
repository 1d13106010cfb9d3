// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "epl/data.hpp"
#include "epl/model.hpp"
#include "epl/state.hpp"

namespace epl {

struct Hparams {
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::size_t> lr_drop_epochs{10, 15};
    double lr_drop_factor = 0.1;

    /// 160 epochs, batch 128, drops at epochs 80 and 120.
    static Hparams full_recipe();

    void validate() const;
};

std::uint64_t iterations_per_epoch(std::size_t examples, std::size_t batch_size);

/// Piecewise-constant schedule: lr0 times drop_factor per drop epoch already reached.
double lr_at(std::uint64_t iteration, const Hparams& hp, std::uint64_t iters_per_epoch);

/// Training set, evaluation set and the transform applied to both (augmentation
/// only on the training side).
struct TrainData {
    const Dataset* train = nullptr;
    const Dataset* eval = nullptr;
    TransformSpec transform;
};

struct TrainState {
    ParamMap params;
    ParamMap momentum;
    std::uint64_t iteration = 0;
};

TrainState initial_state(const Model& model);

/// Surviving weights from the checkpoint, pruned weights zero, momentum reset.
/// The run resumes at the checkpoint's iteration.
TrainState rewind(const Checkpoint& checkpoint, const Mask& mask);

/// Mini-batch gradient information handed to observers before an update.
struct StepView {
    std::uint64_t iteration;
    const ParamMap& params;
    const ParamMap& grads;
    double train_loss;
};

struct TrainOptions {
    std::set<std::uint64_t> checkpoint_iters;
    std::function<void(const Checkpoint&)> on_checkpoint;
    /// Iterations at which `on_step` fires. The final iteration (after the last
    /// update) is included when selected; its gradient uses the batch that would
    /// come next.
    std::function<bool(std::uint64_t)> observe;
    std::function<void(const StepView&)> on_step;
    std::string run_id;
};

/// One SGD step: v <- momentum*v + (g + wd*w); w <- w - lr*v. Masked gradient
/// and momentum entries are zeroed so pruned weights stay exactly zero.
void sgd_update(ParamMap& params, ParamMap& momentum, const ParamMap& grads, const Mask* mask, double lr,
                const Hparams& hp);

struct MinibatchResult {
    double loss;
    ParamMap grads;
};

MinibatchResult loss_and_gradients(const ArchSpec& arch, const ParamMap& params, const Batch& batch);

/// Trains from `start.iteration` to epochs * iterations_per_epoch. Throws
/// DivergenceError on a non-finite loss.
Checkpoint train(const ArchSpec& arch, TrainState start, const Mask* mask, const TrainData& data,
                 const Hparams& hp, std::uint64_t seed, const TrainOptions& opts = {});

struct EvalResult {
    double loss;
    double accuracy;
};

/// Full pass over the evaluation set without augmentation. Rotation labels come
/// from a fixed stream so every run sees the same held-out rotations.
EvalResult evaluate(const ArchSpec& arch, const ParamMap& params, const Dataset& ds, const TransformSpec& spec);

/// Indices for the given epoch's data order (seeded Fisher-Yates).
std::vector<std::size_t> epoch_order(std::size_t examples, std::uint64_t seed, std::uint64_t epoch);

}  // namespace epl
