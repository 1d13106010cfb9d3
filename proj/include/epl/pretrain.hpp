// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epl/imp.hpp"

namespace epl {

enum class PretrainKind { random_labels, rotation, blur, blur_rotation };

std::string to_string(PretrainKind kind);
/// Accepts "random-labels", "rotation", "blur", "blur+rotation".
PretrainKind parse_pretrain_kind(const std::string& text);

struct PretrainTask {
    PretrainKind kind = PretrainKind::rotation;
    std::size_t epochs = 0;

    bool rotates() const { return kind == PretrainKind::rotation || kind == PretrainKind::blur_rotation; }
    bool blurs() const { return kind == PretrainKind::blur || kind == PretrainKind::blur_rotation; }
};

/// Training set and transform the surrogate task trains on. Random labels are
/// drawn once per seed and frozen.
struct TaskData {
    Dataset train;
    Dataset eval;
    TransformSpec transform;
    std::size_t classes;
};

TaskData task_data(const PretrainTask& task, const TrainData& main, std::uint64_t seed);

struct PretrainRun {
    /// Main-task state after pretraining: task head replaced by the original
    /// head, momentum zero, iteration = `start.iteration`.
    TrainState state;
    /// Weights with the task head, for evaluating the surrogate task.
    ArchSpec task_arch;
    ParamMap task_params;
};

/// Pretrains `start` (a `model`-shaped state) on the surrogate task with the
/// main optimizer recipe minus LR drops. Rotation kinds train a fresh 4-class head
/// and hand back the untouched main head. With `mask`, kernels stay pruned.
/// epochs = 0 returns `start` unchanged.
PretrainRun pretrain(const Model& model, const TrainState& start, const PretrainTask& task, const TrainData& main,
                     const Hparams& hp, std::uint64_t seed, const Mask* mask = nullptr);

struct ImpBaselines {
    ImpResult k0;
    ImpResult late;  ///< rewinding to the configured iteration k
};

ImpBaselines imp_baselines(const ImpConfig& cfg, const TrainData& data, const ImpHooks& hooks = {});

struct PretrainResult {
    PretrainTask task;
    std::uint64_t rewind_iteration;
    /// Pretraining epochs over the supervised epochs that rewinding to k spends; 0 when k = 0.
    double epoch_ratio;
    ImpResult pretrained;
    ImpBaselines baselines;
};

/// Pretrain each seed's initialization, then run IMP treating the pretrained
/// state as iteration 0. Baselines are computed unless supplied.
PretrainResult pretrain_then_imp(const PretrainTask& task, const ImpConfig& cfg, const TrainData& data,
                                 const ImpBaselines* baselines = nullptr);

enum class MaskSource { imp, reinit, random_prune };

std::string to_string(MaskSource source);
/// Accepts "imp", "reinit", "random-prune".
MaskSource parse_mask_source(const std::string& text);

struct SparsePretrainResult {
    MaskSource source;
    PretrainTask task;
    std::vector<RoundSummary> pretrained;
    std::vector<RoundSummary> baseline;  ///< same starts, no pretraining
    std::vector<SeedRun> pretrained_runs;
    std::vector<SeedRun> baseline_runs;
};

/// For every seed and round of a finished IMP run: take the round's mask (or its
/// variant), start from the rewind point, pretrain sparsely, then train the main
/// task from iteration k to the end.
SparsePretrainResult sparse_pretrain(MaskSource source, const PretrainTask& task, const ImpConfig& cfg,
                                     const ImpResult& imp, const TrainData& data);

}  // namespace epl
