// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "epl/data.hpp"
#include "epl/model.hpp"
#include "epl/perturb.hpp"
#include "epl/pretrain.hpp"
#include "epl/telemetry.hpp"
#include "epl/trainer.hpp"

namespace epl {

inline constexpr const char* kEngineVersion = "0.1.0";

// Experiment configuration: INI-style sections of `key = value` lines. Every
// key is optional; unknown sections or keys are rejected. Lists are
// comma-separated.
//
//   [data]      source (synthetic|cifar10), path, train_subset, eval_subset,
//               subset_seed, synthetic_train, synthetic_eval, synthetic_classes,
//               synthetic_channels, synthetic_size, synthetic_seed, flip, crop_pad
//   [model]     arch (conv2|conv4|mlp|custom), conv ("16x3:max,32x3:none"),
//               dense ("64,32"), global_pool
//   [train]     epochs, batch_size, lr, momentum, weight_decay, lr_drops,
//               lr_drop_factor, checkpoint_iters
//   [run]       seeds, workers
//   [telemetry] enabled, dense_until, dense_every, sparse_every
//   [imp]       rounds, rate, rewind
//   [perturb]   specs, rewind, rounds, retrain
//   [pretrain]  tasks, epochs, rewind, sparse_sources

struct DataConfig {
    std::string source = "synthetic";
    std::filesystem::path path;
    std::size_t train_subset = 5000;
    std::size_t eval_subset = 1000;
    std::uint64_t subset_seed = 0;
    SyntheticSpec synthetic;
    std::uint64_t synthetic_seed = 0;
    bool flip = true;
    std::size_t crop_pad = 4;
};

struct ImpSection {
    std::size_t rounds = 6;
    double rate = 0.2;
    std::vector<std::uint64_t> rewind{0, 250};
};

struct PerturbSection {
    std::vector<PerturbationSpec> specs;
    std::vector<std::uint64_t> rewind{250};
    std::vector<std::size_t> rounds{6};
    bool retrain = true;
};

struct PretrainSection {
    std::vector<PretrainKind> tasks{PretrainKind::rotation};
    std::vector<std::size_t> epochs{0, 2, 8, 16, 32};
    std::uint64_t rewind = 250;
    std::vector<MaskSource> sparse_sources;
};

struct ExperimentConfig {
    DataConfig data;
    ArchSpec arch;
    Hparams hparams;
    std::set<std::uint64_t> checkpoint_iters;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::size_t workers = 1;
    bool telemetry = true;
    TelemetryCadence cadence;
    ImpSection imp;
    PerturbSection perturb;
    PretrainSection pretrain;

    /// Sorted `section.key=value` lines of every resolved setting.
    std::string canonical() const;
    /// SHA-256 hex digest of canonical().
    std::string hash() const;

    /// Last training iteration implied by the data and recipe.
    std::uint64_t total_iterations() const;
    /// Throws ConfigError naming `key` if any iteration lies past total_iterations().
    /// Checked by the commands that rewind, so `train` accepts any rewind list.
    void check_rewind(const std::string& key, std::span<const std::uint64_t> iterations) const;
};

/// Throws ConfigError naming the offending key. `data.path` falls back to the
/// EPL_DATA_DIR environment variable when source = cifar10.
ExperimentConfig parse_config(const std::string& text, const std::string& source);
ExperimentConfig load_config(const std::filesystem::path& file);

std::string sha256_hex(const std::string& text);

struct LoadedData {
    Dataset train;
    Dataset eval;
    TransformSpec transform;
};

/// Loads (or synthesizes) the datasets, draws the stratified subsets and computes
/// normalization statistics from the training split.
LoadedData load_data(const DataConfig& cfg);

}  // namespace epl
