// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epl/data.hpp"
#include "epl/model.hpp"
#include "epl/state.hpp"
#include "epl/trainer.hpp"

namespace epl {

inline constexpr std::size_t kTracedWeights = 10;

struct TelemetryRecord {
    std::uint64_t iteration = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    double eval_accuracy = 0.0;
    double mean_abs_weight = 0.0;
    double sign_flip_fraction = 0.0;
    double grad_l2 = 0.0;
    double l2_from_init = 0.0;
    double cos_from_init = 1.0;
    std::optional<double> l2_from_final;
    std::optional<double> cos_from_final;
    std::vector<float> traced;
};

/// Fraction of weights whose sign (-1, 0, +1) differs between the snapshots.
/// Pruned positions are excluded when a mask is given.
double sign_flip_fraction(const ParamMap& snap, const ParamMap& ref, const Mask* mask = nullptr);

struct Distance {
    double l2;
    double cosine;
};

/// L2 distance and cosine similarity over all parameters concatenated. Throws
/// Error if either side has zero norm.
Distance distance_metrics(const ParamMap& snap, const ParamMap& ref);

double mean_abs_weight(const ParamMap& params, const Mask* mask = nullptr);
double global_l2(const ParamMap& tensors);

struct TraceCoordinate {
    std::string id;
    std::size_t index;
};

/// Seeded sample of distinct kernel coordinates (surviving ones, if masked).
std::vector<TraceCoordinate> choose_traced(const Model& model, const Mask* mask, Rng rng,
                                           std::size_t count = kTracedWeights);

/// Dense logging early in training, sparse afterwards; the final iteration is
/// always logged.
struct TelemetryCadence {
    std::uint64_t dense_until = 400;
    std::uint64_t dense_every = 10;
    std::uint64_t sparse_every = 100;

    bool due(std::uint64_t iteration, std::uint64_t final_iteration) const;
};

struct TelemetryContext {
    ArchSpec arch;
    const Dataset* eval = nullptr;
    TransformSpec eval_transform;
    ParamMap init;
    const Mask* mask = nullptr;
    std::vector<TraceCoordinate> traced;
};

TelemetryRecord collect(const TelemetryContext& ctx, std::uint64_t iteration, const ParamMap& params,
                        const ParamMap& grads, double train_loss);

/// Looks up the stored weights for an iteration; nullopt when not persisted.
using SnapshotSource = std::function<std::optional<ParamMap>(std::uint64_t)>;

/// Fills l2/cos-from-final for every record. Throws Error listing every
/// iteration whose snapshot is unavailable.
void backfill_final(std::vector<TelemetryRecord>& records, const WeightSnapshot& final_snapshot,
                    const SnapshotSource& source);

/// Source backed by checkpoint files named by checkpoint_filename() in `dir`.
SnapshotSource directory_source(const std::filesystem::path& dir);

std::string checkpoint_filename(std::uint64_t iteration);

/// Wires collect() into a training run and keeps the snapshots needed for a
/// later backfill in memory.
class TelemetryRecorder {
public:
    TelemetryRecorder(TelemetryContext ctx, TelemetryCadence cadence, std::uint64_t final_iteration,
                      bool keep_snapshots);

    bool wants(std::uint64_t iteration) const { return cadence_.due(iteration, final_); }
    void record(const StepView& step);
    /// Installs observe/on_step hooks on the given options.
    void attach(TrainOptions& opts);

    std::vector<TelemetryRecord>& records() { return records_; }
    SnapshotSource memory_source() const;

private:
    TelemetryContext ctx_;
    TelemetryCadence cadence_;
    std::uint64_t final_;
    bool keep_;
    std::vector<TelemetryRecord> records_;
    std::map<std::uint64_t, ParamMap> snapshots_;
};

inline constexpr const char* kTelemetryHeader =
    "iteration,train_loss,eval_loss,eval_acc,mean_abs_w,sign_flip_frac,grad_l2,l2_init,cos_init,l2_final,"
    "cos_final,w0,w1,w2,w3,w4,w5,w6,w7,w8,w9";

void write_telemetry_csv(std::ostream& out, const std::vector<TelemetryRecord>& records);
void write_telemetry_csv(const std::filesystem::path& file, const std::vector<TelemetryRecord>& records);
std::vector<TelemetryRecord> read_telemetry_csv(const std::filesystem::path& file);

}  // namespace epl
