// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "epl/imp.hpp"
#include "epl/perturb.hpp"
#include "epl/telemetry.hpp"

namespace epl {

/// Percentage of prunable weights remaining, as written to `sparsity` columns.
double sparsity_percent(const Mask& mask);

// --- per-seed accuracy rows (imp and pretrain families) ----------------------

inline constexpr const char* kAccuracyHeader = "curve,round,sparsity,seed,accuracy";

struct AccuracyRow {
    std::string curve;
    std::size_t round = 0;
    double sparsity = 0.0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

/// One row per completed (seed, round) of the runs, labelled `curve`.
std::vector<AccuracyRow> accuracy_rows(const std::string& curve, const std::vector<SeedRun>& runs);
void write_accuracy_csv(const std::filesystem::path& file, const std::vector<AccuracyRow>& rows);
std::vector<AccuracyRow> read_accuracy_csv(const std::filesystem::path& file);

// --- perturbation rows -------------------------------------------------------

inline constexpr const char* kPerturbHeader = "variant,params,eff_mean,eff_std,sparsity,seed,final_acc";

struct PerturbRow {
    std::string variant;
    std::string params;
    double eff_mean = 0.0;
    double eff_std = 0.0;
    double sparsity = 0.0;
    std::uint64_t seed = 0;
    std::optional<double> final_acc;
};

void write_perturb_csv(std::ostream& out, const std::vector<PerturbRow>& rows);
void write_perturb_csv(const std::filesystem::path& file, const std::vector<PerturbRow>& rows);
std::vector<PerturbRow> read_perturb_csv(const std::filesystem::path& file);

// --- reports -----------------------------------------------------------------

struct CurveBand {
    std::string curve;
    std::size_t round;
    double sparsity;
    double mean;
    double stddev;  ///< sample stddev; 0 for a single seed
    std::size_t seeds;
};

/// Mean and stddev over seeds per (curve, round), ordered by curve then round.
std::vector<CurveBand> curve_bands(const std::vector<AccuracyRow>& rows);

inline constexpr const char* kCurveBandHeader = "curve,round,sparsity,mean_acc,std_acc,lower,upper,seeds";
void write_curve_bands(const std::filesystem::path& file, const std::vector<CurveBand>& bands);

struct ScatterPoint {
    std::string variant;
    std::string params;
    double eff_std;   ///< mean over seeds
    double mean_acc;  ///< mean final accuracy over seeds
    std::size_t seeds;
};

struct ScatterReport {
    double sparsity;
    std::vector<ScatterPoint> points;
    Correlation correlation;
};

/// Groups rows with a final accuracy at `sparsity` (default: the smallest
/// sparsity present) by (variant, params). Throws Error with fewer than 3 points.
ScatterReport scatter_report(const std::vector<PerturbRow>& rows, std::optional<double> sparsity = std::nullopt);

inline constexpr const char* kScatterHeader = "variant,params,eff_std,mean_acc,seeds";
inline constexpr const char* kScatterStatsHeader = "sparsity,points,r,p";
void write_scatter(const std::filesystem::path& points_file, const std::filesystem::path& stats_file,
                   const ScatterReport& report);

struct TelemetrySummaryRow {
    std::uint64_t iteration;
    std::size_t runs;
    /// Means over runs of the scalar telemetry columns (train_loss .. cos_final);
    /// empty when no run has the value.
    std::vector<std::optional<double>> means;
};

/// Column names summarized by telemetry_summary.
const std::vector<std::string>& telemetry_metric_names();
std::vector<TelemetrySummaryRow> telemetry_summary(const std::vector<std::vector<TelemetryRecord>>& runs);
void write_telemetry_summary(const std::filesystem::path& file, const std::vector<TelemetrySummaryRow>& rows);

// --- SVG ---------------------------------------------------------------------

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower;  ///< optional band, same length as y
    std::vector<double> upper;
    bool line = true;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool reverse_x = false;
};

std::string svg_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace epl
