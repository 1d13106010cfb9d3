// SPDX-License-Identifier: Apache-2.0
#include "epl/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "epl/csv.hpp"

namespace epl {
namespace {

int sign_of(float v)
{
    return (v > 0.0f) - (v < 0.0f);
}

const MaskEntry* mask_entry(const Mask* mask, const std::string& id)
{
    if (!mask) return nullptr;
    auto it = mask->entries.find(id);
    return it == mask->entries.end() ? nullptr : &it->second;
}

}  // namespace

double sign_flip_fraction(const ParamMap& snap, const ParamMap& ref, const Mask* mask)
{
    require_congruent(snap, ref, "sign_flip_fraction");
    std::size_t flips = 0, counted = 0;
    for (const auto& [id, a] : snap) {
        const Tensor& b = ref.at(id);
        const MaskEntry* keep = mask_entry(mask, id);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            if (keep && !keep->keep[i]) continue;
            ++counted;
            flips += sign_of(a[i]) != sign_of(b[i]);
        }
    }
    return counted == 0 ? 0.0 : static_cast<double>(flips) / static_cast<double>(counted);
}

Distance distance_metrics(const ParamMap& snap, const ParamMap& ref)
{
    require_congruent(snap, ref, "distance_metrics");
    double diff = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [id, a] : snap) {
        const Tensor& b = ref.at(id);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double x = a[i], y = b[i];
            diff += (x - y) * (x - y);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if (na == 0.0 || nb == 0.0) throw Error("distance_metrics: cosine undefined for a zero-norm snapshot");
    // sqrt(na * nb) is exactly na when the snapshots coincide, so cos(x, x) == 1.
    const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return {std::sqrt(diff), cosine};
}

double mean_abs_weight(const ParamMap& params, const Mask* mask)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [id, t] : params) {
        const MaskEntry* keep = mask_entry(mask, id);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (keep && !keep->keep[i]) continue;
            sum += std::fabs(static_cast<double>(t[i]));
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double global_l2(const ParamMap& tensors)
{
    double sq = 0.0;
    for (const auto& [id, t] : tensors)
        for (float v : t.data()) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
}

std::vector<TraceCoordinate> choose_traced(const Model& model, const Mask* mask, Rng rng, std::size_t count)
{
    std::vector<TraceCoordinate> pool;
    for (const auto& [id, t] : model.params) {
        if (!model.is_kernel(id)) continue;
        const MaskEntry* keep = mask_entry(mask, id);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (!keep || keep->keep[i]) pool.push_back({id, i});
        }
    }
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(count);
    return pool;
}

bool TelemetryCadence::due(std::uint64_t iteration, std::uint64_t final_iteration) const
{
    if (iteration == final_iteration) return true;
    if (iteration < dense_until) return dense_every > 0 && iteration % dense_every == 0;
    return sparse_every > 0 && iteration % sparse_every == 0;
}

TelemetryRecord collect(const TelemetryContext& ctx, std::uint64_t iteration, const ParamMap& params,
                        const ParamMap& grads, double train_loss)
{
    TelemetryRecord r;
    r.iteration = iteration;
    r.train_loss = train_loss;
    if (ctx.eval) {
        const auto ev = evaluate(ctx.arch, params, *ctx.eval, ctx.eval_transform);
        r.eval_loss = ev.loss;
        r.eval_accuracy = ev.accuracy;
    }
    r.mean_abs_weight = mean_abs_weight(params, ctx.mask);
    r.sign_flip_fraction = sign_flip_fraction(params, ctx.init, ctx.mask);
    r.grad_l2 = global_l2(grads);
    const auto d = distance_metrics(params, ctx.init);
    r.l2_from_init = d.l2;
    r.cos_from_init = d.cosine;
    for (const auto& c : ctx.traced) r.traced.push_back(params.at(c.id)[c.index]);
    return r;
}

void backfill_final(std::vector<TelemetryRecord>& records, const WeightSnapshot& final_snapshot,
                    const SnapshotSource& source)
{
    std::vector<std::uint64_t> gaps;
    std::vector<std::optional<ParamMap>> found;
    for (const auto& r : records) {
        if (r.iteration == final_snapshot.iteration) {
            found.emplace_back(final_snapshot.params);
            continue;
        }
        found.push_back(source ? source(r.iteration) : std::nullopt);
        if (!found.back()) gaps.push_back(r.iteration);
    }
    if (!gaps.empty()) {
        std::string list;
        for (auto g : gaps) list += (list.empty() ? "" : ",") + std::to_string(g);
        throw Error("backfill_final: no stored checkpoint for iterations " + list);
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto d = distance_metrics(*found[i], final_snapshot.params);
        records[i].l2_from_final = d.l2;
        records[i].cos_from_final = d.cosine;
    }
}

std::string checkpoint_filename(std::uint64_t iteration)
{
    return fmt::format("ckpt-{:09d}.epl", iteration);
}

SnapshotSource directory_source(const std::filesystem::path& dir)
{
    return [dir](std::uint64_t iteration) -> std::optional<ParamMap> {
        const auto file = dir / checkpoint_filename(iteration);
        if (!std::filesystem::exists(file)) return std::nullopt;
        return load_checkpoint(file).snapshot.params;
    };
}

TelemetryRecorder::TelemetryRecorder(TelemetryContext ctx, TelemetryCadence cadence, std::uint64_t final_iteration,
                                     bool keep_snapshots)
    : ctx_(std::move(ctx)), cadence_(cadence), final_(final_iteration), keep_(keep_snapshots)
{
}

void TelemetryRecorder::record(const StepView& step)
{
    records_.push_back(collect(ctx_, step.iteration, step.params, step.grads, step.train_loss));
    if (keep_) snapshots_[step.iteration] = step.params;
}

void TelemetryRecorder::attach(TrainOptions& opts)
{
    opts.observe = [this](std::uint64_t t) { return wants(t); };
    opts.on_step = [this](const StepView& s) { record(s); };
}

SnapshotSource TelemetryRecorder::memory_source() const
{
    return [this](std::uint64_t iteration) -> std::optional<ParamMap> {
        auto it = snapshots_.find(iteration);
        if (it == snapshots_.end()) return std::nullopt;
        return it->second;
    };
}

void write_telemetry_csv(std::ostream& out, const std::vector<TelemetryRecord>& records)
{
    out << kTelemetryHeader << '\n';
    auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
    for (const auto& r : records) {
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}", r.iteration, r.train_loss, r.eval_loss,
                           r.eval_accuracy, r.mean_abs_weight, r.sign_flip_fraction, r.grad_l2, r.l2_from_init,
                           r.cos_from_init, opt(r.l2_from_final), opt(r.cos_from_final));
        for (std::size_t i = 0; i < kTracedWeights; ++i) {
            out << ',';
            if (i < r.traced.size()) out << fmt::format("{}", r.traced[i]);
        }
        out << '\n';
    }
}

void write_telemetry_csv(const std::filesystem::path& file, const std::vector<TelemetryRecord>& records)
{
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError(file.string(), "cannot write telemetry CSV");
    write_telemetry_csv(out, records);
}

std::vector<TelemetryRecord> read_telemetry_csv(const std::filesystem::path& file)
{
    const CsvTable table = read_csv(file, kTelemetryHeader);
    std::vector<TelemetryRecord> out;
    for (const auto& row : table.rows) {
        TelemetryRecord r;
        r.iteration = std::stoull(row[0]);
        r.train_loss = std::stod(row[1]);
        r.eval_loss = std::stod(row[2]);
        r.eval_accuracy = std::stod(row[3]);
        r.mean_abs_weight = std::stod(row[4]);
        r.sign_flip_fraction = std::stod(row[5]);
        r.grad_l2 = std::stod(row[6]);
        r.l2_from_init = std::stod(row[7]);
        r.cos_from_init = std::stod(row[8]);
        if (!row[9].empty()) r.l2_from_final = std::stod(row[9]);
        if (!row[10].empty()) r.cos_from_final = std::stod(row[10]);
        for (std::size_t i = 11; i < row.size(); ++i)
            if (!row[i].empty()) r.traced.push_back(std::stof(row[i]));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace epl
