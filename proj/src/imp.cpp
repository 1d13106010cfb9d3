// SPDX-License-Identifier: Apache-2.0
#include "epl/imp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace epl {

Mask prune_mask(const ParamMap& final_params, const Mask& prev, double rate)
{
    if (!(rate > 0.0 && rate < 1.0)) throw Error("prune_mask: rate must be in (0, 1)");
    require_congruent(final_params, prev, "prune_mask");

    struct Candidate {
        float magnitude;
        std::uint32_t entry;
        std::uint32_t index;
    };
    std::vector<Candidate> survivors;
    std::vector<std::string> ids;
    for (const auto& [id, e] : prev.entries) {
        const Tensor& w = final_params.at(id);
        const auto entry = static_cast<std::uint32_t>(ids.size());
        ids.push_back(id);
        for (std::size_t i = 0; i < e.keep.size(); ++i) {
            if (e.keep[i]) survivors.push_back({std::fabs(w[i]), entry, static_cast<std::uint32_t>(i)});
        }
    }
    if (survivors.empty()) throw Error("prune_mask: no surviving weights");

    Mask next = prev;
    next.round = prev.round + 1;
    const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(survivors.size())));
    if (count == 0) return next;

    auto less = [](const Candidate& a, const Candidate& b) {
        if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
        if (a.entry != b.entry) return a.entry < b.entry;
        return a.index < b.index;
    };
    // `less` is a strict total order, so the first `count` slots after
    // nth_element are exactly the `count` smallest candidates.
    std::nth_element(survivors.begin(), survivors.begin() + static_cast<std::ptrdiff_t>(count - 1),
                     survivors.end(), less);
    for (std::size_t i = 0; i < count; ++i) {
        next.entries.at(ids[survivors[i].entry]).keep[survivors[i].index] = 0;
    }
    return next;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn)
{
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (first_error) std::rethrow_exception(first_error);
}

SeedRun run_imp_seed(const ImpConfig& cfg, const TrainData& data, std::uint64_t seed, const TrainState& start,
                     const ImpHooks& hooks)
{
    SeedRun run;
    run.seed = seed;
    const std::uint64_t total = cfg.hparams.epochs * iterations_per_epoch(data.train->size(), cfg.hparams.batch_size);
    if (cfg.rewind_iteration > total) throw Error("imp: rewind iteration beyond end of training");
    if (start.iteration > cfg.rewind_iteration) throw Error("imp: start state is past the rewind iteration");

    Mask mask = Mask::dense(build_model(cfg.arch, Rng(0)));
    require_congruent(start.params, mask, "imp");

    try {
        run.init.snapshot.params = start.params;
        run.init.snapshot.iteration = start.iteration;
        run.init.momentum = start.momentum;

        TrainOptions opts;
        opts.run_id = "seed-" + std::to_string(seed);
        opts.checkpoint_iters = hooks.extra_checkpoints;
        opts.checkpoint_iters.insert(cfg.rewind_iteration);
        opts.on_checkpoint = [&](const Checkpoint& c) {
            if (c.iteration() == cfg.rewind_iteration) run.rewind_point = c;
            if (hooks.on_checkpoint) hooks.on_checkpoint(seed, c);
        };
        Checkpoint final = train(cfg.arch, start, nullptr, data, cfg.hparams, seed, opts);
        if (cfg.rewind_iteration == start.iteration) run.rewind_point = run.init;

        for (std::size_t round = 0;; ++round) {
            const double acc = evaluate(cfg.arch, final.snapshot.params, *data.eval, data.transform).accuracy;
            run.masks.push_back(mask);
            run.accuracy.push_back(acc);
            run.finals.push_back(final.snapshot.params);
            if (hooks.on_round) hooks.on_round(seed, round, mask, final, acc);
            if (round == cfg.rounds) break;

            mask = prune_mask(final.snapshot.params, mask, cfg.rate);
            TrainOptions retrain;
            retrain.run_id = opts.run_id + "-r" + std::to_string(round + 1);
            final = train(cfg.arch, rewind(run.rewind_point, mask), &mask, data, cfg.hparams, seed, retrain);
        }
    } catch (const DivergenceError& e) {
        run.failed = true;
        run.error = e.what();
    }
    return run;
}

std::vector<RoundSummary> summarize_rounds(const std::vector<SeedRun>& runs, std::size_t rounds)
{
    std::vector<RoundSummary> out;
    for (std::size_t r = 0; r <= rounds; ++r) {
        RoundSummary s{r, 0.0, 0.0, 0.0, 0, 0};
        std::vector<double> acc;
        for (const auto& run : runs) {
            if (run.failed || run.accuracy.size() <= r) {
                ++s.failed;
                continue;
            }
            acc.push_back(run.accuracy[r]);
            s.fraction_remaining = run.masks[r].fraction_remaining();
        }
        s.completed = acc.size();
        if (!acc.empty()) {
            double sum = 0.0;
            for (double a : acc) sum += a;
            s.mean_accuracy = sum / static_cast<double>(acc.size());
            if (acc.size() > 1) {
                double sq = 0.0;
                for (double a : acc) sq += (a - s.mean_accuracy) * (a - s.mean_accuracy);
                s.std_accuracy = std::sqrt(sq / static_cast<double>(acc.size() - 1));
            }
        }
        out.push_back(s);
    }
    return out;
}

ImpResult imp_with_rewinding(const ImpConfig& cfg, const TrainData& data, const ImpHooks& hooks,
                             const StartFactory& start)
{
    cfg.hparams.validate();
    ImpResult result;
    result.rewind_iteration = cfg.rewind_iteration;
    result.runs.resize(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        const TrainState s = start ? start(seed) : initial_state(build_model(cfg.arch, Rng(seed)));
        result.runs[i] = run_imp_seed(cfg, data, seed, s, hooks);
    });
    result.rounds = summarize_rounds(result.runs, cfg.rounds);
    return result;
}

MaskedStart random_variant(const Mask& mask, VariantMode mode, const ArchSpec& arch, const ParamMap& source,
                           const Rng& rng)
{
    MaskedStart out;
    if (mode == VariantMode::reinit) {
        out.mask = mask;
        out.snapshot.params = build_model(arch, rng.substream("reinit")).params;
        apply_mask(out.snapshot.params, out.mask);
        return out;
    }
    out.mask = mask;
    for (auto& [id, e] : out.mask.entries) {
        const std::size_t keep = static_cast<std::size_t>(std::count(e.keep.begin(), e.keep.end(), 1));
        std::vector<std::size_t> positions(e.keep.size());
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
        Rng r = rng.substream("random-prune/" + id);
        for (std::size_t i = 0; i < keep; ++i) std::swap(positions[i], positions[i + r.below(positions.size() - i)]);
        std::fill(e.keep.begin(), e.keep.end(), 0);
        for (std::size_t i = 0; i < keep; ++i) e.keep[positions[i]] = 1;
    }
    out.snapshot.params = source;
    apply_mask(out.snapshot.params, out.mask);
    return out;
}

}  // namespace epl
