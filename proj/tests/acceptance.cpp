// SPDX-License-Identifier: Apache-2.0
// Per-commit acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Tolerances and runtime budgets are fixed below.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "epl/cli.hpp"
#include "epl/imp.hpp"
#include "epl/perturb.hpp"
#include "epl/state.hpp"
#include "epl/telemetry.hpp"
#include "gradcases.hpp"
#include "random_cases.hpp"
#include "reference.hpp"
#include "stats_oracle.hpp"

using namespace epl;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kForwardTolerance = 1e-4;
constexpr int kPruneCases = 1000;
constexpr int kPerturbCases = 500;
constexpr double kNoiseLow = 0.98, kNoiseHigh = 1.02;
constexpr double kPearsonTolerance = 1e-10;
constexpr double kOrderingSlack = 1.05;

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> check;
};

// --- 1 ----------------------------------------------------------------------

Outcome gradients()
{
    double worst = 0, worst_forward = 0;
    std::string where;
    std::size_t ops = 0, nets = 0;
    for (const auto& c : epl::testing::engine_op_cases(1234)) {
        const auto r = epl::testing::run_op_case(c, 99);
        ++ops;
        worst_forward = std::max(worst_forward, r.forward_max_abs_diff);
        if (r.grad.checked == 0) return {false, c.name + ": no gradient components checked"};
        if (r.grad.max_rel_error > worst) worst = r.grad.max_rel_error, where = c.name + " " + r.grad.worst;
    }
    for (std::uint64_t s = 1; s <= 20; ++s) {
        const auto r = epl::testing::run_net_case(epl::testing::random_net(s));
        ++nets;
        if (r.max_rel_error > worst) worst = r.max_rel_error, where = fmt::format("net {} {}", s, r.worst);
    }
    return {worst < kGradTolerance && worst_forward < kForwardTolerance,
            fmt::format("{} op cases and {} random nets, max relative error {:.3g} (< {:g}) at {}, forward diff {:.3g}",
                        ops, nets, worst, kGradTolerance, where, worst_forward)};
}

// --- 2 ----------------------------------------------------------------------

Outcome prune_oracle()
{
    for (int i = 0; i < kPruneCases; ++i) {
        const auto c = epl::testing::random_prune_case(static_cast<std::uint64_t>(i));
        if (!(prune_mask(c.weights, c.prev, c.rate) == ref::prune_by_sort(c.weights, c.prev, c.rate))) {
            return {false, fmt::format("case {} differs from the full-sort oracle", i)};
        }
    }
    return {true, fmt::format("{} randomized tie-heavy cases match exactly", kPruneCases)};
}

// --- 3 ----------------------------------------------------------------------

Outcome schedule()
{
    const Model model = build_model(preset_arch("conv2", 3, 32, 32, 10), Rng(1));
    Mask mask = Mask::dense(model);
    const double total = static_cast<double>(mask.total());
    std::size_t expect = mask.total();
    for (int r = 1; r <= 8; ++r) {
        mask = prune_mask(model.params, mask, 0.2);
        expect -= static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(expect)));
        const double f = mask.fraction_remaining(), want = std::pow(0.8, r);
        // every round rounds the pruned count down, so f exceeds 0.8^r by less than r weights
        if (mask.surviving() != expect || f < want || f - want > r / total) {
            return {false, fmt::format("round {}: {} survivors, fraction {} vs 0.8^{} = {}", r, mask.surviving(), f, r, want)};
        }
    }
    const double pct = 100.0 * mask.fraction_remaining();
    const bool named = std::round(1000.0 * std::pow(0.8, 8)) / 10.0 == 16.8 && std::round(10.0 * pct) / 10.0 == 16.8;
    return {named, fmt::format("{} prunable weights, round 8 leaves {:.4f}% (0.8^8 = {:.4f}%)", mask.total(), pct,
                               100.0 * std::pow(0.8, 8))};
}

// --- 4 ----------------------------------------------------------------------

Outcome perturb_invariants()
{
    using epl::testing::scope_groups;
    using epl::testing::sorted_bits;
    const Scope scopes[] = {Scope::global, Scope::layer, Scope::filter};
    std::size_t checks = 0;
    for (int s = 0; s < kPerturbCases; ++s) {
        const auto c = epl::testing::random_perturb_case(static_cast<std::uint64_t>(s));
        const auto all = scope_groups(c, Scope::global).front();
        for (Scope scope : scopes) {
            for (bool sp : {false, true}) {
                const auto out = shuffle(c.snap, c.mask, c.index, scope, sp, Rng(s));
                if (sorted_bits(out.params, all) != sorted_bits(c.snap.params, all))
                    return {false, fmt::format("case {}: multiset not conserved", s)};
                for (const auto& g : scope_groups(c, scope))
                    if (sorted_bits(out.params, g) != sorted_bits(c.snap.params, g))
                        return {false, fmt::format("case {}: value left its scope group", s)};
                if (const auto pos = epl::testing::changed_outside_survivors(c, out.params))
                    return {false, fmt::format("case {}: shuffle changed {}[{}]", s, pos->first, pos->second)};
                if (sp) {
                    for (const auto& [id, e] : c.mask.entries)
                        for (std::size_t i = 0; i < e.keep.size(); ++i)
                            if (std::signbit(out.params.at(id)[i]) != std::signbit(c.snap.params.at(id)[i]))
                                return {false, fmt::format("case {}: sign flipped at {}[{}]", s, id, i)};
                }
                checks += 4;
            }
        }
        const auto noisy = add_noise(c.snap, c.mask, c.model, 1.5, Rng(s));
        if (const auto pos = epl::testing::changed_outside_survivors(c, noisy.params))
            return {false, fmt::format("case {}: noise changed {}[{}]", s, pos->first, pos->second)};
        const auto rec = recombine(c.snap, c.other, c.mask);
        for (const auto& [id, t] : c.other.params)
            for (std::size_t i = 0; i < t.numel(); ++i)
                if (std::bit_cast<std::uint32_t>(rec.params.at(id)[i]) !=
                    std::bit_cast<std::uint32_t>(epl::testing::recombined(c, id, i)))
                    return {false, fmt::format("case {}: recombine wrong at {}[{}]", s, id, i)};
        if (c.mask.surviving() > 0) {
            const auto e = effective_std(c.snap, c.snap, c.mask);
            if (e.mean != 0.0 || e.stddev != 0.0) return {false, fmt::format("case {}: effective_std(x, x) != (0, 0)", s)};
        }
        checks += 3;
    }
    return {true, fmt::format("{} cases, {} exact checks (multiset, scope, sign, fixity, recombine, self std)",
                              kPerturbCases, checks)};
}

// --- 5 ----------------------------------------------------------------------

Outcome noise_calibration()
{
    // Wide enough that a conv kernel (18,432) and a dense kernel (32,768) qualify.
    ArchSpec spec;
    spec.in_channels = 3;
    spec.in_height = spec.in_width = 8;
    spec.conv = {{32, 3, Pool::none}, {64, 3, Pool::max}};
    spec.dense = {32};
    const Model model = build_model(spec, Rng(1));
    Mask mask = Mask::dense(model);
    Rng r(2);
    for (auto& [id, e] : mask.entries)
        for (auto& k : e.keep) k = r.uniform() < 0.8;
    WeightSnapshot snap{model.params, "", 0};
    apply_mask(snap.params, mask);
    double lo = INFINITY, hi = -INFINITY;
    std::size_t layers = 0;
    for (double n : {0.5, 1.0, 2.0, 3.0}) {
        const auto out = add_noise(snap, mask, model, n, Rng(3).substream(static_cast<std::uint64_t>(4 * n)));
        for (const auto& [id, e] : mask.entries) {
            if (e.keep.size() < 10000) continue;
            double sum = 0, sq = 0, cnt = 0;
            for (std::size_t i = 0; i < e.keep.size(); ++i) {
                if (!e.keep[i]) continue;
                const double d = static_cast<double>(out.params.at(id)[i]) - snap.params.at(id)[i];
                sum += d, sq += d * d, ++cnt;
            }
            const double sd = std::sqrt(sq / cnt - (sum / cnt) * (sum / cnt));
            const double ratio = sd / (n * model.meta.at(id).init_sigma);
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
            ++layers;
        }
    }
    return {layers == 8 && lo >= kNoiseLow && hi <= kNoiseHigh,
            fmt::format("{} (layer, n) pairs, measured/expected stddev in [{:.4f}, {:.4f}]", layers, lo, hi)};
}

// --- 6 ----------------------------------------------------------------------

std::string read_bytes(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism()
{
    const fs::path dir = fs::path(EPL_TEST_TMP) / "acceptance-determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto cfg = dir / "exp.cfg";
    std::ofstream(cfg) << "[data]\nsynthetic_train = 512\nsynthetic_eval = 128\nsynthetic_size = 16\n"
                          "[train]\nepochs = 3\nbatch_size = 32\nlr = 0.05\nlr_drops = 2\n"
                          "[imp]\nrewind = 0\n[perturb]\nrewind = 0\n[pretrain]\nrewind = 0\n";
    std::uint32_t crc[2] = {0, 0};
    std::string bytes[2];
    for (int i = 0; i < 2; ++i) {
        std::ostringstream out, err;
        const auto run = dir / (i == 0 ? "a" : "b");
        const int code = run_cli({"train", "--config", cfg.string(), "--seed", "7", "--out-dir", run.string()}, out, err);
        if (code != kExitOk) return {false, fmt::format("run {} exited {}: {}", i, code, err.str())};
        bytes[i] = read_bytes(run / "train" / "seed-7" / "final.epl");
        const auto* p = reinterpret_cast<const std::uint8_t*>(bytes[i].data());
        crc[i] = crc32_of(std::span(p, bytes[i].size() - 4));
    }
    return {bytes[0] == bytes[1] && crc[0] == crc[1] && !bytes[0].empty(),
            fmt::format("two CLI trainings of the same config and seed: final.epl {} bytes, CRC {:08x} vs {:08x}, "
                        "bytes {}",
                        bytes[0].size(), crc[0], crc[1], bytes[0] == bytes[1] ? "identical" : "differ")};
}

// --- 7 ----------------------------------------------------------------------

Outcome telemetry_identities()
{
    const DatasetPair data = make_synthetic({128, 64, 4, 3, 8, 8}, Rng(1));
    std::string detail;
    bool pass = true;
    for (bool masked : {false, true}) {
        const ArchSpec arch = preset_arch("conv2", 3, 8, 8, 4);
        const Model model = build_model(arch, Rng(2));
        Mask mask = Mask::dense(model);
        Rng r(5);
        for (auto& [id, e] : mask.entries)
            for (auto& k : e.keep) k = r.uniform() < 0.6;
        const Mask* m = masked ? &mask : nullptr;
        TrainState start = initial_state(model);
        if (m) apply_mask(start.params, mask);
        TrainData td{&data.train, &data.eval, {}};
        td.transform.normalize = channel_stats(data.train);
        Hparams hp;
        hp.epochs = 3;
        hp.batch_size = 16;
        hp.lr0 = 0.05;
        hp.lr_drop_epochs = {};
        const std::uint64_t total = 3 * iterations_per_epoch(data.train.size(), hp.batch_size);
        TelemetryRecorder rec({arch, &data.eval, td.transform, start.params, m, choose_traced(model, m, Rng(3))},
                              TelemetryCadence{8, 2, 5}, total, true);
        TrainOptions opts;
        rec.attach(opts);
        const Checkpoint fin = train(arch, start, m, td, hp, 1, opts);
        auto records = rec.records();
        backfill_final(records, fin.snapshot, rec.memory_source());
        const auto& first = records.front();
        const auto& last = records.back();
        const bool ok = first.iteration == 0 && first.sign_flip_fraction == 0.0 && first.l2_from_init == 0.0 &&
                        first.cos_from_init == 1.0 && last.iteration == total && last.l2_from_final == 0.0 &&
                        last.cos_from_final == 1.0;
        pass = pass && ok;
        detail += fmt::format("{}{}: iteration 0 flip={} l2_init={} cos_init={}; iteration {} l2_final={} cos_final={}",
                              detail.empty() ? "" : "; ", masked ? "masked" : "dense", first.sign_flip_fraction,
                              first.l2_from_init, first.cos_from_init, last.iteration, last.l2_from_final.value_or(NAN),
                              last.cos_from_final.value_or(NAN));
    }
    return {pass, detail};
}

// --- 8 ----------------------------------------------------------------------

Outcome pearson_oracle()
{
    double worst_r = 0, worst_p = 0;
    auto rel = [](double got, const epl::testing::Wide& want) {
        const epl::testing::Wide w = abs(want);
        return w == 0 ? std::fabs(got) : static_cast<double>(abs(epl::testing::Wide(got) - want) / w);
    };
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto d = epl::testing::random_correlated(s);
        const auto got = pearson(d.x, d.y);
        const auto want = epl::testing::pearson_oracle(d.x, d.y);
        worst_r = std::max(worst_r, rel(got.r, want.r));
        worst_p = std::max(worst_p, rel(got.p, want.p));
    }
    std::vector<double> x, up, down;
    for (int i = 0; i < 25; ++i) {
        x.push_back(0.37 * i - 2.0);
        up.push_back(4.0 * i + 1.0);
        down.push_back(-0.25 * i + 3.0);
    }
    const double r_up = pearson(x, up).r, r_down = pearson(x, down).r;
    return {worst_r < kPearsonTolerance && worst_p < kPearsonTolerance && r_up == 1.0 && r_down == -1.0,
            fmt::format("100 datasets vs 50-digit oracle: max relative error r {:.3g}, p {:.3g} (< {:g}); exact "
                        "linear r = {}, anti-linear r = {}",
                        worst_r, worst_p, kPearsonTolerance, r_up, r_down)};
}

// --- 10 ---------------------------------------------------------------------

Outcome perturbation_ordering()
{
    // Dense training to T with a checkpoint at k = 250, one magnitude-pruning
    // round, then shuffles of the rewound k = 250 sub-network.
    const DatasetPair data = make_synthetic({1280, 256, 10, 3, 16, 16}, Rng(17));
    const ArchSpec arch = preset_arch("conv2", 3, 16, 16, 10);
    const Model model = build_model(arch, Rng(1));
    TrainData td{&data.train, &data.eval, {}};
    td.transform.normalize = channel_stats(data.train);
    td.transform.flip = true;
    td.transform.crop_pad = 2;
    Hparams hp;
    hp.epochs = 8;  // 40 iterations per epoch
    hp.batch_size = 32;
    hp.lr0 = 0.05;
    hp.lr_drop_epochs = {6};
    std::optional<Checkpoint> at_k;
    TrainOptions opts;
    opts.checkpoint_iters = {250};
    opts.on_checkpoint = [&](const Checkpoint& c) { at_k = c; };
    const Checkpoint fin = train(arch, initial_state(model), nullptr, td, hp, 1, opts);
    if (!at_k) return {false, "no checkpoint at iteration 250"};
    const Mask mask = prune_mask(fin.snapshot.params, Mask::dense(model), 0.2);
    WeightSnapshot state = at_k->snapshot;
    state.params = rewind(*at_k, mask).params;
    const auto index = structural_index(model);

    struct Setting {
        const char* name;
        Scope scope;
        bool sign_preserving;
        double eff = 0;
    };
    Setting settings[] = {{"sign-preserving filter", Scope::filter, true},
                          {"filter", Scope::filter, false},
                          {"layer", Scope::layer, false},
                          {"global", Scope::global, false}};
    constexpr int kDraws = 3;
    for (auto& s : settings) {
        for (int d = 0; d < kDraws; ++d) {
            const auto out = shuffle(state, mask, index, s.scope, s.sign_preserving, Rng(100 + d));
            s.eff += effective_std(out, state, mask).stddev / kDraws;
        }
    }
    bool pass = true;
    std::string detail = fmt::format("eval accuracy at T {:.3f}; effective stddev",
                                     evaluate(arch, fin.snapshot.params, data.eval, td.transform).accuracy);
    for (std::size_t i = 0; i < std::size(settings); ++i) {
        detail += fmt::format("{} {} {:.5f}", i ? " <=" : "", settings[i].name, settings[i].eff);
        if (i > 0 && settings[i - 1].eff > kOrderingSlack * settings[i].eff) {
            pass = false;
            detail += " (violated)";
        }
    }
    return {pass, detail + fmt::format(" (slack {:g})", kOrderingSlack)};
}

}  // namespace

int main()
{
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", 60, gradients},
        {2, "pruning oracle equivalence", 10, prune_oracle},
        {3, "sparsity schedule", 10, schedule},
        {4, "perturbation invariants", 60, perturb_invariants},
        {5, "noise calibration", 10, noise_calibration},
        {6, "determinism", 600, determinism},
        {7, "telemetry identities", 60, telemetry_identities},
        {8, "pearson correctness", 60, pearson_oracle},
        {10, "perturbation ordering", 600, perturbation_ordering},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_seconds) {
            o.pass = false;
            o.detail += fmt::format("; over the {:g} s budget", c.budget_seconds);
        }
        failures += !o.pass;
        fmt::print("{} {:>2} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed (9 and 11 run in the nightly suite)\n", criteria.size() - failures,
               criteria.size());
    return failures == 0 ? 0 : 1;
}
