// SPDX-License-Identifier: Apache-2.0
#include "epl/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <tuple>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "epl/config.hpp"
#include "epl/imp.hpp"
#include "epl/manifest.hpp"
#include "epl/perturb.hpp"
#include "epl/pretrain.hpp"
#include "epl/report.hpp"
#include "epl/state.hpp"
#include "epl/telemetry.hpp"
#include "epl/trainer.hpp"

namespace epl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOptions {
    std::string config;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;
    std::string out_dir = "runs";
    std::size_t workers = 0;
    CLI::Option* seed_opt = nullptr;
};

struct Session {
    ExperimentConfig cfg;
    std::vector<std::uint64_t> seeds;
    fs::path out;
    std::size_t workers;
    std::string hash;
};

Session open_session(const CommonOptions& o)
{
    Session s;
    s.cfg = load_config(o.config);
    if (o.seed_opt && o.seed_opt->count() > 0) s.seeds = {o.seed};
    else if (!o.seeds.empty()) s.seeds = o.seeds;
    else s.seeds = s.cfg.seeds;
    s.workers = o.workers > 0 ? o.workers : s.cfg.workers;
    s.cfg.seeds = s.seeds;
    s.cfg.workers = s.workers;
    s.out = o.out_dir;
    // Seeds are run parameters, not part of the experiment identity.
    ExperimentConfig identity = s.cfg;
    identity.seeds.clear();
    s.hash = identity.hash();
    fs::create_directories(s.out / "config");
    const auto cfg_file = s.out / "config" / (s.hash + ".cfg");
    if (!fs::exists(cfg_file)) {
        const auto text = identity.canonical();
        write_file(cfg_file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    return s;
}

json base_record(const Session& s, const std::string& family, const std::string& run_id)
{
    return json{{"family", family}, {"run_id", run_id}, {"config_hash", s.hash}, {"seeds", s.seeds}};
}

json normalize_json(const TransformSpec& t)
{
    return json{{"mean", t.normalize.mean}, {"stddev", t.normalize.stddev}};
}

fs::path seed_dir(const fs::path& base, std::uint64_t seed)
{
    return base / fmt::format("seed-{}", seed);
}

fs::path imp_dir(const fs::path& out, std::uint64_t k, std::uint64_t seed)
{
    return seed_dir(out / "imp" / fmt::format("k-{}", k), seed);
}

std::string mask_name(std::size_t round)
{
    return fmt::format("mask-r{}.epl", round);
}

std::string final_name(std::size_t round)
{
    return fmt::format("final-r{}.epl", round);
}

ParamMap zeros_like(const ParamMap& params)
{
    ParamMap out;
    for (const auto& [id, t] : params) out.emplace(id, Tensor::zeros(t.dims()));
    return out;
}

ImpConfig imp_config(const Session& s, std::uint64_t k)
{
    ImpConfig ic;
    ic.arch = s.cfg.arch;
    ic.hparams = s.cfg.hparams;
    ic.rewind_iteration = k;
    ic.rounds = s.cfg.imp.rounds;
    ic.rate = s.cfg.imp.rate;
    ic.seeds = s.seeds;
    ic.workers = s.workers;
    return ic;
}

void print_rounds(std::ostream& out, const std::string& label, const std::vector<RoundSummary>& rounds)
{
    for (const auto& r : rounds) {
        fmt::print(out, "{} round {} remaining {:.2f}% acc {:.4f} +- {:.4f} ({} seeds, {} failed)\n", label, r.round,
                   100.0 * r.fraction_remaining, r.mean_accuracy, r.std_accuracy, r.completed, r.failed);
    }
}

// --- train -------------------------------------------------------------------

int cmd_train(const Session& s, std::ostream& out)
{
    const LoadedData data = load_data(s.cfg.data);
    const TrainData td{&data.train, &data.eval, data.transform};
    ManifestWriter manifest(s.out);
    const auto& hp = s.cfg.hparams;
    const auto total = hp.epochs * iterations_per_epoch(data.train.size(), hp.batch_size);
    std::vector<double> accuracy(s.seeds.size());

    parallel_for(s.seeds.size(), s.workers, [&](std::size_t i) {
        const auto seed = s.seeds[i];
        const fs::path dir = seed_dir(s.out / "train", seed);
        const Model model = build_model(s.cfg.arch, Rng(seed));
        std::vector<ArtifactRef> artifacts;

        TrainOptions opts;
        opts.run_id = fmt::format("train/seed-{}", seed);
        opts.checkpoint_iters = s.cfg.checkpoint_iters;
        opts.on_checkpoint = [&](const Checkpoint& c) {
            const auto file = dir / checkpoint_filename(c.iteration());
            save_checkpoint(c, file);
            artifacts.push_back(manifest.artifact("checkpoint", file));
        };
        std::optional<TelemetryRecorder> recorder;
        if (s.cfg.telemetry) {
            TelemetryContext ctx{s.cfg.arch, &data.eval, data.transform, model.params, nullptr,
                                 choose_traced(model, nullptr, Rng(seed).substream("trace"))};
            recorder.emplace(std::move(ctx), s.cfg.cadence, total, true);
            recorder->attach(opts);
        }
        const Checkpoint final = train(s.cfg.arch, initial_state(model), nullptr, td, hp, seed, opts);
        save_checkpoint(final, dir / "final.epl");
        artifacts.push_back(manifest.artifact("final", dir / "final.epl"));
        if (recorder) {
            backfill_final(recorder->records(), final.snapshot, recorder->memory_source());
            write_telemetry_csv(dir / "telemetry.csv", recorder->records());
            artifacts.push_back(manifest.artifact("telemetry", dir / "telemetry.csv"));
        }
        accuracy[i] = evaluate(s.cfg.arch, final.snapshot.params, data.eval, data.transform).accuracy;

        json rec = base_record(s, "train", opts.run_id);
        rec["seed"] = seed;
        rec["iterations"] = total;
        rec["accuracy"] = accuracy[i];
        rec["normalize"] = normalize_json(data.transform);
        rec["artifacts"] = artifacts;
        manifest.append(std::move(rec));
    });
    for (std::size_t i = 0; i < s.seeds.size(); ++i) {
        fmt::print(out, "seed {} trained {} iterations, eval accuracy {:.4f}\n", s.seeds[i], total, accuracy[i]);
    }
    return kExitOk;
}

// --- imp ---------------------------------------------------------------------

int cmd_imp(const Session& s, std::ostream& out)
{
    s.cfg.check_rewind("imp.rewind", s.cfg.imp.rewind);
    const LoadedData data = load_data(s.cfg.data);
    const TrainData td{&data.train, &data.eval, data.transform};
    ManifestWriter manifest(s.out);
    bool any_failed = false;

    for (const auto k : s.cfg.imp.rewind) {
        ImpHooks hooks;
        hooks.on_round = [&](std::uint64_t seed, std::size_t round, const Mask& mask, const Checkpoint& final,
                             double acc) {
            const auto dir = imp_dir(s.out, k, seed);
            save_mask(mask, dir / mask_name(round));
            save_checkpoint(final, dir / final_name(round));
            json rec = base_record(s, "imp", fmt::format("imp/k-{}/seed-{}", k, seed));
            rec["k"] = k;
            rec["seed"] = seed;
            rec["round"] = round;
            rec["rate"] = s.cfg.imp.rate;
            rec["sparsity"] = sparsity_percent(mask);
            rec["surviving"] = mask.surviving();
            rec["prunable"] = mask.total();
            rec["accuracy"] = acc;
            rec["artifacts"] = {manifest.artifact("mask", dir / mask_name(round)),
                                manifest.artifact("checkpoint", dir / final_name(round))};
            manifest.append(std::move(rec));
        };
        const ImpResult result = imp_with_rewinding(imp_config(s, k), td, hooks);

        for (const auto& run : result.runs) {
            json rec = base_record(s, run.failed ? "imp-failure" : "imp-start", fmt::format("imp/k-{}/seed-{}", k, run.seed));
            rec["k"] = k;
            rec["seed"] = run.seed;
            if (run.failed) {
                any_failed = true;
                rec["error"] = run.error;
                fmt::print(out, "k={} seed {} failed: {}\n", k, run.seed, run.error);
            } else {
                const auto dir = imp_dir(s.out, k, run.seed);
                save_checkpoint(run.init, dir / "init.epl");
                save_checkpoint(run.rewind_point, dir / "rewind.epl");
                rec["artifacts"] = {manifest.artifact("init", dir / "init.epl"),
                                    manifest.artifact("rewind", dir / "rewind.epl")};
            }
            manifest.append(std::move(rec));
        }
        const auto csv = s.out / "imp" / fmt::format("k-{}", k) / "accuracy.csv";
        write_accuracy_csv(csv, accuracy_rows(fmt::format("k={}", k), result.runs));
        json rec = base_record(s, "imp-curve", fmt::format("imp/k-{}", k));
        rec["label"] = "imp";
        rec["k"] = k;
        rec["normalize"] = normalize_json(data.transform);
        rec["artifacts"] = {manifest.artifact("accuracy", csv)};
        manifest.append(std::move(rec));
        print_rounds(out, fmt::format("k={}", k), result.rounds);
    }
    return any_failed ? kExitDivergence : kExitOk;
}

// --- perturb -----------------------------------------------------------------

struct Upstream {
    PerturbContext ctx;
    double sparsity;
    std::vector<fs::path> files;
};

int cmd_perturb(const Session& s, std::ostream& out)
{
    const auto& pc = s.cfg.perturb;
    if (pc.specs.empty()) throw ConfigError("perturb.specs", "must list at least one perturbation");
    s.cfg.check_rewind("perturb.rewind", pc.rewind);
    const LoadedData data = load_data(s.cfg.data);
    const TrainData td{&data.train, &data.eval, data.transform};

    std::map<std::uint64_t, Model> models;
    for (auto seed : s.seeds) models.emplace(seed, build_model(s.cfg.arch, Rng(seed)));

    // Load every upstream artifact first so a missing one fails before any work.
    using Key = std::tuple<std::uint64_t, std::uint64_t, std::size_t>;
    std::map<Key, Upstream> upstream;
    for (auto k : pc.rewind) {
        for (auto seed : s.seeds) {
            const auto dir = imp_dir(s.out, k, seed);
            const Checkpoint init = load_checkpoint(dir / "init.epl");
            const Checkpoint rew = load_checkpoint(dir / "rewind.epl");
            for (auto round : pc.rounds) {
                Upstream u;
                const auto mask_file = dir / mask_name(round);
                u.ctx.mask = load_mask(mask_file);
                u.ctx.model = &models.at(seed);
                u.ctx.index = structural_index(models.at(seed));
                u.ctx.init = init.snapshot;
                u.ctx.rewind = rew.snapshot;
                u.ctx.rewind.params = rewind(rew, u.ctx.mask).params;
                u.sparsity = sparsity_percent(u.ctx.mask);
                u.files = {dir / "init.epl", dir / "rewind.epl", mask_file};
                upstream.emplace(Key{k, seed, round}, std::move(u));
            }
        }
    }

    struct Job {
        Key key;
        std::size_t spec;
    };
    std::vector<Job> jobs;
    for (const auto& [key, u] : upstream)
        for (std::size_t i = 0; i < pc.specs.size(); ++i) jobs.push_back({key, i});
    std::vector<PerturbRow> rows(jobs.size());

    parallel_for(jobs.size(), s.workers, [&](std::size_t j) {
        const auto& [k, seed, round] = jobs[j].key;
        const Upstream& u = upstream.at(jobs[j].key);
        PerturbationSpec spec = pc.specs[jobs[j].spec];
        Rng seeder = Rng(seed).substream("perturb").substream(to_string(spec)).substream(round);
        spec.seed = seeder.next_u64();
        const WeightSnapshot perturbed = apply_perturbation(spec, u.ctx);
        const EffectiveStats eff = effective_std(perturbed, u.ctx.rewind, u.ctx.mask);

        PerturbRow row;
        row.variant = spec.variant_name();
        const auto params = spec.params();
        row.params = params.empty() ? fmt::format("k={}", k) : fmt::format("k={};{}", k, params);
        row.eff_mean = eff.mean;
        row.eff_std = eff.stddev;
        row.sparsity = u.sparsity;
        row.seed = seed;
        if (pc.retrain) {
            TrainState start{perturbed.params, zeros_like(perturbed.params), u.ctx.rewind.iteration};
            const Checkpoint final = train(s.cfg.arch, std::move(start), &u.ctx.mask, td, s.cfg.hparams, seed);
            row.final_acc = evaluate(s.cfg.arch, final.snapshot.params, data.eval, data.transform).accuracy;
        }
        rows[j] = std::move(row);
    });

    ManifestWriter manifest(s.out);
    const auto csv = s.out / "perturb" / "perturb.csv";
    write_perturb_csv(csv, rows);
    json rec = base_record(s, "perturb", "perturb");
    std::vector<ArtifactRef> inputs;
    for (const auto& [key, u] : upstream)
        for (const auto& f : u.files) inputs.push_back(manifest.artifact("input", f));
    rec["artifacts"] = {manifest.artifact("perturb-csv", csv)};
    rec["inputs"] = inputs;
    manifest.append(std::move(rec));
    for (const auto& r : rows) {
        fmt::print(out, "{} {} remaining {:.2f}% seed {} eff_std {:.6f}{}\n", r.variant, r.params, r.sparsity, r.seed,
                   r.eff_std, r.final_acc ? fmt::format(" acc {:.4f}", *r.final_acc) : "");
    }
    return kExitOk;
}

// --- pretrain ----------------------------------------------------------------

int cmd_pretrain(const Session& s, std::ostream& out)
{
    const auto& pc = s.cfg.pretrain;
    s.cfg.check_rewind("pretrain.rewind", std::span(&pc.rewind, 1));
    const LoadedData data = load_data(s.cfg.data);
    const TrainData td{&data.train, &data.eval, data.transform};
    ManifestWriter manifest(s.out);
    const ImpConfig ic = imp_config(s, pc.rewind);
    const std::string late = fmt::format("k={}", pc.rewind);

    const ImpBaselines baselines = imp_baselines(ic, td);
    std::vector<AccuracyRow> baseline_rows = accuracy_rows("k=0", baselines.k0.runs);
    if (pc.rewind != 0) {
        auto late_rows = accuracy_rows(late, baselines.late.runs);
        baseline_rows.insert(baseline_rows.end(), late_rows.begin(), late_rows.end());
    }
    print_rounds(out, "baseline k=0", baselines.k0.rounds);
    print_rounds(out, "baseline " + late, baselines.late.rounds);

    for (auto kind : pc.tasks) {
        for (auto epochs : pc.epochs) {
            const PretrainTask task{kind, epochs};
            const std::string label = fmt::format("{}/e{}", to_string(kind), epochs);
            const fs::path dir = s.out / "pretrain" / to_string(kind) / fmt::format("e{}", epochs);
            const PretrainResult res = pretrain_then_imp(task, ic, td, &baselines);

            auto rows = accuracy_rows("pretrained", res.pretrained.runs);
            rows.insert(rows.end(), baseline_rows.begin(), baseline_rows.end());
            write_accuracy_csv(dir / "curves.csv", rows);
            std::vector<ArtifactRef> artifacts{manifest.artifact("accuracy", dir / "curves.csv")};

            for (auto source : pc.sparse_sources) {
                const auto sp = sparse_pretrain(source, task, ic, baselines.late, td);
                auto srows = accuracy_rows("sparse-pretrained", sp.pretrained_runs);
                auto brows = accuracy_rows("sparse-baseline", sp.baseline_runs);
                srows.insert(srows.end(), brows.begin(), brows.end());
                const auto file = dir / fmt::format("sparse-{}.csv", to_string(source));
                write_accuracy_csv(file, srows);
                artifacts.push_back(manifest.artifact("accuracy", file));
                print_rounds(out, fmt::format("{} sparse {}", label, to_string(source)), sp.pretrained);
                print_rounds(out, fmt::format("{} sparse {} baseline", label, to_string(source)), sp.baseline);
            }

            json rec = base_record(s, "pretrain", "pretrain/" + label);
            rec["label"] = label;
            rec["task"] = to_string(kind);
            rec["epochs"] = epochs;
            rec["rewind"] = pc.rewind;
            rec["epoch_ratio"] = res.epoch_ratio;
            rec["normalize"] = normalize_json(data.transform);
            rec["artifacts"] = artifacts;
            manifest.append(std::move(rec));
            print_rounds(out, label, res.pretrained.rounds);
            if (pc.rewind != 0) {
                fmt::print(out, "{}: {} pretraining epochs vs {} supervised epochs to reach k={} (ratio {:.3g})\n",
                           label, epochs,
                           static_cast<double>(pc.rewind) /
                               static_cast<double>(iterations_per_epoch(data.train.size(), s.cfg.hparams.batch_size)),
                           pc.rewind, res.epoch_ratio);
            }
        }
    }
    return kExitOk;
}

// --- report ------------------------------------------------------------------

std::vector<ManifestRecord> load_checked(const std::vector<std::string>& manifests)
{
    std::vector<ManifestRecord> all;
    for (const auto& m : manifests) {
        auto recs = read_manifest(m);
        for (const auto& r : recs)
            for (const auto& a : r.artifacts()) check_artifact(r.dir, a);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
}

void write_text(const fs::path& file, const std::string& text)
{
    write_file(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

int cmd_report(const std::string& kind, const std::vector<std::string>& manifests, const fs::path& out_dir,
               std::optional<double> sparsity, std::ostream& out)
{
    const auto records = load_checked(manifests);
    const fs::path dir = out_dir / "report";

    if (kind == "telemetry") {
        std::vector<std::vector<TelemetryRecord>> runs;
        for (const auto& r : records)
            for (const auto& a : r.artifacts())
                if (a.kind == "telemetry") runs.push_back(read_telemetry_csv(r.dir / a.path));
        if (runs.empty()) throw Error("report telemetry: no telemetry artifacts in the manifests");
        const auto summary = telemetry_summary(runs);
        write_telemetry_summary(dir / "telemetry.csv", summary);
        const auto& names = telemetry_metric_names();
        for (std::size_t m = 0; m < names.size(); ++m) {
            PlotSeries series{"mean over runs", {}, {}, {}, {}, true};
            for (const auto& row : summary) {
                if (!row.means[m]) continue;
                series.x.push_back(static_cast<double>(row.iteration));
                series.y.push_back(*row.means[m]);
            }
            write_text(dir / fmt::format("telemetry-{}.svg", names[m]),
                       svg_plot({names[m], "iteration", names[m], false, false}, {series}));
        }
        fmt::print(out, "telemetry: {} runs, {} iterations -> {}\n", runs.size(), summary.size(),
                   (dir / "telemetry.csv").string());
        return kExitOk;
    }

    if (kind == "sparsity-curves") {
        std::vector<AccuracyRow> rows;
        for (const auto& r : records) {
            const std::string label = r.json.value("label", std::string("run"));
            for (const auto& a : r.artifacts()) {
                if (a.kind != "accuracy") continue;
                for (auto row : read_accuracy_csv(r.dir / a.path)) {
                    row.curve = label + ":" + row.curve;
                    rows.push_back(std::move(row));
                }
            }
        }
        if (rows.empty()) throw Error("report sparsity-curves: no accuracy artifacts in the manifests");
        const auto bands = curve_bands(rows);
        write_curve_bands(dir / "sparsity-curves.csv", bands);
        std::vector<PlotSeries> series;
        for (const auto& b : bands) {
            if (series.empty() || series.back().name != b.curve) series.push_back({b.curve, {}, {}, {}, {}, true});
            auto& s = series.back();
            s.x.push_back(b.sparsity);
            s.y.push_back(b.mean);
            s.lower.push_back(b.mean - b.stddev);
            s.upper.push_back(b.mean + b.stddev);
        }
        write_text(dir / "sparsity-curves.svg",
                   svg_plot({"accuracy vs weights remaining", "% weights remaining", "eval accuracy", true, true},
                            series));
        for (const auto& b : bands) {
            fmt::print(out, "{} round {} remaining {:.2f}% acc {:.4f} +- {:.4f} ({} seeds)\n", b.curve, b.round,
                       b.sparsity, b.mean, b.stddev, b.seeds);
        }
        return kExitOk;
    }

    if (kind == "scatter") {
        std::vector<PerturbRow> rows;
        for (const auto& r : records)
            for (const auto& a : r.artifacts())
                if (a.kind == "perturb-csv") {
                    auto part = read_perturb_csv(r.dir / a.path);
                    rows.insert(rows.end(), part.begin(), part.end());
                }
        const ScatterReport rep = scatter_report(rows, sparsity);
        write_scatter(dir / "scatter.csv", dir / "scatter-stats.csv", rep);
        PlotSeries pts{"perturbations", {}, {}, {}, {}, false};
        for (const auto& p : rep.points) {
            pts.x.push_back(p.eff_std);
            pts.y.push_back(p.mean_acc);
        }
        write_text(dir / "scatter.svg",
                   svg_plot({fmt::format("r = {:.3f}, p = {:.3g}", rep.correlation.r, rep.correlation.p),
                             "effective stddev", "mean eval accuracy", false, false},
                            {pts}));
        fmt::print(out, "scatter at {:.4g}% remaining: {} points, r = {}, p = {}\n", rep.sparsity, rep.points.size(),
                   rep.correlation.r, rep.correlation.p);
        return kExitOk;
    }
    throw ConfigError("report", "unknown report kind '" + kind + "'");
}

// --- verify ------------------------------------------------------------------

int cmd_verify(const std::vector<std::string>& manifests, std::ostream& out)
{
    std::size_t artifacts = 0, checks = 0;
    std::vector<std::string> failures;
    auto fail = [&](std::string msg) { failures.push_back(std::move(msg)); };

    struct ImpEntry {
        std::size_t round;
        double rate;
        double sparsity;
        fs::path mask;
        fs::path final;
    };
    std::map<std::string, std::vector<ImpEntry>> imp_runs;

    for (const auto& m : manifests) {
        for (const auto& rec : read_manifest(m)) {
            for (const auto& a : rec.artifacts()) {
                ++artifacts;
                const auto file = rec.dir / a.path;
                if (!fs::exists(file)) throw ArtifactError(file.string(), "missing artifact");
                if (file_sha256(file) != a.sha256) {
                    fail("digest mismatch against manifest: " + file.string());
                    continue;
                }
                if (file.extension() == ".epl") {
                    try {
                        verify_container(file);
                    } catch (const Error& e) {
                        fail(e.what());
                    }
                }
            }
            if (rec.json.value("family", "") == "imp") {
                ImpEntry e{rec.json.at("round").get<std::size_t>(), rec.json.at("rate").get<double>(),
                           rec.json.at("sparsity").get<double>(), {}, {}};
                for (const auto& a : rec.artifacts()) {
                    if (a.kind == "mask") e.mask = rec.dir / a.path;
                    if (a.kind == "checkpoint") e.final = rec.dir / a.path;
                }
                imp_runs[rec.dir.string() + "|" + rec.json.at("run_id").get<std::string>()].push_back(e);
            }
        }
    }

    for (auto& [run, entries] : imp_runs) {
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.round < b.round; });
        std::optional<Mask> prev;
        for (const auto& e : entries) {
            try {
                const Mask mask = load_mask(e.mask);
                const Checkpoint fin = load_checkpoint(e.final);
                ++checks;
                if (std::fabs(sparsity_percent(mask) - e.sparsity) > 1e-9) fail(e.mask.string() + ": sparsity differs from manifest");
                ++checks;
                for (const auto& [id, entry] : mask.entries) {
                    const Tensor& w = fin.snapshot.params.at(id);
                    for (std::size_t i = 0; i < entry.keep.size(); ++i) {
                        if (!entry.keep[i] && w[i] != 0.0f) {
                            fail(fmt::format("{}: pruned weight {}[{}] is nonzero", e.final.string(), id, i));
                            break;
                        }
                    }
                }
                if (prev && e.round == prev->round + 1) {
                    ++checks;
                    const auto expected = prev->surviving() -
                                          static_cast<std::size_t>(std::floor(e.rate * static_cast<double>(prev->surviving())));
                    if (mask.surviving() != expected) {
                        fail(fmt::format("{}: {} survivors, expected {}", e.mask.string(), mask.surviving(), expected));
                    }
                    ++checks;
                    for (const auto& [id, entry] : mask.entries) {
                        const auto& before = prev->entries.at(id).keep;
                        for (std::size_t i = 0; i < entry.keep.size(); ++i) {
                            if (entry.keep[i] && !before[i]) {
                                fail(fmt::format("{}: {}[{}] revived after pruning", e.mask.string(), id, i));
                                break;
                            }
                        }
                    }
                }
                prev = mask;
            } catch (const ArtifactError&) {
                throw;
            } catch (const Error& ex) {
                fail(ex.what());
            }
        }
    }

    for (const auto& f : failures) fmt::print(out, "FAIL {}\n", f);
    fmt::print(out, "{} {} artifacts, {} invariant checks, {} failures\n", failures.empty() ? "ok" : "failed", artifacts,
               checks, failures.size());
    return failures.empty() ? kExitOk : kExitFailure;
}

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--config", o.config, "experiment config file")->required();
    o.seed_opt = cmd->add_option("--seed", o.seed, "run a single seed");
    cmd->add_option("--seeds", o.seeds, "comma-separated seeds")->delimiter(',')->excludes(o.seed_opt);
    cmd->add_option("--out-dir", o.out_dir, "artifact directory")->capture_default_str();
    cmd->add_option("--workers", o.workers, "worker threads (default: config run.workers)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Early-phase training experiments: train, prune, perturb, pretrain, report."};
    app.name("epl");
    app.require_subcommand(1);

    CommonOptions train_o, imp_o, perturb_o, pretrain_o;
    auto* train_cmd = app.add_subcommand("train", "dense training with checkpoints and telemetry");
    add_common(train_cmd, train_o);
    auto* imp_cmd = app.add_subcommand("imp", "iterative magnitude pruning with rewinding");
    add_common(imp_cmd, imp_o);
    auto* perturb_cmd = app.add_subcommand("perturb", "perturb rewound sub-networks and retrain");
    add_common(perturb_cmd, perturb_o);
    auto* pretrain_cmd = app.add_subcommand("pretrain", "surrogate-task pretraining followed by IMP");
    add_common(pretrain_cmd, pretrain_o);

    std::string kind;
    std::vector<std::string> report_manifests;
    std::string report_out = "runs";
    double sparsity = 0.0;
    auto* report_cmd = app.add_subcommand("report", "summarize experiment CSVs into report CSV and SVG files");
    report_cmd->add_option("kind", kind, "telemetry | sparsity-curves | scatter")
        ->required()
        ->check(CLI::IsMember({"telemetry", "sparsity-curves", "scatter"}));
    report_cmd->add_option("--manifest", report_manifests, "manifest files (default: <out-dir>/manifest.jsonl)");
    report_cmd->add_option("--out-dir", report_out, "directory receiving report/")->capture_default_str();
    auto* sparsity_opt = report_cmd->add_option("--sparsity", sparsity, "scatter: % weights remaining to select");

    std::vector<std::string> verify_manifests;
    std::string verify_out = "runs";
    auto* verify_cmd = app.add_subcommand("verify", "re-check artifact CRCs and mask invariants");
    verify_cmd->add_option("--manifest", verify_manifests, "manifest files (default: <out-dir>/manifest.jsonl)");
    verify_cmd->add_option("--out-dir", verify_out, "artifact directory")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(open_session(train_o), out);
        if (imp_cmd->parsed()) return cmd_imp(open_session(imp_o), out);
        if (perturb_cmd->parsed()) return cmd_perturb(open_session(perturb_o), out);
        if (pretrain_cmd->parsed()) return cmd_pretrain(open_session(pretrain_o), out);
        if (report_cmd->parsed()) {
            if (report_manifests.empty()) report_manifests.push_back((fs::path(report_out) / "manifest.jsonl").string());
            return cmd_report(kind, report_manifests, report_out,
                              sparsity_opt->count() ? std::optional(sparsity) : std::nullopt, out);
        }
        if (verify_cmd->parsed()) {
            if (verify_manifests.empty()) verify_manifests.push_back((fs::path(verify_out) / "manifest.jsonl").string());
            return cmd_verify(verify_manifests, out);
        }
    } catch (const ConfigError& e) {
        fmt::print(err, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const DivergenceError& e) {
        fmt::print(err, "diverged: {}\n", e.what());
        return kExitDivergence;
    } catch (const ArtifactError& e) {
        fmt::print(err, "{}\n", e.what());
        return kExitMissingArtifact;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace epl
