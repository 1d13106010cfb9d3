// SPDX-License-Identifier: Apache-2.0
#include "epl/pretrain.hpp"

namespace epl {
namespace {

ParamMap zeros_like(const ParamMap& params)
{
    ParamMap out;
    for (const auto& [id, t] : params) out.emplace(id, Tensor::zeros(t.dims()));
    return out;
}

std::uint64_t pretrain_seed(std::uint64_t seed)
{
    Rng r = Rng(seed).substream("pretrain");
    return r.next_u64();
}

}  // namespace

std::string to_string(PretrainKind kind)
{
    switch (kind) {
    case PretrainKind::random_labels: return "random-labels";
    case PretrainKind::rotation: return "rotation";
    case PretrainKind::blur: return "blur";
    case PretrainKind::blur_rotation: return "blur+rotation";
    }
    return "?";
}

PretrainKind parse_pretrain_kind(const std::string& text)
{
    if (text == "random-labels") return PretrainKind::random_labels;
    if (text == "rotation") return PretrainKind::rotation;
    if (text == "blur") return PretrainKind::blur;
    if (text == "blur+rotation") return PretrainKind::blur_rotation;
    throw Error("unknown pretraining task '" + text + "'");
}

std::string to_string(MaskSource source)
{
    switch (source) {
    case MaskSource::imp: return "imp";
    case MaskSource::reinit: return "reinit";
    case MaskSource::random_prune: return "random-prune";
    }
    return "?";
}

MaskSource parse_mask_source(const std::string& text)
{
    if (text == "imp") return MaskSource::imp;
    if (text == "reinit") return MaskSource::reinit;
    if (text == "random-prune") return MaskSource::random_prune;
    throw Error("unknown mask source '" + text + "'");
}

TaskData task_data(const PretrainTask& task, const TrainData& main, std::uint64_t seed)
{
    if (!main.train || !main.eval) throw Error("pretrain: missing datasets");
    TaskData td{*main.train, *main.eval, main.transform, 0};
    if (task.kind == PretrainKind::random_labels) td.train = randomize_labels(td.train, Rng(seed).substream("random-labels"));
    td.transform.blur = task.blurs();
    if (task.rotates()) td.transform.task = Task::rotation;
    td.classes = output_classes(td.transform, td.train);
    return td;
}

PretrainRun pretrain(const Model& model, const TrainState& start, const PretrainTask& task, const TrainData& main,
                     const Hparams& hp, std::uint64_t seed, const Mask* mask)
{
    require_congruent(start.params, model.params, "pretrain");
    const TaskData td = task_data(task, main, seed);

    Model task_model = model;
    if (task.rotates()) task_model = swap_head(model, td.classes, Rng(seed).substream("pretrain-head"));
    ParamMap params = start.params;
    if (task.rotates()) {
        params[kHeadWeight] = task_model.params.at(kHeadWeight);
        params[kHeadBias] = task_model.params.at(kHeadBias);
    }

    // The task head is a different shape from the main head, so it trains dense.
    Mask task_mask;
    if (mask) {
        task_mask = *mask;
        if (task.rotates() && task_mask.entries.contains(kHeadWeight)) {
            const auto& dims = params.at(kHeadWeight).dims();
            task_mask.entries[kHeadWeight] = MaskEntry{dims, std::vector<std::uint8_t>(shape_numel(dims), 1)};
        }
    }

    PretrainRun run;
    run.task_arch = task_model.spec;
    if (task.epochs > 0) {
        Hparams php = hp;
        php.epochs = task.epochs;
        php.lr_drop_epochs.clear();
        const TrainData data{&td.train, &td.eval, td.transform};
        TrainState s{params, zeros_like(params), 0};
        params = train(task_model.spec, std::move(s), mask ? &task_mask : nullptr, data, php, pretrain_seed(seed))
                     .snapshot.params;
    }
    run.task_params = params;

    if (task.rotates()) {
        params[kHeadWeight] = start.params.at(kHeadWeight);
        params[kHeadBias] = start.params.at(kHeadBias);
    }
    run.state.momentum = task.epochs > 0 ? zeros_like(params) : start.momentum;
    run.state.params = std::move(params);
    run.state.iteration = start.iteration;
    return run;
}

ImpBaselines imp_baselines(const ImpConfig& cfg, const TrainData& data, const ImpHooks& hooks)
{
    ImpBaselines b;
    ImpConfig k0 = cfg;
    k0.rewind_iteration = 0;
    b.k0 = imp_with_rewinding(k0, data, hooks);
    b.late = cfg.rewind_iteration == 0 ? b.k0 : imp_with_rewinding(cfg, data, hooks);
    return b;
}

PretrainResult pretrain_then_imp(const PretrainTask& task, const ImpConfig& cfg, const TrainData& data,
                                 const ImpBaselines* baselines)
{
    PretrainResult result;
    result.task = task;
    result.rewind_iteration = cfg.rewind_iteration;
    const auto ipe = iterations_per_epoch(data.train->size(), cfg.hparams.batch_size);
    result.epoch_ratio = cfg.rewind_iteration == 0
                             ? 0.0
                             : static_cast<double>(task.epochs) /
                                   (static_cast<double>(cfg.rewind_iteration) / static_cast<double>(ipe));

    ImpConfig pcfg = cfg;
    pcfg.rewind_iteration = 0;
    result.pretrained = imp_with_rewinding(pcfg, data, {}, [&](std::uint64_t seed) {
        const Model m = build_model(cfg.arch, Rng(seed));
        return pretrain(m, initial_state(m), task, data, cfg.hparams, seed).state;
    });
    result.baselines = baselines ? *baselines : imp_baselines(cfg, data);
    return result;
}

SparsePretrainResult sparse_pretrain(MaskSource source, const PretrainTask& task, const ImpConfig& cfg,
                                     const ImpResult& imp, const TrainData& data)
{
    struct Job {
        std::size_t run;
        std::size_t round;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < imp.runs.size(); ++i) {
        if (imp.runs[i].failed) continue;
        for (std::size_t r = 0; r < imp.runs[i].masks.size(); ++r) jobs.push_back({i, r});
    }

    std::vector<SeedRun> pre(imp.runs.size()), base(imp.runs.size());
    for (std::size_t i = 0; i < imp.runs.size(); ++i) {
        const auto& run = imp.runs[i];
        for (auto* v : {&pre[i], &base[i]}) {
            v->seed = run.seed;
            v->failed = run.failed;
            v->error = run.error;
            v->masks = run.masks;
            v->accuracy.assign(run.masks.size(), 0.0);
        }
    }

    parallel_for(jobs.size(), cfg.workers, [&](std::size_t j) {
        const auto& run = imp.runs[jobs[j].run];
        const std::size_t r = jobs[j].round;
        const Rng rng = Rng(run.seed).substream("sparse-pretrain").substream(r);
        const Model model = build_model(cfg.arch, Rng(run.seed));

        Mask mask = run.masks[r];
        TrainState start;
        switch (source) {
        case MaskSource::imp: start = rewind(run.rewind_point, mask); break;
        case MaskSource::reinit:
        case MaskSource::random_prune: {
            const auto mode = source == MaskSource::reinit ? VariantMode::reinit : VariantMode::random_prune;
            MaskedStart v = random_variant(mask, mode, cfg.arch, run.rewind_point.snapshot.params, rng);
            mask = v.mask;
            start = TrainState{v.snapshot.params, zeros_like(v.snapshot.params), run.rewind_point.iteration()};
            break;
        }
        }

        auto finish = [&](TrainState s) {
            const Checkpoint c = train(cfg.arch, std::move(s), &mask, data, cfg.hparams, run.seed);
            return evaluate(cfg.arch, c.snapshot.params, *data.eval, data.transform).accuracy;
        };
        base[jobs[j].run].accuracy[r] = finish(start);
        pre[jobs[j].run].accuracy[r] =
            task.epochs == 0 ? base[jobs[j].run].accuracy[r]
                             : finish(pretrain(model, start, task, data, cfg.hparams, run.seed, &mask).state);
        pre[jobs[j].run].masks[r] = mask;
        base[jobs[j].run].masks[r] = mask;
    });

    SparsePretrainResult out;
    out.source = source;
    out.task = task;
    const std::size_t rounds = imp.rounds.empty() ? 0 : imp.rounds.size() - 1;
    out.pretrained = summarize_rounds(pre, rounds);
    out.baseline = summarize_rounds(base, rounds);
    out.pretrained_runs = std::move(pre);
    out.baseline_runs = std::move(base);
    return out;
}

}  // namespace epl
