// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include <gtest/gtest.h>

#include "epl/pretrain.hpp"

using namespace epl;

namespace {

struct World {
    DatasetPair data = make_synthetic({256, 128, 4, 3, 8, 8}, Rng(21));
    TrainData td;
    ImpConfig cfg;
    Model model;

    World()
    {
        td.train = &data.train;
        td.eval = &data.eval;
        td.transform.normalize = channel_stats(data.train);
        cfg.arch = preset_arch("conv2", 3, 8, 8, 4);
        cfg.hparams.epochs = 2;
        cfg.hparams.batch_size = 32;
        cfg.hparams.lr0 = 0.05;
        cfg.hparams.lr_drop_epochs = {1};
        cfg.rewind_iteration = 4;
        cfg.rounds = 2;
        cfg.seeds = {1, 2};
        model = build_model(cfg.arch, Rng(1));
    }
};

}  // namespace

TEST(Kinds, ParseRoundTrip)
{
    for (auto k : {PretrainKind::random_labels, PretrainKind::rotation, PretrainKind::blur, PretrainKind::blur_rotation})
        EXPECT_EQ(parse_pretrain_kind(to_string(k)), k);
    for (auto s : {MaskSource::imp, MaskSource::reinit, MaskSource::random_prune})
        EXPECT_EQ(parse_mask_source(to_string(s)), s);
    EXPECT_THROW(parse_pretrain_kind("jigsaw"), Error);
    EXPECT_THROW(parse_mask_source("magnitude"), Error);
    EXPECT_TRUE((PretrainTask{PretrainKind::blur_rotation, 1}).rotates());
    EXPECT_TRUE((PretrainTask{PretrainKind::blur_rotation, 1}).blurs());
    EXPECT_FALSE((PretrainTask{PretrainKind::random_labels, 1}).blurs());
}

TEST(TaskDataTest, TransformsPerKind)
{
    World w;
    const auto rl = task_data({PretrainKind::random_labels, 1}, w.td, 3);
    EXPECT_EQ(rl.train.pixels, w.data.train.pixels);
    EXPECT_NE(rl.train.labels, w.data.train.labels);
    EXPECT_EQ(rl.train.labels, task_data({PretrainKind::random_labels, 1}, w.td, 3).train.labels);
    EXPECT_EQ(rl.classes, 4u);
    const auto rot = task_data({PretrainKind::rotation, 1}, w.td, 3);
    EXPECT_EQ(rot.transform.task, Task::rotation);
    EXPECT_FALSE(rot.transform.blur);
    const auto bl = task_data({PretrainKind::blur, 1}, w.td, 3);
    EXPECT_TRUE(bl.transform.blur);
    EXPECT_EQ(bl.transform.task, Task::classify);
}

TEST(TaskDataTest, BlurredBatchesAreBlockMeans)
{
    World w;
    TransformSpec spec;
    spec.normalize = {{0, 0, 0}, {1, 1, 1}};
    spec.blur = true;
    const std::vector<std::size_t> idx{3};
    const Batch b = make_batch(w.data.train, idx, spec, Rng(1), false);
    const Image want = blur4x(to_image(w.data.train, 3));
    for (std::size_t i = 0; i < want.pixels.size(); ++i) ASSERT_NEAR(b.inputs[i], want.pixels[i], 1e-4);
    EXPECT_EQ(blur4x(want), want);
}

TEST(Pretrain, ZeroEpochsIsIdentity)
{
    World w;
    TrainState start = initial_state(w.model);
    start.iteration = 4;
    start.momentum.begin()->second[0] = 0.5f;
    for (auto kind : {PretrainKind::random_labels, PretrainKind::rotation, PretrainKind::blur_rotation}) {
        const auto run = pretrain(w.model, start, {kind, 0}, w.td, w.cfg.hparams, 1);
        EXPECT_EQ(run.state.params, start.params);
        EXPECT_EQ(run.state.momentum, start.momentum);
        EXPECT_EQ(run.state.iteration, 4u);
    }
}

TEST(Pretrain, RotationHeadIsIsolated)
{
    World w;
    const TrainState start = initial_state(w.model);
    const auto run = pretrain(w.model, start, {PretrainKind::rotation, 2}, w.td, w.cfg.hparams, 1);
    EXPECT_EQ(run.state.params.at(kHeadWeight), start.params.at(kHeadWeight));
    EXPECT_EQ(run.state.params.at(kHeadBias), start.params.at(kHeadBias));
    EXPECT_NE(run.state.params.at("conv0.weight"), start.params.at("conv0.weight"));
    EXPECT_EQ(run.task_arch.num_classes, 4u);
    EXPECT_EQ(run.task_params.at("conv0.weight"), run.state.params.at("conv0.weight"));
    for (const auto& [id, t] : run.state.momentum)
        for (float v : t.data()) ASSERT_EQ(v, 0.0f);

    // A ten-class main head stays ten wide while the task head is four wide.
    ArchSpec ten = w.cfg.arch;
    ten.num_classes = 10;
    const Model m10 = build_model(ten, Rng(2));
    DatasetPair d10 = make_synthetic({100, 20, 10, 3, 8, 8}, Rng(3));
    TrainData td10{&d10.train, &d10.eval, {}};
    td10.transform.normalize = channel_stats(d10.train);
    const auto r10 = pretrain(m10, initial_state(m10), {PretrainKind::rotation, 1}, td10, w.cfg.hparams, 1);
    EXPECT_EQ(r10.state.params.at(kHeadWeight).dims(), (Shape{2 * 2 * 32, 10}));
    EXPECT_EQ(r10.task_params.at(kHeadWeight).dims(), (Shape{2 * 2 * 32, 4}));
}

TEST(Pretrain, MaskedPretrainingKeepsKernelsPruned)
{
    World w;
    Mask mask = Mask::dense(w.model);
    Rng r(4);
    for (auto& [id, e] : mask.entries)
        for (auto& k : e.keep) k = r.uniform() < 0.5;
    TrainState start = initial_state(w.model);
    apply_mask(start.params, mask);
    for (auto kind : {PretrainKind::rotation, PretrainKind::blur}) {
        const auto run = pretrain(w.model, start, {kind, 1}, w.td, w.cfg.hparams, 1, &mask);
        for (const auto& [id, e] : mask.entries)
            for (std::size_t i = 0; i < e.keep.size(); ++i)
                if (!e.keep[i]) {
                    ASSERT_EQ(run.state.params.at(id)[i], 0.0f) << to_string(kind) << " " << id;
                }
    }
}

TEST(Pretrain, RotationIsLearnable)
{
    World w;
    Hparams hp = w.cfg.hparams;
    const auto run = pretrain(w.model, initial_state(w.model), {PretrainKind::rotation, 10}, w.td, hp, 1);
    const auto td = task_data({PretrainKind::rotation, 10}, w.td, 1);
    const auto acc = evaluate(run.task_arch, run.task_params, w.data.eval, td.transform).accuracy;
    EXPECT_GT(acc, 0.4);  // chance is 0.25
}

TEST(Pretrain, RandomLabelsCarryNoLabelInformation)
{
    World w;
    Hparams hp = w.cfg.hparams;
    const auto run = pretrain(w.model, initial_state(w.model), {PretrainKind::random_labels, 10}, w.td, hp, 1);
    const auto rl = evaluate(run.task_arch, run.task_params, w.data.eval, w.td.transform).accuracy;
    const auto real = train(w.cfg.arch, initial_state(w.model), nullptr, w.td, [&] {
                          Hparams h = hp;
                          h.epochs = 10;
                          return h;
                      }(), 1);
    const auto ra = evaluate(w.cfg.arch, real.snapshot.params, w.data.eval, w.td.transform).accuracy;
    EXPECT_LT(rl, 0.4);  // chance is 0.25
    EXPECT_GT(ra, 0.8);
}

TEST(PretrainThenImp, StartsFromPretrainedStateAtIterationZero)
{
    World w;
    const PretrainTask task{PretrainKind::rotation, 1};
    const auto res = pretrain_then_imp(task, w.cfg, w.td);
    EXPECT_EQ(res.pretrained.rewind_iteration, 0u);
    EXPECT_EQ(res.baselines.k0.rewind_iteration, 0u);
    EXPECT_EQ(res.baselines.late.rewind_iteration, 4u);
    EXPECT_DOUBLE_EQ(res.epoch_ratio, 1.0 / (4.0 / 8.0));
    for (const auto& run : res.pretrained.runs) {
        const Model m = build_model(w.cfg.arch, Rng(run.seed));
        const auto p = pretrain(m, initial_state(m), task, w.td, w.cfg.hparams, run.seed);
        EXPECT_EQ(run.init.snapshot.params, p.state.params);
        EXPECT_EQ(run.rewind_point.snapshot.params, p.state.params);
        EXPECT_EQ(run.masks.size(), 3u);
    }
    // Supplied baselines are reused, not recomputed.
    const auto again = pretrain_then_imp({PretrainKind::rotation, 0}, w.cfg, w.td, &res.baselines);
    EXPECT_EQ(again.baselines.late.runs[0].accuracy, res.baselines.late.runs[0].accuracy);
    EXPECT_EQ(again.pretrained.runs[0].accuracy, res.baselines.k0.runs[0].accuracy);
}

TEST(SparsePretrain, SourcesAndZeroEpochBaseline)
{
    World w;
    const auto imp = imp_with_rewinding(w.cfg, w.td);
    for (auto source : {MaskSource::imp, MaskSource::reinit, MaskSource::random_prune}) {
        const auto zero = sparse_pretrain(source, {PretrainKind::rotation, 0}, w.cfg, imp, w.td);
        ASSERT_EQ(zero.pretrained.size(), 3u);
        for (std::size_t i = 0; i < zero.pretrained_runs.size(); ++i)
            EXPECT_EQ(zero.pretrained_runs[i].accuracy, zero.baseline_runs[i].accuracy);
        for (std::size_t i = 0; i < imp.runs.size(); ++i) {
            for (std::size_t r = 0; r < imp.runs[i].masks.size(); ++r) {
                const auto& got = zero.pretrained_runs[i].masks[r];
                EXPECT_EQ(got.surviving(), imp.runs[i].masks[r].surviving());
                if (source != MaskSource::random_prune) {
                    EXPECT_EQ(got, imp.runs[i].masks[r]);
                }
            }
        }
        if (source == MaskSource::imp) {
            // rounds trained from the IMP rewind point reproduce the IMP accuracies
            for (std::size_t i = 0; i < imp.runs.size(); ++i)
                for (std::size_t r = 1; r < imp.runs[i].masks.size(); ++r)
                    EXPECT_EQ(zero.baseline_runs[i].accuracy[r], imp.runs[i].accuracy[r]);
        }
    }
    const auto one = sparse_pretrain(MaskSource::imp, {PretrainKind::blur, 1}, w.cfg, imp, w.td);
    EXPECT_EQ(one.pretrained[2].completed, 2u);
}
