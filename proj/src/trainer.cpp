// SPDX-License-Identifier: Apache-2.0
#include "epl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epl {

Hparams Hparams::full_recipe()
{
    Hparams hp;
    hp.epochs = 160;
    hp.lr_drop_epochs = {80, 120};
    return hp;
}

void Hparams::validate() const
{
    if (epochs == 0) throw Error("hparams: epochs must be positive");
    if (batch_size == 0) throw Error("hparams: batch_size must be positive");
    if (!(lr0 > 0.0)) throw Error("hparams: lr0 must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("hparams: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw Error("hparams: weight_decay must be >= 0");
    for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i) {
        if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) throw Error("hparams: lr_drop_epochs must increase strictly");
    }
}

std::uint64_t iterations_per_epoch(std::size_t examples, std::size_t batch_size)
{
    return (examples + batch_size - 1) / batch_size;
}

double lr_at(std::uint64_t iteration, const Hparams& hp, std::uint64_t iters_per_epoch)
{
    const std::uint64_t epoch = iteration / std::max<std::uint64_t>(iters_per_epoch, 1);
    double lr = hp.lr0;
    for (auto drop : hp.lr_drop_epochs) {
        if (epoch >= drop) lr *= hp.lr_drop_factor;
    }
    return lr;
}

TrainState initial_state(const Model& model)
{
    TrainState s;
    s.params = model.params;
    for (const auto& [id, t] : model.params) s.momentum[id] = Tensor::zeros(t.dims());
    return s;
}

TrainState rewind(const Checkpoint& checkpoint, const Mask& mask)
{
    TrainState s;
    s.params = checkpoint.snapshot.params;
    apply_mask(s.params, mask);
    for (const auto& [id, t] : s.params) s.momentum[id] = Tensor::zeros(t.dims());
    s.iteration = checkpoint.iteration();
    return s;
}

void sgd_update(ParamMap& params, ParamMap& momentum, const ParamMap& grads, const Mask* mask, double lr,
                const Hparams& hp)
{
    for (auto& [id, w] : params) {
        const Tensor& g = grads.at(id);
        Tensor& v = momentum.at(id);
        const MaskEntry* keep = nullptr;
        if (mask) {
            auto it = mask->entries.find(id);
            if (it != mask->entries.end()) keep = &it->second;
        }
        for (std::size_t i = 0; i < w.numel(); ++i) {
            if (keep && !keep->keep[i]) {
                v[i] = 0.0f;
                w[i] = 0.0f;
                continue;
            }
            const double vel = hp.momentum * v[i] + (static_cast<double>(g[i]) + hp.weight_decay * w[i]);
            v[i] = static_cast<float>(vel);
            w[i] = static_cast<float>(w[i] - lr * static_cast<double>(v[i]));
        }
    }
}

MinibatchResult loss_and_gradients(const ArchSpec& arch, const ParamMap& params, const Batch& batch)
{
    Graph g;
    const NodeId input = g.constant(batch.inputs);
    const NodeId logits = forward(arch, g, params, input);
    const NodeId loss = g.softmax_cross_entropy(logits, batch.labels);
    MinibatchResult r;
    r.loss = g.value(loss)[0];
    r.grads = g.gradients(loss);
    return r;
}

std::vector<std::size_t> epoch_order(std::size_t examples, std::uint64_t seed, std::uint64_t epoch)
{
    std::vector<std::size_t> order(examples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng r = Rng(seed).substream("data-order").substream(epoch);
    for (std::size_t i = examples; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
    return order;
}

namespace {

Batch training_batch(const TrainData& data, std::uint64_t seed, std::uint64_t iteration, std::uint64_t ipe,
                     std::size_t batch_size, std::vector<std::size_t>& order, std::uint64_t& order_epoch)
{
    const std::uint64_t epoch = iteration / ipe;
    if (order.empty() || order_epoch != epoch) {
        order = epoch_order(data.train->size(), seed, epoch);
        order_epoch = epoch;
    }
    const std::size_t b = static_cast<std::size_t>(iteration % ipe);
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(begin + batch_size, order.size());
    const Rng stream = Rng(seed).substream("augment").substream(epoch);
    return make_batch(*data.train, std::span(order).subspan(begin, end - begin), data.transform, stream, true);
}

}  // namespace

Checkpoint train(const ArchSpec& arch, TrainState state, const Mask* mask, const TrainData& data,
                 const Hparams& hp, std::uint64_t seed, const TrainOptions& opts)
{
    hp.validate();
    if (!data.train || data.train->size() == 0) throw Error("train: empty training set");
    require_congruent(state.params, state.momentum, "train");
    if (mask) {
        require_congruent(state.params, *mask, "train");
        apply_mask(state.params, *mask);
        apply_mask(state.momentum, *mask);
    }
    const std::uint64_t ipe = iterations_per_epoch(data.train->size(), hp.batch_size);
    const std::uint64_t total = hp.epochs * ipe;
    if (state.iteration > total) throw Error("train: start iteration beyond end of training");

    auto snapshot = [&]() {
        Checkpoint c;
        c.snapshot.params = state.params;
        c.snapshot.iteration = state.iteration;
        c.snapshot.run_id = opts.run_id;
        c.momentum = state.momentum;
        return c;
    };

    std::vector<std::size_t> order;
    std::uint64_t order_epoch = 0;
    for (; state.iteration < total; ++state.iteration) {
        const auto t = state.iteration;
        if (opts.on_checkpoint && opts.checkpoint_iters.contains(t)) opts.on_checkpoint(snapshot());
        const Batch batch = training_batch(data, seed, t, ipe, hp.batch_size, order, order_epoch);
        auto step = loss_and_gradients(arch, state.params, batch);
        if (!std::isfinite(step.loss)) throw DivergenceError(t);
        if (opts.on_step && (!opts.observe || opts.observe(t))) {
            opts.on_step(StepView{t, state.params, step.grads, step.loss});
        }
        sgd_update(state.params, state.momentum, step.grads, mask, lr_at(t, hp, ipe), hp);
    }

    if (opts.on_step && (!opts.observe || opts.observe(total))) {
        const Batch batch = training_batch(data, seed, total, ipe, hp.batch_size, order, order_epoch);
        auto step = loss_and_gradients(arch, state.params, batch);
        if (!std::isfinite(step.loss)) throw DivergenceError(total);
        opts.on_step(StepView{total, state.params, step.grads, step.loss});
    }
    Checkpoint final = snapshot();
    if (opts.on_checkpoint && opts.checkpoint_iters.contains(total)) opts.on_checkpoint(final);
    return final;
}

EvalResult evaluate(const ArchSpec& arch, const ParamMap& params, const Dataset& ds, const TransformSpec& spec)
{
    if (ds.size() == 0) throw Error("evaluate: empty dataset");
    constexpr std::size_t kChunk = 250;
    const Rng stream = Rng(0).substream("eval-rotation");
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
        const std::size_t end = std::min(begin + kChunk, ds.size());
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Batch batch = make_batch(ds, idx, spec, stream, false);
        Graph g;
        const NodeId logits = forward(arch, g, params, g.constant(batch.inputs));
        const NodeId loss = g.softmax_cross_entropy(logits, batch.labels);
        loss_sum += static_cast<double>(g.value(loss)[0]) * static_cast<double>(idx.size());
        const Tensor& L = g.value(logits);
        const std::size_t K = L.dim(1);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            const float* row = L.ptr() + n * K;
            const auto pred = static_cast<int>(std::max_element(row, row + K) - row);
            correct += pred == batch.labels[n];
        }
    }
    return {loss_sum / static_cast<double>(ds.size()), static_cast<double>(correct) / static_cast<double>(ds.size())};
}

}  // namespace epl
