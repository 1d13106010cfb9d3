// SPDX-License-Identifier: Apache-2.0
#include "epl/model.hpp"

#include <cmath>

namespace epl {
namespace {

struct TrunkShape {
    std::size_t channels, height, width;
};

void validate(const ArchSpec& spec)
{
    if (spec.num_classes < 2) throw Error("arch " + spec.name + ": num_classes must be >= 2");
    if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0) {
        throw Error("arch " + spec.name + ": zero-sized input");
    }
    for (const auto& b : spec.conv) {
        if (b.out_channels == 0 || b.kernel == 0) throw Error("arch " + spec.name + ": zero-sized conv layer");
        if (b.kernel % 2 == 0) throw Error("arch " + spec.name + ": conv kernel size must be odd");
    }
    for (auto w : spec.dense) {
        if (w == 0) throw Error("arch " + spec.name + ": zero-sized dense layer");
    }
}

TrunkShape trunk_output(const ArchSpec& spec)
{
    TrunkShape s{spec.in_channels, spec.in_height, spec.in_width};
    for (const auto& b : spec.conv) {
        s.channels = b.out_channels;
        if (b.pool != Pool::none) {
            if (s.height < 2 || s.width < 2) throw Error("arch " + spec.name + ": pooling below 2x2");
            s.height /= 2;
            s.width /= 2;
        }
    }
    return s;
}

std::size_t flat_features(const ArchSpec& spec)
{
    const auto s = trunk_output(spec);
    if (spec.conv.empty()) return s.channels * s.height * s.width;
    return spec.global_pool ? s.channels : s.channels * s.height * s.width;
}

void add_param(Model& m, const Rng& rng, const std::string& id, Shape dims, ParamRole role,
               LayerKind kind, std::size_t layer, std::size_t fan_in)
{
    const float sigma = role == ParamRole::kernel
                            ? static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in)))
                            : 0.0f;
    Rng stream = rng.substream("init/" + id);
    m.params[id] = role == ParamRole::kernel ? sample_gaussian(stream, 0.0f, sigma, dims)
                                             : Tensor::zeros(std::move(dims));
    m.meta[id] = ParamMeta{role, kind, layer, sigma};
}

void add_head(Model& m, const Rng& rng, std::size_t in_features, std::size_t layer)
{
    add_param(m, rng, kHeadWeight, {in_features, m.spec.num_classes}, ParamRole::kernel,
              LayerKind::dense, layer, in_features);
    add_param(m, rng, kHeadBias, {m.spec.num_classes}, ParamRole::bias, LayerKind::dense, layer, 0);
}

}  // namespace

ArchSpec preset_arch(const std::string& name, std::size_t channels, std::size_t height,
                     std::size_t width, std::size_t num_classes)
{
    ArchSpec spec;
    spec.name = name;
    spec.in_channels = channels;
    spec.in_height = height;
    spec.in_width = width;
    spec.num_classes = num_classes;
    if (name == "conv2") {
        spec.conv = {{16, 3, Pool::max}, {32, 3, Pool::max}};
    } else if (name == "conv4") {
        spec.conv = {{16, 3, Pool::none}, {16, 3, Pool::max}, {32, 3, Pool::none}, {32, 3, Pool::max}};
        spec.dense = {64};
    } else if (name == "mlp") {
        spec.dense = {64, 32};
    } else {
        throw Error("unknown architecture: " + name);
    }
    return spec;
}

std::size_t param_count(const ArchSpec& spec)
{
    validate(spec);
    std::size_t total = 0, in_c = spec.in_channels;
    for (const auto& b : spec.conv) {
        total += b.out_channels * in_c * b.kernel * b.kernel + b.out_channels;
        in_c = b.out_channels;
    }
    std::size_t in_f = flat_features(spec);
    for (auto w : spec.dense) {
        total += in_f * w + w;
        in_f = w;
    }
    return total + in_f * spec.num_classes + spec.num_classes;
}

Model build_model(const ArchSpec& spec, const Rng& rng)
{
    validate(spec);
    Model m;
    m.spec = spec;
    std::size_t layer = 0, in_c = spec.in_channels;
    for (std::size_t i = 0; i < spec.conv.size(); ++i, ++layer) {
        const auto& b = spec.conv[i];
        const std::string base = "conv" + std::to_string(i);
        add_param(m, rng, base + ".weight", {b.out_channels, in_c, b.kernel, b.kernel},
                  ParamRole::kernel, LayerKind::conv, layer, in_c * b.kernel * b.kernel);
        add_param(m, rng, base + ".bias", {b.out_channels}, ParamRole::bias, LayerKind::conv, layer, 0);
        in_c = b.out_channels;
    }
    std::size_t in_f = flat_features(spec);
    for (std::size_t i = 0; i < spec.dense.size(); ++i, ++layer) {
        const std::string base = "dense" + std::to_string(i);
        add_param(m, rng, base + ".weight", {in_f, spec.dense[i]}, ParamRole::kernel, LayerKind::dense,
                  layer, in_f);
        add_param(m, rng, base + ".bias", {spec.dense[i]}, ParamRole::bias, LayerKind::dense, layer, 0);
        in_f = spec.dense[i];
    }
    add_head(m, rng, in_f, layer);
    return m;
}

Model swap_head(const Model& model, std::size_t num_classes, const Rng& rng)
{
    if (num_classes < 2) throw Error("swap_head: num_classes must be >= 2");
    if (!model.params.contains(kHeadWeight)) throw Error("swap_head: model has no classifier head");
    Model out = model;
    out.spec.num_classes = num_classes;
    const auto in_features = model.params.at(kHeadWeight).dim(0);
    const auto layer = model.meta.at(kHeadWeight).layer;
    out.params.erase(kHeadWeight);
    out.params.erase(kHeadBias);
    add_head(out, rng, in_features, layer);
    return out;
}

NodeId forward(const ArchSpec& spec, Graph& graph, const ParamMap& params, NodeId input)
{
    auto param = [&](const std::string& id) {
        auto it = params.find(id);
        if (it == params.end()) throw ShapeError("forward: missing parameter " + id);
        return graph.parameter(id, it->second);
    };
    NodeId h = input;
    for (std::size_t i = 0; i < spec.conv.size(); ++i) {
        const auto& b = spec.conv[i];
        const std::string base = "conv" + std::to_string(i);
        h = graph.conv2d(h, param(base + ".weight"), {1, b.kernel / 2});
        h = graph.relu(graph.add_bias(h, param(base + ".bias")));
        if (b.pool == Pool::max) h = graph.max_pool2(h);
        if (b.pool == Pool::avg) h = graph.avg_pool2(h);
    }
    h = (!spec.conv.empty() && spec.global_pool) ? graph.global_avg_pool(h) : graph.flatten(h);
    for (std::size_t i = 0; i < spec.dense.size(); ++i) {
        const std::string base = "dense" + std::to_string(i);
        h = graph.matmul(h, param(base + ".weight"));
        h = graph.relu(graph.add_bias(h, param(base + ".bias")));
    }
    return graph.add_bias(graph.matmul(h, param(kHeadWeight)), param(kHeadBias));
}

StructuralIndex structural_index(const Model& model)
{
    StructuralIndex index;
    for (const auto& [id, t] : model.params) {
        const auto& meta = model.meta.at(id);
        ParamScopes scopes{meta.role == ParamRole::kernel, {0, t.numel()}, {}};
        if (meta.role == ParamRole::kernel && meta.kind == LayerKind::conv) {
            const std::size_t per_filter = t.numel() / t.dim(0);
            for (std::size_t o = 0; o < t.dim(0); ++o) {
                scopes.filters.push_back({o * per_filter, (o + 1) * per_filter});
            }
        }
        index.emplace(id, std::move(scopes));
    }
    return index;
}

}  // namespace epl
