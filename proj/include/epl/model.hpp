// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "epl/graph.hpp"
#include "epl/rng.hpp"
#include "epl/tensor.hpp"

namespace epl {

enum class Pool { none, max, avg };

/// Convolution (same padding, stride 1) -> ReLU -> optional 2x2 pool.
struct ConvBlock {
    std::size_t out_channels;
    std::size_t kernel;
    Pool pool = Pool::max;
};

struct ArchSpec {
    std::string name;
    std::size_t in_channels = 3;
    std::size_t in_height = 32;
    std::size_t in_width = 32;
    std::vector<ConvBlock> conv;
    /// Hidden dense widths; the classifier head (num_classes wide) is appended.
    std::vector<std::size_t> dense;
    std::size_t num_classes = 10;
    /// Global average pooling instead of flatten after the conv trunk.
    bool global_pool = false;
};

/// "conv2", "conv4" or "mlp" sized for the given input.
ArchSpec preset_arch(const std::string& name, std::size_t channels, std::size_t height,
                     std::size_t width, std::size_t num_classes = 10);

enum class ParamRole { kernel, bias };
enum class LayerKind { conv, dense };

struct ParamMeta {
    ParamRole role;
    LayerKind kind;
    std::size_t layer;
    /// Standard deviation of the init distribution; 0 for biases.
    float init_sigma;
};

/// Architecture plus initial parameter values. Immutable once built.
struct Model {
    ArchSpec spec;
    ParamMap params;
    std::map<std::string, ParamMeta> meta;

    bool is_kernel(const std::string& id) const { return meta.at(id).role == ParamRole::kernel; }
};

inline const std::string kHeadWeight = "head.weight";
inline const std::string kHeadBias = "head.bias";

/// Kaiming-normal kernels (sigma = sqrt(2 / fan_in)), zero biases. Each parameter
/// draws from its own substream "init/<id>", so rebuilding any single layer with
/// the same seed reproduces it exactly.
Model build_model(const ArchSpec& spec, const Rng& rng);

/// Closed-form trainable parameter count.
std::size_t param_count(const ArchSpec& spec);

/// Replace the classifier head with a freshly initialized one of the given width.
/// Trunk parameters are copied unchanged.
Model swap_head(const Model& model, std::size_t num_classes, const Rng& rng);

/// Logits node for an NCHW input batch using the supplied parameter values.
NodeId forward(const ArchSpec& spec, Graph& graph, const ParamMap& params, NodeId input);

struct IndexRange {
    std::size_t begin;
    std::size_t end;

    std::size_t size() const { return end - begin; }
};

struct ParamScopes {
    /// Member of the network-wide group (kernels only).
    bool global;
    IndexRange layer;
    /// One contiguous range per output channel of a conv kernel; empty otherwise.
    std::vector<IndexRange> filters;
};

using StructuralIndex = std::map<std::string, ParamScopes>;

StructuralIndex structural_index(const Model& model);

}  // namespace epl
