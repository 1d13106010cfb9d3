// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epl/rng.hpp"
#include "epl/tensor.hpp"

namespace epl {

enum class Split { train, eval };

/// Byte images stored as consecutive CHW planes (the CIFAR-10 record layout).
struct Dataset {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_classes = 10;
    Split split = Split::train;
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return channels * height * width; }
    std::span<const std::uint8_t> image_bytes(std::size_t i) const
    {
        return {pixels.data() + i * image_size(), image_size()};
    }
    /// Throws Error if pixels/labels disagree in length or a label is out of range.
    void validate() const;
};

/// Float image in CHW layout.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

Image to_image(const Dataset& ds, std::size_t i);

// --- CIFAR-10 binary format -------------------------------------------------

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;

/// Parse CIFAR-10 records (1 label byte + 3072 R,G,B plane bytes). `source` is used
/// in error messages, which name the byte offset of the malformed record.
Dataset decode_cifar10(std::span<const std::uint8_t> bytes, Split split, const std::string& source);
std::vector<std::uint8_t> encode_cifar10(const Dataset& ds);

Dataset read_cifar10_batch(const std::filesystem::path& file, Split split);
void write_cifar10_batch(const Dataset& ds, const std::filesystem::path& file);

struct DatasetPair {
    Dataset train;
    Dataset eval;
};

/// data_batch_1..5.bin -> train, test_batch.bin -> eval. Also looks inside a
/// "cifar-10-batches-bin" subdirectory.
DatasetPair load_cifar10(const std::filesystem::path& dir);

// --- transforms -------------------------------------------------------------

struct NormalizeStats {
    std::vector<float> mean;
    std::vector<float> stddev;
};

/// Per-channel mean and population stddev of raw pixel values.
NormalizeStats channel_stats(const Dataset& ds);

enum class Task { classify, rotation };

struct TransformSpec {
    NormalizeStats normalize;
    bool flip = false;
    std::size_t crop_pad = 0;
    bool blur = false;
    Task task = Task::classify;
};

/// Number of classifier outputs the transform implies (rotation forces 4).
std::size_t output_classes(const TransformSpec& spec, const Dataset& ds);

Image flip_horizontal(const Image& img);
/// out(y, x) = in(y + dy, x + dx); positions outside the source are zero.
Image shift_crop(const Image& img, int dy, int dx);
/// Random horizontal flip (p = 0.5) and random shift in [-pad, pad] per axis.
Image augment(const Image& img, Rng& rng, const TransformSpec& spec);

/// Replace each 4x4 block by its mean (average pool, then nearest upsample).
Image blur4x(const Image& img);

/// Counter-clockwise rotation by 90 * quarter_turns degrees. Square images only.
Image rotate90(const Image& img, int quarter_turns);
/// Rotate by 90n degrees with n uniform in {0,1,2,3}; returns (image, n).
std::pair<Image, int> rotation_example(const Image& img, Rng& rng);

/// Fresh uniform label per example, drawn once. Pixels are copied untouched.
Dataset randomize_labels(const Dataset& ds, Rng rng);

/// n examples with per-class quotas as equal as possible, returned in source order.
Dataset stratified_subset(const Dataset& ds, std::size_t n, const Rng& rng);

struct SyntheticSpec {
    std::size_t train_size = 512;
    std::size_t eval_size = 256;
    std::size_t num_classes = 10;
    std::size_t channels = 3;
    std::size_t height = 8;
    std::size_t width = 8;
};

/// Class-prototype images plus Gaussian pixel noise; labels balanced (i mod K).
DatasetPair make_synthetic(const SyntheticSpec& spec, const Rng& rng);

struct Batch {
    Tensor inputs;
    std::vector<int> labels;
};

/// Assemble an NCHW batch. Each example draws augmentation and rotation randomness
/// from `stream.substream(example index)`; augmentation applies only when `train`.
Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, const TransformSpec& spec,
                 const Rng& stream, bool train);

}  // namespace epl
