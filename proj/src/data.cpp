// SPDX-License-Identifier: Apache-2.0
#include "epl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace epl {

void Dataset::validate() const
{
    if (pixels.size() != labels.size() * image_size()) {
        throw Error("dataset: " + std::to_string(pixels.size()) + " pixel bytes for " +
                    std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw Error("dataset: label " + std::to_string(labels[i]) + " out of range at example " +
                        std::to_string(i));
        }
    }
}

Image to_image(const Dataset& ds, std::size_t i)
{
    Image img(ds.channels, ds.height, ds.width);
    const auto bytes = ds.image_bytes(i);
    std::transform(bytes.begin(), bytes.end(), img.pixels.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b); });
    return img;
}

Dataset decode_cifar10(std::span<const std::uint8_t> bytes, Split split, const std::string& source)
{
    if (bytes.size() % kCifarRecordBytes != 0) {
        const std::size_t offset = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
        throw FormatError(source + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                          std::to_string(bytes.size() - offset) + " of " +
                          std::to_string(kCifarRecordBytes) + " bytes)");
    }
    Dataset ds;
    ds.split = split;
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    ds.labels.resize(n);
    ds.pixels.resize(n * kCifarImageBytes);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t offset = r * kCifarRecordBytes;
        const std::uint8_t label = bytes[offset];
        if (label >= ds.num_classes) {
            throw FormatError(source + ": label " + std::to_string(label) + " out of range at byte offset " +
                              std::to_string(offset));
        }
        ds.labels[r] = label;
        std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1), kCifarImageBytes,
                    ds.pixels.begin() + static_cast<std::ptrdiff_t>(r * kCifarImageBytes));
    }
    return ds;
}

std::vector<std::uint8_t> encode_cifar10(const Dataset& ds)
{
    if (ds.image_size() != kCifarImageBytes) throw Error("encode_cifar10: images are not 3x32x32");
    ds.validate();
    std::vector<std::uint8_t> out;
    out.reserve(ds.size() * kCifarRecordBytes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.push_back(static_cast<std::uint8_t>(ds.labels[i]));
        const auto img = ds.image_bytes(i);
        out.insert(out.end(), img.begin(), img.end());
    }
    return out;
}

Dataset read_cifar10_batch(const std::filesystem::path& file, Split split)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ArtifactError(file.string(), "cannot open CIFAR-10 batch");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_cifar10(bytes, split, file.string());
}

void write_cifar10_batch(const Dataset& ds, const std::filesystem::path& file)
{
    const auto bytes = encode_cifar10(ds);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ArtifactError(file.string(), "cannot write CIFAR-10 batch");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

DatasetPair load_cifar10(const std::filesystem::path& dir)
{
    std::filesystem::path root = dir;
    if (!std::filesystem::exists(root / "data_batch_1.bin") &&
        std::filesystem::exists(root / "cifar-10-batches-bin" / "data_batch_1.bin")) {
        root /= "cifar-10-batches-bin";
    }
    DatasetPair out;
    out.train.split = Split::train;
    for (int b = 1; b <= 5; ++b) {
        Dataset part = read_cifar10_batch(root / ("data_batch_" + std::to_string(b) + ".bin"), Split::train);
        out.train.labels.insert(out.train.labels.end(), part.labels.begin(), part.labels.end());
        out.train.pixels.insert(out.train.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    out.eval = read_cifar10_batch(root / "test_batch.bin", Split::eval);
    return out;
}

NormalizeStats channel_stats(const Dataset& ds)
{
    NormalizeStats s;
    const std::size_t plane = ds.height * ds.width;
    for (std::size_t c = 0; c < ds.channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const std::uint8_t* p = ds.pixels.data() + i * ds.image_size() + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                sum += p[k];
                sq += static_cast<double>(p[k]) * p[k];
            }
        }
        const double n = static_cast<double>(ds.size() * plane);
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        s.mean.push_back(static_cast<float>(mean));
        s.stddev.push_back(static_cast<float>(std::sqrt(var) > 0 ? std::sqrt(var) : 1.0));
    }
    return s;
}

std::size_t output_classes(const TransformSpec& spec, const Dataset& ds)
{
    return spec.task == Task::rotation ? 4 : ds.num_classes;
}

Image flip_horizontal(const Image& img)
{
    Image out(img.channels, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, img.width - 1 - x) = img.at(c, y, x);
    return out;
}

Image shift_crop(const Image& img, int dy, int dx)
{
    Image out(img.channels, img.height, img.width);
    const auto H = static_cast<int>(img.height), W = static_cast<int>(img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
                const int sx = x + dx;
                if (sx < 0 || sx >= W) continue;
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    img.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        }
    return out;
}

Image augment(const Image& img, Rng& rng, const TransformSpec& spec)
{
    Image out = img;
    if (spec.flip && rng.below(2) == 1) out = flip_horizontal(out);
    if (spec.crop_pad > 0) {
        const auto span = 2 * spec.crop_pad + 1;
        const int dy = static_cast<int>(rng.below(span)) - static_cast<int>(spec.crop_pad);
        const int dx = static_cast<int>(rng.below(span)) - static_cast<int>(spec.crop_pad);
        out = shift_crop(out, dy, dx);
    }
    return out;
}

Image blur4x(const Image& img)
{
    if (img.height % 4 != 0 || img.width % 4 != 0) {
        throw ShapeError("blur4x: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by 4");
    }
    Image out(img.channels, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t by = 0; by < img.height; by += 4)
            for (std::size_t bx = 0; bx < img.width; bx += 4) {
                double s = 0.0;
                for (std::size_t y = 0; y < 4; ++y)
                    for (std::size_t x = 0; x < 4; ++x) s += img.at(c, by + y, bx + x);
                const auto mean = static_cast<float>(s / 16.0);
                for (std::size_t y = 0; y < 4; ++y)
                    for (std::size_t x = 0; x < 4; ++x) out.at(c, by + y, bx + x) = mean;
            }
    return out;
}

Image rotate90(const Image& img, int quarter_turns)
{
    if (img.height != img.width) {
        throw ShapeError("rotate90: non-square image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width));
    }
    const std::size_t n = img.height;
    Image out = img;
    for (int t = 0; t < ((quarter_turns % 4) + 4) % 4; ++t) {
        Image next(img.channels, n, n);
        for (std::size_t c = 0; c < img.channels; ++c)
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) next.at(c, y, x) = out.at(c, x, n - 1 - y);
        out = std::move(next);
    }
    return out;
}

std::pair<Image, int> rotation_example(const Image& img, Rng& rng)
{
    if (img.height != img.width) {
        throw ShapeError("rotation_example: non-square image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width));
    }
    const int n = static_cast<int>(rng.below(4));
    return {rotate90(img, n), n};
}

Dataset randomize_labels(const Dataset& ds, Rng rng)
{
    Dataset out = ds;
    for (auto& label : out.labels) label = static_cast<int>(rng.below(ds.num_classes));
    return out;
}

Dataset stratified_subset(const Dataset& ds, std::size_t n, const Rng& rng)
{
    if (n > ds.size()) throw Error("stratified_subset: requested " + std::to_string(n) + " of " +
                                   std::to_string(ds.size()) + " examples");
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::size_t> chosen;
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
        const std::size_t quota = n / ds.num_classes + (k < n % ds.num_classes ? 1 : 0);
        auto& idx = by_class[k];
        if (idx.size() < quota) {
            throw Error("stratified_subset: class " + std::to_string(k) + " has only " +
                        std::to_string(idx.size()) + " examples, need " + std::to_string(quota));
        }
        Rng r = rng.substream(k);
        for (std::size_t i = 0; i < quota; ++i) {
            std::swap(idx[i], idx[i + r.below(idx.size() - i)]);
        }
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota));
    }
    std::sort(chosen.begin(), chosen.end());

    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    for (auto i : chosen) {
        out.labels.push_back(ds.labels[i]);
        const auto img = ds.image_bytes(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    }
    return out;
}

DatasetPair make_synthetic(const SyntheticSpec& spec, const Rng& rng)
{
    const std::size_t image = spec.channels * spec.height * spec.width;
    // Block-structured class prototypes at half resolution, values in {-1, +1}.
    std::vector<std::vector<float>> prototypes(spec.num_classes, std::vector<float>(image));
    Rng proto = rng.substream("synthetic/prototypes");
    for (auto& p : prototypes) {
        for (std::size_t c = 0; c < spec.channels; ++c)
            for (std::size_t y = 0; y < spec.height; y += 2)
                for (std::size_t x = 0; x < spec.width; x += 2) {
                    const float v = proto.below(2) ? 1.0f : -1.0f;
                    for (std::size_t yy = y; yy < std::min(y + 2, spec.height); ++yy)
                        for (std::size_t xx = x; xx < std::min(x + 2, spec.width); ++xx)
                            p[(c * spec.height + yy) * spec.width + xx] = v;
                }
    }
    auto generate = [&](std::size_t n, Split split, const char* tag) {
        Dataset ds;
        ds.channels = spec.channels;
        ds.height = spec.height;
        ds.width = spec.width;
        ds.num_classes = spec.num_classes;
        ds.split = split;
        ds.labels.resize(n);
        ds.pixels.resize(n * image);
        Rng noise = rng.substream(tag);
        for (std::size_t i = 0; i < n; ++i) {
            const auto label = i % spec.num_classes;
            ds.labels[i] = static_cast<int>(label);
            for (std::size_t k = 0; k < image; ++k) {
                const double v = 128.0 + 48.0 * prototypes[label][k] + 40.0 * noise.normal();
                ds.pixels[i * image + k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
        return ds;
    };
    return {generate(spec.train_size, Split::train, "synthetic/train"),
            generate(spec.eval_size, Split::eval, "synthetic/eval")};
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, const TransformSpec& spec,
                 const Rng& stream, bool train)
{
    const std::size_t B = indices.size();
    Batch batch{Tensor({B, ds.channels, ds.height, ds.width}), std::vector<int>(B)};
    const std::size_t image = ds.image_size();
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = indices[b];
        Rng r = stream.substream(static_cast<std::uint64_t>(i));
        Image img = to_image(ds, i);
        if (spec.blur) img = blur4x(img);
        if (train) img = augment(img, r, spec);
        int label = ds.labels[i];
        if (spec.task == Task::rotation) {
            auto [rotated, n] = rotation_example(img, r);
            img = std::move(rotated);
            label = n;
        }
        float* dst = batch.inputs.ptr() + b * image;
        const std::size_t plane = ds.height * ds.width;
        for (std::size_t c = 0; c < ds.channels; ++c) {
            const float mean = spec.normalize.mean.empty() ? 0.0f : spec.normalize.mean[c];
            const float sd = spec.normalize.stddev.empty() ? 1.0f : spec.normalize.stddev[c];
            for (std::size_t k = 0; k < plane; ++k) dst[c * plane + k] = (img.pixels[c * plane + k] - mean) / sd;
        }
        batch.labels[b] = label;
    }
    return batch;
}

}  // namespace epl
