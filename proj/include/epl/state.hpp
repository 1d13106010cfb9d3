// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "epl/model.hpp"
#include "epl/tensor.hpp"

namespace epl {

/// All parameter values of a network at one training iteration.
struct WeightSnapshot {
    ParamMap params;
    std::string run_id;
    std::uint64_t iteration = 0;
};

/// Weights plus SGD momentum buffers. Data-order and augmentation randomness are
/// pure functions of (seed, epoch, example), so the iteration index is the only
/// RNG cursor a resumed run needs.
struct Checkpoint {
    WeightSnapshot snapshot;
    ParamMap momentum;

    std::uint64_t iteration() const noexcept { return snapshot.iteration; }
};

struct MaskEntry {
    Shape dims;
    std::vector<std::uint8_t> keep;  ///< 1 = survives, 0 = pruned

    friend bool operator==(const MaskEntry&, const MaskEntry&) = default;
};

/// Binary keep-mask over the prunable parameters. Parameters without an entry
/// (biases) are never pruned.
struct Mask {
    std::map<std::string, MaskEntry> entries;
    std::size_t round = 0;

    /// All-ones mask over every kernel of the model.
    static Mask dense(const Model& model);

    std::size_t total() const;
    std::size_t surviving() const;
    double fraction_remaining() const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

/// Throws ShapeError unless every mask entry names a parameter of equal dims.
void require_congruent(const ParamMap& params, const Mask& mask, const std::string& what);

/// Zero every pruned position in place.
void apply_mask(ParamMap& params, const Mask& mask);

// --- persistence ------------------------------------------------------------
//
// Little-endian container: magic "EPL1", u32 format version, u64 iteration,
// u32 entry count, then per entry: u16 name length + UTF-8 name, u8 rank,
// u32 dims, payload. Checkpoints (version 1) carry f32 payloads and a second,
// identically laid out momentum section; masks (version 2) carry one byte per
// element and store the IMP round in the iteration field. A CRC-32 of all
// preceding bytes closes the file.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMaskVersion = 2;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source);

std::vector<std::uint8_t> encode_mask(const Mask& mask);
Mask decode_mask(std::span<const std::uint8_t> bytes, const std::string& source);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);
void save_mask(const Mask& mask, const std::filesystem::path& file);
Mask load_mask(const std::filesystem::path& file);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Reads a container file and checks its magic and trailing CRC without decoding
/// the payload. Throws ArtifactError (missing) or FormatError (corrupt).
void verify_container(const std::filesystem::path& file);

std::vector<std::uint8_t> read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, std::span<const std::uint8_t> bytes);

}  // namespace epl
