// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace epl {

/// One artifact reference: path relative to the manifest's directory plus the
/// SHA-256 of the whole file at write time. (A CRC over a container that ends in
/// its own CRC is a constant, so it cannot identify content.)
struct ArtifactRef {
    std::string kind;
    std::string path;
    std::string sha256;
};

void to_json(nlohmann::json& j, const ArtifactRef& a);
void from_json(const nlohmann::json& j, ArtifactRef& a);

/// Appends JSON lines to `<dir>/manifest.jsonl`. Safe to share between threads;
/// each record is written and flushed as a single line.
class ManifestWriter {
public:
    explicit ManifestWriter(std::filesystem::path dir);

    const std::filesystem::path& dir() const noexcept { return dir_; }

    /// Reference to an existing file (normally under dir()), with its current digest.
    ArtifactRef artifact(const std::string& kind, const std::filesystem::path& file) const;

    /// Adds timestamp and engine version, then appends.
    void append(nlohmann::json record);

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::ofstream out_;
};

struct ManifestRecord {
    std::filesystem::path dir;
    nlohmann::json json;

    std::vector<ArtifactRef> artifacts() const;
};

/// Reads every line of a manifest file. Throws ArtifactError if it is missing and
/// FormatError on a malformed line.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& file);

std::string file_sha256(const std::filesystem::path& file);

/// Throws ArtifactError if the artifact is missing, its digest changed, or (for
/// .epl containers) its embedded CRC fails.
void check_artifact(const std::filesystem::path& dir, const ArtifactRef& ref);

/// Current UTC time as ISO-8601.
std::string utc_timestamp();

}  // namespace epl
