// SPDX-License-Identifier: Apache-2.0
#include "epl/manifest.hpp"

#include <chrono>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "epl/config.hpp"
#include "epl/error.hpp"
#include "epl/state.hpp"

namespace epl {

void to_json(nlohmann::json& j, const ArtifactRef& a)
{
    j = nlohmann::json{{"kind", a.kind}, {"path", a.path}, {"sha256", a.sha256}};
}

void from_json(const nlohmann::json& j, ArtifactRef& a)
{
    j.at("kind").get_to(a.kind);
    j.at("path").get_to(a.path);
    j.at("sha256").get_to(a.sha256);
}

ManifestWriter::ManifestWriter(std::filesystem::path dir) : dir_(std::move(dir))
{
    std::filesystem::create_directories(dir_);
    out_.open(dir_ / "manifest.jsonl", std::ios::app | std::ios::binary);
    if (!out_) throw Error("cannot open manifest in " + dir_.string());
}

ArtifactRef ManifestWriter::artifact(const std::string& kind, const std::filesystem::path& file) const
{
    const auto abs = std::filesystem::absolute(file);
    return ArtifactRef{kind, std::filesystem::relative(abs, std::filesystem::absolute(dir_)).generic_string(),
                       file_sha256(abs)};
}

void ManifestWriter::append(nlohmann::json record)
{
    record["engine_version"] = kEngineVersion;
    record["timestamp"] = utc_timestamp();
    const std::string line = record.dump() + "\n";
    std::lock_guard lock(mutex_);
    out_ << line;
    out_.flush();
    if (!out_) throw Error("manifest write failed in " + dir_.string());
}

std::vector<ArtifactRef> ManifestRecord::artifacts() const
{
    if (!json.contains("artifacts")) return {};
    return json.at("artifacts").get<std::vector<ArtifactRef>>();
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ArtifactError(file.string(), "missing artifact");
    std::vector<ManifestRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back({file.parent_path(), nlohmann::json::parse(line)});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(fmt::format("{}: line {}: {}", file.string(), line_no, e.what()));
        }
    }
    return out;
}

std::string file_sha256(const std::filesystem::path& file)
{
    const auto bytes = read_file(file);
    return sha256_hex(std::string(bytes.begin(), bytes.end()));
}

void check_artifact(const std::filesystem::path& dir, const ArtifactRef& ref)
{
    const auto file = dir / ref.path;
    if (!std::filesystem::exists(file)) throw ArtifactError(file.string(), "missing artifact");
    if (file_sha256(file) != ref.sha256) throw ArtifactError(file.string(), "digest mismatch against manifest");
    if (file.extension() == ".epl") {
        try {
            verify_container(file);
        } catch (const FormatError& e) {
            throw ArtifactError(file.string(), e.what());
        }
    }
}

std::string utc_timestamp()
{
    const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

}  // namespace epl
