// SPDX-License-Identifier: Apache-2.0
#include "epl/state.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace epl {
namespace {

static_assert(std::endian::native == std::endian::little, "container encoding assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'P', 'L', '1'};

class Writer {
public:
    template <typename T>
    void put(T v)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        out_.insert(out_.end(), p, p + sizeof(T));
    }
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    void header(const std::string& name, const Shape& dims)
    {
        if (name.size() > UINT16_MAX) throw FormatError("parameter name too long: " + name);
        if (dims.size() > UINT8_MAX) throw FormatError("rank too large for " + name);
        put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        bytes(name.data(), name.size());
        put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
        for (auto d : dims) put<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
    std::vector<std::uint8_t> finish()
    {
        put<std::uint32_t>(crc32_of(out_));
        return std::move(out_);
    }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    template <typename T>
    T get()
    {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n)
    {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::pair<std::string, Shape> header()
    {
        const auto len = get<std::uint16_t>();
        const auto name_bytes = take(len);
        std::string name(name_bytes.begin(), name_bytes.end());
        const auto rank = get<std::uint8_t>();
        Shape dims(rank);
        for (auto& d : dims) {
            d = get<std::uint32_t>();
            if (d == 0) fail("zero dimension in " + name);
        }
        return {std::move(name), std::move(dims)};
    }
    std::size_t pos() const { return pos_; }
    [[noreturn]] void fail(const std::string& what) const
    {
        throw FormatError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > bytes_.size()) fail("unexpected end of data");
    }

    std::span<const std::uint8_t> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

// Checks magic, CRC and version; returns a reader positioned after the version
// field and limited to the CRC-covered body.
Reader open_container(std::span<const std::uint8_t> bytes, const std::string& source, std::uint32_t version)
{
    if (bytes.size() < 4 + 4 + 8 + 4 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(source + ": not an EPL1 container");
    }
    const auto body = bytes.first(bytes.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 4);
    if (crc32_of(body) != stored) throw FormatError(source + ": CRC mismatch");
    Reader r(body, source);
    r.take(4);
    const auto v = r.get<std::uint32_t>();
    if (v != version) r.fail("format version " + std::to_string(v) + ", expected " + std::to_string(version));
    return r;
}

void write_params(Writer& w, const ParamMap& params)
{
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& [id, t] : params) {
        w.header(id, t.dims());
        w.bytes(t.ptr(), t.numel() * sizeof(float));
    }
}

ParamMap read_params(Reader& r)
{
    ParamMap params;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, dims] = r.header();
        const auto payload = r.take(shape_numel(dims) * sizeof(float));
        std::vector<float> data(shape_numel(dims));
        std::memcpy(data.data(), payload.data(), payload.size());
        if (!params.emplace(name, Tensor(std::move(dims), std::move(data))).second) {
            r.fail("duplicate parameter " + name);
        }
    }
    return params;
}

}  // namespace

Mask Mask::dense(const Model& model)
{
    Mask m;
    for (const auto& [id, t] : model.params) {
        if (model.is_kernel(id)) m.entries[id] = MaskEntry{t.dims(), std::vector<std::uint8_t>(t.numel(), 1)};
    }
    return m;
}

std::size_t Mask::total() const
{
    std::size_t n = 0;
    for (const auto& [id, e] : entries) n += e.keep.size();
    return n;
}

std::size_t Mask::surviving() const
{
    std::size_t n = 0;
    for (const auto& [id, e] : entries)
        for (auto k : e.keep) n += k;
    return n;
}

double Mask::fraction_remaining() const
{
    const auto t = total();
    return t == 0 ? 0.0 : static_cast<double>(surviving()) / static_cast<double>(t);
}

void require_congruent(const ParamMap& params, const Mask& mask, const std::string& what)
{
    for (const auto& [id, e] : mask.entries) {
        auto it = params.find(id);
        if (it == params.end()) throw ShapeError(what + ": mask names unknown parameter " + id);
        if (it->second.dims() != e.dims) {
            throw ShapeError(what + ": " + id + " dims " + shape_str(it->second.dims()) + " vs mask " +
                             shape_str(e.dims));
        }
    }
}

void apply_mask(ParamMap& params, const Mask& mask)
{
    require_congruent(params, mask, "apply_mask");
    for (const auto& [id, e] : mask.entries) {
        auto& t = params.at(id);
        for (std::size_t i = 0; i < e.keep.size(); ++i)
            if (!e.keep[i]) t[i] = 0.0f;
    }
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = ::crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt)
{
    require_congruent(ckpt.snapshot.params, ckpt.momentum, "encode_checkpoint");
    Writer w;
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(ckpt.iteration());
    write_params(w, ckpt.snapshot.params);
    write_params(w, ckpt.momentum);
    return w.finish();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source)
{
    Reader r = open_container(bytes, source, kCheckpointVersion);
    Checkpoint c;
    c.snapshot.iteration = r.get<std::uint64_t>();
    c.snapshot.params = read_params(r);
    c.momentum = read_params(r);
    try {
        require_congruent(c.snapshot.params, c.momentum, source);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("momentum section not congruent: ") + e.what());
    }
    if (r.pos() != bytes.size() - 4) r.fail("trailing bytes before CRC");
    return c;
}

std::vector<std::uint8_t> encode_mask(const Mask& mask)
{
    Writer w;
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kMaskVersion);
    w.put<std::uint64_t>(mask.round);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.entries.size()));
    for (const auto& [id, e] : mask.entries) {
        w.header(id, e.dims);
        w.bytes(e.keep.data(), e.keep.size());
    }
    return w.finish();
}

Mask decode_mask(std::span<const std::uint8_t> bytes, const std::string& source)
{
    Reader r = open_container(bytes, source, kMaskVersion);
    Mask m;
    m.round = r.get<std::uint64_t>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, dims] = r.header();
        const auto payload = r.take(shape_numel(dims));
        for (auto b : payload)
            if (b > 1) r.fail("non-binary mask value in " + name);
        m.entries[name] = MaskEntry{std::move(dims), {payload.begin(), payload.end()}};
    }
    if (r.pos() != bytes.size() - 4) r.fail("trailing bytes before CRC");
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ArtifactError(file.string(), "missing artifact");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& file, std::span<const std::uint8_t> bytes)
{
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError(file.string(), "cannot write artifact");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArtifactError(file.string(), "short write");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file)
{
    write_file(file, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& file)
{
    return decode_checkpoint(read_file(file), file.string());
}

void save_mask(const Mask& mask, const std::filesystem::path& file)
{
    write_file(file, encode_mask(mask));
}

Mask load_mask(const std::filesystem::path& file)
{
    return decode_mask(read_file(file), file.string());
}

void verify_container(const std::filesystem::path& file)
{
    const auto bytes = read_file(file);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(file.string() + ": not an EPL1 container");
    }
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    open_container(bytes, file.string(), version);
}

}  // namespace epl
