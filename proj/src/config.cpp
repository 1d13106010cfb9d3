// SPDX-License-Identifier: Apache-2.0
#include "epl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <openssl/evp.h>

namespace epl {
namespace {

const std::set<std::string> kKnownKeys = {
    "data.source", "data.path", "data.train_subset", "data.eval_subset", "data.subset_seed",
    "data.synthetic_train", "data.synthetic_eval", "data.synthetic_classes", "data.synthetic_channels",
    "data.synthetic_size", "data.synthetic_seed", "data.flip", "data.crop_pad",
    "model.arch", "model.conv", "model.dense", "model.global_pool",
    "train.epochs", "train.batch_size", "train.lr", "train.momentum", "train.weight_decay", "train.lr_drops",
    "train.lr_drop_factor", "train.checkpoint_iters",
    "run.seeds", "run.workers",
    "telemetry.enabled", "telemetry.dense_until", "telemetry.dense_every", "telemetry.sparse_every",
    "imp.rounds", "imp.rate", "imp.rewind",
    "perturb.specs", "perturb.rewind", "perturb.rounds", "perturb.retrain",
    "pretrain.tasks", "pretrain.epochs", "pretrain.rewind", "pretrain.sparse_sources",
};

using Values = std::map<std::string, std::string>;

std::string trim(std::string s)
{
    boost::algorithm::trim(s);
    return s;
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& text)
{
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
    return v;
}

double to_double(const std::string& key, const std::string& text)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key, "expected a number, got '" + text + "'");
}

bool to_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + text + "'");
}

class Reader {
public:
    explicit Reader(Values v) : values_(std::move(v)) {}

    const std::string* raw(const std::string& key) const
    {
        auto it = values_.find(key);
        return it == values_.end() ? nullptr : &it->second;
    }
    void str(const std::string& key, std::string& out) const
    {
        if (auto* v = raw(key)) out = *v;
    }
    template <class T>
    void uint(const std::string& key, T& out) const
    {
        if (auto* v = raw(key)) out = static_cast<T>(to_uint(key, *v));
    }
    void real(const std::string& key, double& out) const
    {
        if (auto* v = raw(key)) out = to_double(key, *v);
    }
    void boolean(const std::string& key, bool& out) const
    {
        if (auto* v = raw(key)) out = to_bool(key, *v);
    }
    template <class T>
    void uints(const std::string& key, T& out) const
    {
        auto* v = raw(key);
        if (!v) return;
        out.clear();
        for (const auto& item : split_list(*v)) out.insert(out.end(), static_cast<typename T::value_type>(to_uint(key, item)));
    }
    template <class T, class F>
    void items(const std::string& key, std::vector<T>& out, F parse) const
    {
        auto* v = raw(key);
        if (!v) return;
        out.clear();
        for (const auto& item : split_list(*v)) {
            try {
                out.push_back(parse(item));
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                throw ConfigError(key, e.what());
            }
        }
    }

private:
    Values values_;
};

Pool parse_pool(const std::string& key, const std::string& text)
{
    if (text == "none") return Pool::none;
    if (text == "max") return Pool::max;
    if (text == "avg") return Pool::avg;
    throw ConfigError(key, "unknown pooling '" + text + "'");
}

const char* pool_name(Pool p)
{
    switch (p) {
    case Pool::none: return "none";
    case Pool::max: return "max";
    case Pool::avg: return "avg";
    }
    return "?";
}

ConvBlock parse_conv_block(const std::string& key, const std::string& text)
{
    // <channels>x<kernel>[:<pool>]
    const auto colon = text.find(':');
    const std::string dims = text.substr(0, colon);
    const auto x = dims.find('x');
    if (x == std::string::npos) throw ConfigError(key, "expected <channels>x<kernel>[:pool], got '" + text + "'");
    ConvBlock b;
    b.out_channels = to_uint(key, dims.substr(0, x));
    b.kernel = to_uint(key, dims.substr(x + 1));
    b.pool = colon == std::string::npos ? Pool::none : parse_pool(key, text.substr(colon + 1));
    return b;
}

void require(bool ok, const std::string& key, const std::string& message)
{
    if (!ok) throw ConfigError(key, message);
}

}  // namespace

std::string sha256_hex(const std::string& text)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source, fmt::format("line {}: {}", e.line(), e.message()));
    }

    Values values;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError(section, "key outside of any section");
        const bool known = std::any_of(kKnownKeys.begin(), kKnownKeys.end(),
                                       [&](const std::string& k) { return k.starts_with(section + "."); });
        if (!known) throw ConfigError(section, "unknown section");
        for (const auto& [key, node] : body) {
            const std::string full = section + "." + key;
            if (!kKnownKeys.contains(full)) throw ConfigError(full, "unknown key");
            values[full] = trim(node.get_value<std::string>());
        }
    }
    const Reader r(std::move(values));
    ExperimentConfig cfg;

    auto& d = cfg.data;
    r.str("data.source", d.source);
    require(d.source == "synthetic" || d.source == "cifar10", "data.source", "expected synthetic or cifar10");
    if (auto* p = r.raw("data.path"); p && !p->empty()) d.path = *p;
    if (d.source == "cifar10" && d.path.empty()) {
        if (const char* env = std::getenv("EPL_DATA_DIR"); env && *env) d.path = env;
    }
    require(d.source != "cifar10" || !d.path.empty(), "data.path",
            "missing required key (needed for data.source = cifar10; EPL_DATA_DIR is also unset)");
    r.uint("data.train_subset", d.train_subset);
    r.uint("data.eval_subset", d.eval_subset);
    r.uint("data.subset_seed", d.subset_seed);
    r.uint("data.synthetic_train", d.synthetic.train_size);
    r.uint("data.synthetic_eval", d.synthetic.eval_size);
    r.uint("data.synthetic_classes", d.synthetic.num_classes);
    r.uint("data.synthetic_channels", d.synthetic.channels);
    std::size_t size = d.synthetic.height;
    r.uint("data.synthetic_size", size);
    d.synthetic.height = d.synthetic.width = size;
    r.uint("data.synthetic_seed", d.synthetic_seed);
    r.boolean("data.flip", d.flip);
    r.uint("data.crop_pad", d.crop_pad);
    require(d.synthetic.train_size > 0, "data.synthetic_train", "must be positive");
    require(d.synthetic.eval_size > 0, "data.synthetic_eval", "must be positive");
    require(d.synthetic.num_classes >= 2, "data.synthetic_classes", "must be at least 2");
    require(d.synthetic.channels > 0, "data.synthetic_channels", "must be positive");
    require(size > 0 && size % 2 == 0, "data.synthetic_size", "must be a positive even number");

    const bool cifar = d.source == "cifar10";
    const std::size_t c = cifar ? 3 : d.synthetic.channels;
    const std::size_t hw = cifar ? 32 : size;
    const std::size_t classes = cifar ? 10 : d.synthetic.num_classes;
    std::string arch = "conv2";
    r.str("model.arch", arch);
    if (arch == "custom") {
        cfg.arch.name = "custom";
        cfg.arch.in_channels = c;
        cfg.arch.in_height = cfg.arch.in_width = hw;
        cfg.arch.num_classes = classes;
        r.items("model.conv", cfg.arch.conv, [](const std::string& s) { return parse_conv_block("model.conv", s); });
        r.uints("model.dense", cfg.arch.dense);
        r.boolean("model.global_pool", cfg.arch.global_pool);
    } else {
        require(arch == "conv2" || arch == "conv4" || arch == "mlp", "model.arch", "unknown architecture '" + arch + "'");
        for (const char* k : {"model.conv", "model.dense", "model.global_pool"}) {
            require(!r.raw(k), k, "only valid with model.arch = custom");
        }
        cfg.arch = preset_arch(arch, c, hw, hw, classes);
    }
    try {
        build_model(cfg.arch, Rng(0));
    } catch (const Error& e) {
        throw ConfigError("model", e.what());
    }

    auto& hp = cfg.hparams;
    r.uint("train.epochs", hp.epochs);
    r.uint("train.batch_size", hp.batch_size);
    r.real("train.lr", hp.lr0);
    r.real("train.momentum", hp.momentum);
    r.real("train.weight_decay", hp.weight_decay);
    r.uints("train.lr_drops", hp.lr_drop_epochs);
    r.real("train.lr_drop_factor", hp.lr_drop_factor);
    r.uints("train.checkpoint_iters", cfg.checkpoint_iters);
    require(hp.epochs > 0, "train.epochs", "must be positive");
    require(hp.batch_size > 0, "train.batch_size", "must be positive");
    require(hp.lr0 > 0.0, "train.lr", "must be positive");
    require(hp.momentum >= 0.0 && hp.momentum < 1.0, "train.momentum", "must be in [0, 1)");
    require(hp.weight_decay >= 0.0, "train.weight_decay", "must be non-negative");
    require(std::is_sorted(hp.lr_drop_epochs.begin(), hp.lr_drop_epochs.end()) &&
                std::adjacent_find(hp.lr_drop_epochs.begin(), hp.lr_drop_epochs.end()) == hp.lr_drop_epochs.end(),
            "train.lr_drops", "must be strictly increasing");

    r.uints("run.seeds", cfg.seeds);
    r.uint("run.workers", cfg.workers);
    require(!cfg.seeds.empty(), "run.seeds", "must list at least one seed");
    require(cfg.workers > 0, "run.workers", "must be positive");

    r.boolean("telemetry.enabled", cfg.telemetry);
    r.uint("telemetry.dense_until", cfg.cadence.dense_until);
    r.uint("telemetry.dense_every", cfg.cadence.dense_every);
    r.uint("telemetry.sparse_every", cfg.cadence.sparse_every);
    require(cfg.cadence.dense_every > 0, "telemetry.dense_every", "must be positive");
    require(cfg.cadence.sparse_every > 0, "telemetry.sparse_every", "must be positive");

    r.uint("imp.rounds", cfg.imp.rounds);
    r.real("imp.rate", cfg.imp.rate);
    r.uints("imp.rewind", cfg.imp.rewind);
    require(cfg.imp.rate > 0.0 && cfg.imp.rate < 1.0, "imp.rate", "must be in (0, 1)");
    require(!cfg.imp.rewind.empty(), "imp.rewind", "must list at least one iteration");

    r.items("perturb.specs", cfg.perturb.specs, [](const std::string& s) { return parse_perturbation(s); });
    r.uints("perturb.rewind", cfg.perturb.rewind);
    r.uints("perturb.rounds", cfg.perturb.rounds);
    r.boolean("perturb.retrain", cfg.perturb.retrain);
    for (auto round : cfg.perturb.rounds) {
        require(round <= cfg.imp.rounds, "perturb.rounds", "exceeds imp.rounds");
    }

    r.items("pretrain.tasks", cfg.pretrain.tasks, [](const std::string& s) { return parse_pretrain_kind(s); });
    r.uints("pretrain.epochs", cfg.pretrain.epochs);
    r.uint("pretrain.rewind", cfg.pretrain.rewind);
    r.items("pretrain.sparse_sources", cfg.pretrain.sparse_sources,
            [](const std::string& s) { return parse_mask_source(s); });

    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("--config", "cannot read " + file.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text, file.string());
}

std::string ExperimentConfig::canonical() const
{
    std::vector<std::string> lines;
    auto put = [&](const std::string& key, const auto& value) { lines.push_back(fmt::format("{}={}", key, value)); };
    auto join = [](const auto& range, auto fn) {
        std::vector<std::string> parts;
        for (const auto& v : range) parts.push_back(fn(v));
        return fmt::format("{}", fmt::join(parts, ","));
    };
    auto num = [](const auto& v) { return fmt::format("{}", v); };

    put("data.source", data.source);
    put("data.path", data.path.string());
    put("data.train_subset", data.train_subset);
    put("data.eval_subset", data.eval_subset);
    put("data.subset_seed", data.subset_seed);
    put("data.synthetic_train", data.synthetic.train_size);
    put("data.synthetic_eval", data.synthetic.eval_size);
    put("data.synthetic_classes", data.synthetic.num_classes);
    put("data.synthetic_channels", data.synthetic.channels);
    put("data.synthetic_size", data.synthetic.height);
    put("data.synthetic_seed", data.synthetic_seed);
    put("data.flip", data.flip);
    put("data.crop_pad", data.crop_pad);
    put("model.arch", arch.name);
    put("model.input", fmt::format("{}x{}x{}", arch.in_channels, arch.in_height, arch.in_width));
    put("model.classes", arch.num_classes);
    put("model.conv", join(arch.conv, [](const ConvBlock& b) {
            return fmt::format("{}x{}:{}", b.out_channels, b.kernel, pool_name(b.pool));
        }));
    put("model.dense", join(arch.dense, num));
    put("model.global_pool", arch.global_pool);
    put("train.epochs", hparams.epochs);
    put("train.batch_size", hparams.batch_size);
    put("train.lr", hparams.lr0);
    put("train.momentum", hparams.momentum);
    put("train.weight_decay", hparams.weight_decay);
    put("train.lr_drops", join(hparams.lr_drop_epochs, num));
    put("train.lr_drop_factor", hparams.lr_drop_factor);
    put("train.checkpoint_iters", join(checkpoint_iters, num));
    put("run.seeds", join(seeds, num));
    put("telemetry.enabled", telemetry);
    put("telemetry.dense_until", cadence.dense_until);
    put("telemetry.dense_every", cadence.dense_every);
    put("telemetry.sparse_every", cadence.sparse_every);
    put("imp.rounds", imp.rounds);
    put("imp.rate", imp.rate);
    put("imp.rewind", join(imp.rewind, num));
    put("perturb.specs", join(perturb.specs, [](const PerturbationSpec& s) { return to_string(s); }));
    put("perturb.rewind", join(perturb.rewind, num));
    put("perturb.rounds", join(perturb.rounds, num));
    put("perturb.retrain", perturb.retrain);
    put("pretrain.tasks", join(pretrain.tasks, [](PretrainKind k) { return to_string(k); }));
    put("pretrain.epochs", join(pretrain.epochs, num));
    put("pretrain.rewind", pretrain.rewind);
    put("pretrain.sparse_sources", join(pretrain.sparse_sources, [](MaskSource s) { return to_string(s); }));
    std::sort(lines.begin(), lines.end());

    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::uint64_t ExperimentConfig::total_iterations() const
{
    const std::size_t examples = data.source == "cifar10"
                                     ? (data.train_subset ? std::min<std::size_t>(data.train_subset, 50000) : 50000)
                                     : data.synthetic.train_size;
    return hparams.epochs * iterations_per_epoch(examples, hparams.batch_size);
}

void ExperimentConfig::check_rewind(const std::string& key, std::span<const std::uint64_t> iterations) const
{
    const auto total = total_iterations();
    for (auto k : iterations) require(k <= total, key, fmt::format("{} is past the last iteration {}", k, total));
}

std::string ExperimentConfig::hash() const
{
    return sha256_hex(canonical());
}

LoadedData load_data(const DataConfig& cfg)
{
    LoadedData out;
    if (cfg.source == "cifar10") {
        auto pair = load_cifar10(cfg.path);
        out.train = std::move(pair.train);
        out.eval = std::move(pair.eval);
    } else {
        auto pair = make_synthetic(cfg.synthetic, Rng(cfg.synthetic_seed));
        out.train = std::move(pair.train);
        out.eval = std::move(pair.eval);
    }
    const Rng rng(cfg.subset_seed);
    if (cfg.train_subset > 0 && cfg.train_subset < out.train.size()) {
        out.train = stratified_subset(out.train, cfg.train_subset, rng.substream("train-subset"));
    }
    if (cfg.eval_subset > 0 && cfg.eval_subset < out.eval.size()) {
        out.eval = stratified_subset(out.eval, cfg.eval_subset, rng.substream("eval-subset"));
    }
    out.transform.normalize = channel_stats(out.train);
    out.transform.flip = cfg.flip;
    out.transform.crop_pad = cfg.crop_pad;
    return out;
}

}  // namespace epl
