// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

#include "epl/cli.hpp"
#include "epl/config.hpp"
#include "epl/manifest.hpp"
#include "epl/state.hpp"

using namespace epl;
namespace fs = std::filesystem;

namespace {

// 64 training images in batches of 16 for 2 epochs: 8 iterations.
const char* kSmall = R"(# tiny synthetic run
[data]
source = synthetic
synthetic_train = 64
synthetic_eval = 32
synthetic_classes = 4
synthetic_size = 8
synthetic_seed = 3

[train]
epochs = 2
batch_size = 16
lr = 0.05
lr_drops = 1
checkpoint_iters = 0, 3, 8

[run]
seeds = 1, 2

[telemetry]
dense_until = 4
dense_every = 2
sparse_every = 4

[imp]
rounds = 2
rewind = 0, 2

[perturb]
specs = none, noise:n=1, shuffle:scope=layer
rewind = 2
rounds = 1

[pretrain]
epochs = 0, 1
rewind = 2
)";

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::path(EPL_TEST_TMP) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text)
{
    const auto file = dir / "exp.cfg";
    std::ofstream(file) << text;
    return file;
}

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// `text` with `section.key = value` set, replacing an existing line of that key.
std::string with(std::string text, const std::string& section, const std::string& key, const std::string& value)
{
    const std::string line = key + " = " + value + "\n";
    const std::string header = "[" + section + "]\n";
    auto start = text.find(header);
    if (start == std::string::npos) return text + "\n" + header + line;
    start += header.size();
    const auto end = std::min(text.find("\n[", start), text.size());
    for (auto pos = start; pos < end; pos = text.find('\n', pos) + 1) {
        if (text.compare(pos, key.size() + 1, key + " ") == 0) {
            return text.replace(pos, text.find('\n', pos) + 1 - pos, line);
        }
    }
    return text.insert(start, line);
}

std::string small(const std::string& section, const std::string& key, const std::string& value)
{
    return with(kSmall, section, key, value);
}

std::string config_key_error(const std::string& text)
{
    try {
        parse_config(text, "inline");
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<no error>";
}

}  // namespace

TEST(Config, ParsesValuesAndKeepsDefaults)
{
    const auto cfg = parse_config(kSmall, "inline");
    EXPECT_EQ(cfg.data.synthetic.train_size, 64u);
    EXPECT_EQ(cfg.data.synthetic.width, 8u);
    EXPECT_EQ(cfg.arch.name, "conv2");
    EXPECT_EQ(cfg.arch.num_classes, 4u);
    EXPECT_EQ(cfg.hparams.lr0, 0.05);
    EXPECT_EQ(cfg.hparams.lr_drop_epochs, (std::vector<std::size_t>{1}));
    EXPECT_EQ(cfg.hparams.momentum, 0.9);  // default
    EXPECT_EQ(cfg.checkpoint_iters, (std::set<std::uint64_t>{0, 3, 8}));
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2}));
    EXPECT_EQ(cfg.imp.rewind, (std::vector<std::uint64_t>{0, 2}));
    EXPECT_EQ(cfg.imp.rate, 0.2);
    ASSERT_EQ(cfg.perturb.specs.size(), 3u);
    EXPECT_EQ(to_string(cfg.perturb.specs[1]), "noise:n=1");
    EXPECT_EQ(cfg.pretrain.tasks, (std::vector<PretrainKind>{PretrainKind::rotation}));
}

TEST(Config, CustomArchitecture)
{
    const auto text = with(with(small("model", "arch", "custom"), "model", "conv", "8x3:max, 4x3"), "model", "dense", "16");
    const auto cfg = parse_config(text, "inline");
    ASSERT_EQ(cfg.arch.conv.size(), 2u);
    EXPECT_EQ(cfg.arch.conv[0].out_channels, 8u);
    EXPECT_EQ(cfg.arch.conv[0].pool, Pool::max);
    EXPECT_EQ(cfg.arch.conv[1].pool, Pool::none);
    EXPECT_EQ(cfg.arch.dense, (std::vector<std::size_t>{16}));
    EXPECT_EQ(config_key_error(small("model", "conv", "8x3")), "model.conv");
}

TEST(Config, ErrorsNameTheOffendingKey)
{
    EXPECT_EQ(config_key_error(small("imp", "rounds_typo", "3")), "imp.rounds_typo");
    EXPECT_EQ(config_key_error(small("optimizer", "lr", "1")), "optimizer");
    EXPECT_EQ(config_key_error(small("train", "epochs", "two")), "train.epochs");
    EXPECT_EQ(config_key_error(small("train", "lr", "-1")), "train.lr");
    EXPECT_EQ(config_key_error(small("train", "lr", "nan")), "train.lr");
    EXPECT_EQ(config_key_error(small("train", "momentum", "1")), "train.momentum");
    EXPECT_EQ(config_key_error(small("train", "lr_drops", "5, 3")), "train.lr_drops");
    EXPECT_EQ(config_key_error(small("data", "flip", "maybe")), "data.flip");
    EXPECT_EQ(config_key_error(small("data", "source", "imagenet")), "data.source");
    EXPECT_EQ(config_key_error(small("data", "synthetic_size", "7")), "data.synthetic_size");
    EXPECT_EQ(config_key_error(small("model", "arch", "resnet")), "model.arch");
    EXPECT_EQ(config_key_error(small("imp", "rate", "1")), "imp.rate");
    EXPECT_EQ(config_key_error(small("perturb", "specs", "wobble")), "perturb.specs");
    EXPECT_EQ(config_key_error(small("perturb", "rounds", "3")), "perturb.rounds");
    EXPECT_EQ(config_key_error(small("pretrain", "tasks", "jigsaw")), "pretrain.tasks");
    EXPECT_EQ(config_key_error(small("run", "seeds", "")), "run.seeds");
    EXPECT_EQ(config_key_error(std::string(kSmall) + "[imp]\nrate = 0.5\n"), "inline");  // duplicate section
}

TEST(Config, RewindRangeIsCheckedAgainstTheRecipe)
{
    const auto cfg = parse_config(small("imp", "rewind", "0, 9"), "inline");
    EXPECT_EQ(cfg.total_iterations(), 8u);
    EXPECT_NO_THROW(cfg.check_rewind("imp.rewind", std::vector<std::uint64_t>{0, 8}));
    try {
        cfg.check_rewind("imp.rewind", cfg.imp.rewind);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "imp.rewind");
    }
    // 5,000 CIFAR examples in batches of 128 for 20 epochs
    EXPECT_EQ(parse_config("[data]\nsource = cifar10\npath = /x\n", "inline").total_iterations(), 40u * 20u);
}

TEST(Config, DataPathFallsBackToEnvironment)
{
    const char* saved = std::getenv("EPL_DATA_DIR");
    const std::string saved_value = saved ? saved : "";
    unsetenv("EPL_DATA_DIR");
    EXPECT_EQ(config_key_error("[data]\nsource = cifar10\n"), "data.path");
    setenv("EPL_DATA_DIR", "/data/cifar", 1);
    EXPECT_EQ(parse_config("[data]\nsource = cifar10\n", "inline").data.path, "/data/cifar");
    EXPECT_EQ(parse_config("[data]\nsource = cifar10\npath = /elsewhere\n", "inline").data.path, "/elsewhere");
    if (saved) setenv("EPL_DATA_DIR", saved_value.c_str(), 1);
    else unsetenv("EPL_DATA_DIR");
}

TEST(Config, LoadReportsUnreadableFile)
{
    try {
        load_config("/nonexistent/exp.cfg");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "--config");
    }
}

TEST(Config, CanonicalFormIgnoresLayout)
{
    const auto a = parse_config(kSmall, "a");
    const std::string reordered = R"(
[run]
seeds=1,2
[imp]
; full-line comments are ignored
rewind = 0,2
rounds = 2
[pretrain]
rewind = 2
epochs = 0,1
[perturb]
rounds = 1
rewind = 2
specs = none,noise:n=1.0,shuffle:scope=layer
[telemetry]
sparse_every = 4
dense_every = 2
dense_until = 4
[train]
checkpoint_iters = 8,3,0
lr_drops = 1
lr = 5e-2
batch_size = 16
epochs = 2
[data]
synthetic_seed = 3
synthetic_size = 8
synthetic_classes = 4
synthetic_eval = 32
synthetic_train = 64
)";
    const auto b = parse_config(reordered, "b");
    EXPECT_EQ(a.canonical(), b.canonical());
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 64u);

    // every line is key=value, sorted, and the resolved input shape is recorded
    std::istringstream lines(a.canonical());
    std::string line, prev;
    while (std::getline(lines, line)) {
        EXPECT_NE(line.find('='), std::string::npos) << line;
        EXPECT_LT(prev, line);
        prev = line;
    }
    EXPECT_NE(a.canonical().find("model.input=3x8x8\n"), std::string::npos);
    EXPECT_NE(a.canonical().find("model.classes=4\n"), std::string::npos);

    const auto c = parse_config(small("train", "weight_decay", "0.0005"), "c");
    EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, ShippedExamplesParse)
{
    setenv("EPL_DATA_DIR", "/data/cifar", 0);
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(EPL_EXAMPLE_CONFIGS)) {
        const auto cfg = load_config(entry.path());
        for (const auto* key : {"imp.rewind", "perturb.rewind"}) {
            const auto& list = std::string(key) == "imp.rewind" ? cfg.imp.rewind : cfg.perturb.rewind;
            EXPECT_NO_THROW(cfg.check_rewind(key, list)) << entry.path();
        }
        ++n;
    }
    EXPECT_EQ(n, 2u);
}

TEST(Sha256, KnownDigests)
{
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cli, UsageAndConfigErrors)
{
    const auto dir = scratch("usage");
    EXPECT_EQ(cli({}).code, kExitConfig);
    EXPECT_EQ(cli({"train"}).code, kExitConfig);
    EXPECT_EQ(cli({"--help"}).code, kExitOk);
    EXPECT_EQ(cli({"train", "--config", (dir / "missing.cfg").string()}).code, kExitConfig);
    const auto bad = write_config(dir, small("train", "learning_rate", "0.1"));
    const auto o = cli({"train", "--config", bad.string(), "--out-dir", (dir / "runs").string()});
    EXPECT_EQ(o.code, kExitConfig);
    EXPECT_NE(o.err.find("train.learning_rate"), std::string::npos) << o.err;
    EXPECT_EQ(cli({"train", "--config", bad.string(), "--seed", "1", "--seeds", "1,2"}).code, kExitConfig);
    for (const char* cmd : {"imp", "perturb", "pretrain"}) {
        const auto late = write_config(dir, small(cmd, "rewind", "9"));
        const auto r = cli({cmd, "--config", late.string(), "--out-dir", (dir / "runs").string()});
        EXPECT_EQ(r.code, kExitConfig) << cmd;
        EXPECT_NE(r.err.find(std::string(cmd) + ".rewind"), std::string::npos) << r.err;
    }
}

TEST(Cli, MissingUpstreamArtifacts)
{
    const auto dir = scratch("upstream");
    const auto cfg = write_config(dir, kSmall);
    const auto runs = (dir / "runs").string();
    const auto p = cli({"perturb", "--config", cfg.string(), "--out-dir", runs});
    EXPECT_EQ(p.code, kExitMissingArtifact) << p.err;
    EXPECT_NE(p.err.find("init.epl"), std::string::npos) << p.err;
    EXPECT_EQ(cli({"verify", "--out-dir", runs}).code, kExitMissingArtifact);
    EXPECT_EQ(cli({"report", "scatter", "--out-dir", runs}).code, kExitMissingArtifact);
}

TEST(Cli, DivergenceExitCode)
{
    const auto dir = scratch("diverge");
    const auto cfg = write_config(dir, small("train", "lr", "1e8"));
    const auto o = cli({"train", "--config", cfg.string(), "--seed", "1", "--out-dir", (dir / "runs").string()});
    EXPECT_EQ(o.code, kExitDivergence) << o.err;
    const auto i = cli({"imp", "--config", cfg.string(), "--seed", "1", "--out-dir", (dir / "runs").string()});
    EXPECT_EQ(i.code, kExitDivergence) << i.err;
}

TEST(Cli, TrainIsByteDeterministicAndVerifiable)
{
    const auto dir = scratch("determinism");
    const auto cfg = write_config(dir, kSmall);
    const auto a = dir / "a", b = dir / "b";
    ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out-dir", a.string()}).code, kExitOk);
    ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out-dir", b.string(), "--workers", "2"}).code, kExitOk);
    for (auto seed : {"seed-1", "seed-2"}) {
        std::size_t checkpoints = 0;
        for (const auto& entry : fs::directory_iterator(a / "train" / seed)) {
            const auto name = entry.path().filename();
            EXPECT_EQ(read_bytes(entry.path()), read_bytes(b / "train" / seed / name)) << name;
            if (name.string().starts_with("ckpt-")) ++checkpoints;
        }
        EXPECT_EQ(checkpoints, 3u);
        EXPECT_EQ(load_checkpoint(a / "train" / seed / "final.epl").iteration(), 8u);
    }
    EXPECT_NE(read_bytes(a / "train/seed-1/final.epl"), read_bytes(a / "train/seed-2/final.epl"));

    // The stored config is the canonical text without seeds, named by its digest.
    const auto records = read_manifest(a / "manifest.jsonl");
    ASSERT_EQ(records.size(), 2u);
    const std::string hash = records[0].json.at("config_hash");
    const std::string stored = read_bytes(a / "config" / (hash + ".cfg"));
    EXPECT_EQ(sha256_hex(stored), hash);
    EXPECT_NE(stored.find("run.seeds=\n"), std::string::npos);
    ASSERT_EQ(cli({"train", "--config", cfg.string(), "--seed", "7", "--out-dir", a.string()}).code, kExitOk);
    EXPECT_EQ(read_manifest(a / "manifest.jsonl").back().json.at("config_hash"), hash);

    EXPECT_EQ(cli({"verify", "--out-dir", a.string()}).code, kExitOk);
    EXPECT_EQ(cli({"report", "telemetry", "--out-dir", a.string()}).code, kExitOk);
    EXPECT_TRUE(fs::exists(a / "report" / "telemetry.csv"));

    // Flip one byte of a checkpoint: verify must fail.
    const auto victim = a / "train/seed-2/ckpt-000000003.epl";
    std::string bytes = read_bytes(victim);
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream(victim, std::ios::binary | std::ios::trunc) << bytes;
    const auto v = cli({"verify", "--out-dir", a.string()});
    EXPECT_EQ(v.code, kExitFailure);
    EXPECT_NE(v.out.find("ckpt-000000003.epl"), std::string::npos) << v.out;
}

TEST(Cli, ImpPerturbAndReportsChain)
{
    const auto dir = scratch("chain");
    const auto cfg = write_config(dir, kSmall);
    const auto runs = (dir / "runs").string();
    const auto imp = cli({"imp", "--config", cfg.string(), "--out-dir", runs});
    ASSERT_EQ(imp.code, kExitOk) << imp.err;
    for (auto k : {"k-0", "k-2"})
        for (auto f : {"init.epl", "rewind.epl", "mask-r0.epl", "mask-r2.epl", "final-r2.epl"})
            EXPECT_TRUE(fs::exists(dir / "runs/imp" / k / "seed-1" / f)) << k << "/" << f;
    EXPECT_EQ(load_checkpoint(dir / "runs/imp/k-2/seed-1/rewind.epl").iteration(), 2u);

    const auto pert = cli({"perturb", "--config", cfg.string(), "--out-dir", runs});
    ASSERT_EQ(pert.code, kExitOk) << pert.err;
    EXPECT_TRUE(fs::exists(dir / "runs/perturb/perturb.csv"));

    EXPECT_EQ(cli({"verify", "--out-dir", runs}).code, kExitOk);
    const auto curves = cli({"report", "sparsity-curves", "--out-dir", runs});
    EXPECT_EQ(curves.code, kExitOk) << curves.err;
    EXPECT_TRUE(fs::exists(dir / "runs/report/sparsity-curves.svg"));
    const auto scatter = cli({"report", "scatter", "--out-dir", runs});
    EXPECT_EQ(scatter.code, kExitOk) << scatter.err;
    EXPECT_TRUE(fs::exists(dir / "runs/report/scatter-stats.csv"));
}

TEST(Cli, PretrainWritesCurves)
{
    const auto dir = scratch("pretrain");
    const auto cfg = write_config(dir, kSmall);
    const auto o = cli({"pretrain", "--config", cfg.string(), "--seed", "1", "--out-dir", (dir / "runs").string()});
    ASSERT_EQ(o.code, kExitOk) << o.err;
    EXPECT_TRUE(fs::exists(dir / "runs/pretrain/rotation/e1/curves.csv"));
    EXPECT_NE(o.out.find("ratio"), std::string::npos);
}
