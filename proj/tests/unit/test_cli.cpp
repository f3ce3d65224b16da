// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/errors.hpp"
#include "lumbar_align/experiment.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace lumbar_align;
using test_support::TempDir;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RunResult {
    int code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& workdir) {
    const fs::path log = workdir / "cli_output.txt";
    const std::string cmd = std::string("\"") + LUMBAR_ALIGN_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_file(log);
    return r;
}

const std::string kTinyModel =
    "--set data.resolution=16 --set image.width=4 --set image.depth=2 --set image.output_dim=16 "
    "--set text.embed_dim=8 --set text.output_dim=16 --set proj.dim=8 --set train.batch_size=8 "
    "--set probe.epochs=5";

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = std::make_unique<TempDir>("cli");
        const RunResult r = run_cli("synth-data --out \"" + (root() / "data").string() + "\" --pairs 48 --resolution 16",
                                    root());
        ASSERT_EQ(r.code, 0) << r.output;
        manifest_ = root() / "data" / "manifest.jsonl";
    }
    const fs::path& root() const { return dir_->path(); }
    std::string tiny(const std::string& cmd, const std::string& out, const std::string& extra = "") const {
        return cmd + " --manifest \"" + manifest_.string() + "\" " + kTinyModel + " --out \"" + (root() / out).string() +
               "\" " + extra;
    }

    std::unique_ptr<TempDir> dir_;
    fs::path manifest_;
};

} // namespace

TEST(ConfigTest, UnknownKeysAreRejected) {
    ExperimentConfig c;
    EXPECT_THROW(c.set("train.learning_rate", "1"), InputError);
    EXPECT_THROW(c.get("nope"), InputError);
    EXPECT_THROW(c.set("train.epochs", "many"), InputError);
    EXPECT_THROW(c.set("proj.mode", "deep"), InputError);
}

TEST(ConfigTest, LineNumbersInErrors) {
    ExperimentConfig c;
    try {
        c.apply_text("# header\ntrain.epochs = 3\n\nbogus.key = 1\n", "exp.cfg");
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("exp.cfg:4"), std::string::npos) << e.what();
    }
    EXPECT_EQ(c.train.epochs, 3u);
    EXPECT_THROW(c.apply_text("just words\n"), InputError);
}

TEST(ConfigTest, TextRoundTripCoversEveryKey) {
    ExperimentConfig a;
    a.apply_text("seed = 99\nproj.mode = nonlinear\nproj.dim = 512\nablate.dims = 256, 1024\nimage.style = patch\n"
                 "train.tau = 0.5 # comment\n");
    ExperimentConfig b;
    b.apply_text(a.to_text());
    for (const auto& key : config_keys()) {
        EXPECT_EQ(a.get(key), b.get(key)) << key;
        EXPECT_NE(a.to_text().find(key + " = "), std::string::npos) << key;
    }
    EXPECT_EQ(b.ablate_dims, (std::vector<std::size_t>{256, 1024}));
    EXPECT_EQ(b.head_mode, HeadMode::nonlinear);
}

TEST(ConfigTest, DerivedConfigsFollowSettings) {
    ExperimentConfig c;
    c.apply_text("manifest = m.jsonl\nproj.mode = none\nimage.output_dim = 64\ntext.output_dim = 64\ntrain.alpha = 0.25\n");
    const ModelConfig m = c.model_config(40);
    EXPECT_EQ(m.text.vocab_size, 40u);
    EXPECT_EQ(m.image_head.mode, HeadMode::none);
    EXPECT_EQ(m.image_head.effective_dim(), 64u);
    EXPECT_NE(m.image.seed, m.text.seed);
    EXPECT_EQ(c.train_config().alpha, 0.25);
    EXPECT_NO_THROW(c.validate());
    c.set("image.output_dim", "32");
    EXPECT_ANY_THROW(c.validate());
}

TEST(ConfigTest, EnvironmentSeedIsFallback) {
    ::setenv("LUMBAR_ALIGN_SEED", "1234", 1);
    ExperimentConfig c;
    EXPECT_EQ(c.seed, 1234u);
    EXPECT_EQ(c.ablate_seeds, (std::vector<std::uint64_t>{1234}));
    c.apply_text("seed = 5\n");
    EXPECT_EQ(c.seed, 5u);
    ::unsetenv("LUMBAR_ALIGN_SEED");
    EXPECT_EQ(ExperimentConfig().seed, 7u);
}

TEST(ConfigTest, FilePathsResolveAgainstConfigDirectory) {
    TempDir dir("cfgfile");
    fs::create_directories(dir.path() / "cfg");
    std::ofstream(dir.path() / "cfg" / "a.cfg") << "manifest = ../data/m.jsonl\ndata.synonyms = syn.txt\n";
    ExperimentConfig c;
    c.apply_file(dir.path() / "cfg" / "a.cfg");
    EXPECT_EQ(fs::path(c.manifest), (dir.path() / "data" / "m.jsonl").lexically_normal());
    EXPECT_EQ(fs::path(c.synonyms), (dir.path() / "cfg" / "syn.txt").lexically_normal());
    EXPECT_THROW(c.apply_file(dir.path() / "missing.cfg"), InputError);
}

TEST(ConfigTest, ShippedConfigsParse) {
    const fs::path root = LUMBAR_ALIGN_SOURCE_DIR;
    for (const char* name : {"desk.cfg", "smoke.cfg"}) {
        ExperimentConfig c;
        ASSERT_NO_THROW(c.apply_file(root / "configs" / name)) << name;
        EXPECT_NO_THROW(c.validate()) << name;
    }
    ExperimentConfig desk;
    desk.apply_file(root / "configs" / "desk.cfg");
    EXPECT_EQ(desk.synonym_table().synonyms("disc"), SynonymTable::builtin().synonyms("disc"));
}

TEST(AblationGridTest, FourteenCellsWithDashForNoHead) {
    ExperimentConfig c;
    const auto cells = ablation_cells(c);
    ASSERT_EQ(cells.size(), 14u);
    std::set<std::string> keys;
    for (const auto& cell : cells) {
        keys.insert(cell.key());
        if (cell.mode == HeadMode::none) {
            EXPECT_EQ(cell.head_dim_text(), "-");
        } else {
            EXPECT_EQ(cell.head_dim_text(), std::to_string(cell.dim));
        }
    }
    EXPECT_EQ(keys.size(), 14u);
    c.ablate_seeds = {1, 2};
    EXPECT_EQ(ablation_cells(c).size(), 28u);
}

TEST(AblationGridTest, CsvRoundTrip) {
    TempDir dir("grid");
    AblationRow a;
    a.cell = {ImageStyle::patch, HeadMode::linear, 512, 7};
    a.report = metrics_from_confusion({5, 1, 2, 3});
    a.status = "ok";
    AblationRow b;
    b.cell = {ImageStyle::conv, HeadMode::none, 0, 7};
    b.status = "failed: bad, very bad";
    write_grid_csv(dir.path() / "grid.csv", {a, b});
    const std::string text = read_file(dir.path() / "grid.csv");
    EXPECT_EQ(text.substr(0, text.find('\n')),
              "encoder,head_mode,head_dim,seed,accuracy,precision,recall,f1,macro_f1,tp,fp,fn,tn,status");
    EXPECT_NE(text.find("conv,none,-,7"), std::string::npos);
    const auto rows = read_grid_csv(dir.path() / "grid.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].cell.key(), a.cell.key());
    EXPECT_EQ(rows[0].report.confusion.fn, 2u);
    EXPECT_NEAR(rows[0].report.macro_f1, a.report.macro_f1, 1e-12);
    EXPECT_EQ(rows[1].status.rfind("failed", 0), 0u);
}

TEST_F(CliTest, SynthDataMatchesRequestedCounts) {
    const RunResult r = run_cli("synth-data --out \"" + (root() / "s1").string() + "\" --pairs 512 --ratio 0.85 --seed 7",
                                root());
    ASSERT_EQ(r.code, 0) << r.output;
    const std::string manifest = read_file(root() / "s1" / "manifest.jsonl");
    EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 512);
    const auto counts = class_counts(load_manifest(root() / "s1" / "manifest.jsonl"));
    EXPECT_NEAR(static_cast<double>(counts[kClassLbp]), 435.0, 1.0);
    EXPECT_NEAR(static_cast<double>(counts[kClassNoFinding]), 77.0, 1.0);
    EXPECT_NE(r.output.find("Train"), std::string::npos) << r.output;

    ASSERT_EQ(run_cli("synth-data --out \"" + (root() / "s2").string() + "\" --pairs 512 --ratio 0.85 --seed 7", root()).code,
              0);
    EXPECT_EQ(read_file(root() / "s2" / "manifest.jsonl"), manifest);
}

TEST_F(CliTest, InvalidRatioFails) {
    const RunResult r = run_cli("synth-data --out \"" + (root() / "bad").string() + "\" --ratio 1.5", root());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.output.find("ratio"), std::string::npos) << r.output;
}

TEST_F(CliTest, ZeroEpochPretrainWritesInitialCheckpoint) {
    const RunResult r = run_cli(tiny("pretrain", "zero", "--epochs 0"), root());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(root() / "zero" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(root() / "zero" / "config.cfg"));
    const std::string log = read_file(root() / "zero" / "loss_log.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1);
}

TEST_F(CliTest, MissingManifestExitsOne) {
    const RunResult r = run_cli("pretrain --manifest \"" + (root() / "none.jsonl").string() + "\" --out \"" +
                                    (root() / "x").string() + "\"",
                                root());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("not found"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownOverrideExitsOne) {
    const RunResult r = run_cli(tiny("pretrain", "x", "--set train.speed=3"), root());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("train.speed"), std::string::npos) << r.output;
}

TEST_F(CliTest, DivergentTrainingExitsTwo) {
    const RunResult r = run_cli(tiny("pretrain", "nan", "--epochs 3 --set train.lr=1e200 --set train.warmup_fraction=0"),
                                root());
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_TRUE(fs::exists(root() / "nan" / "nonfinite_batch.txt")) << r.output;
}

TEST_F(CliTest, PretrainProbeReportPipeline) {
    ASSERT_EQ(run_cli(tiny("pretrain", "run", "--epochs 2"), root()).code, 0);
    const fs::path ckpt = root() / "run" / "checkpoint.bin";

    const RunResult p1 = run_cli("probe --checkpoint \"" + ckpt.string() + "\" --out \"" + (root() / "p1").string() + "\"",
                                 root());
    ASSERT_EQ(p1.code, 0) << p1.output;
    EXPECT_NE(p1.output.find("confusion"), std::string::npos) << p1.output;
    const RunResult p2 = run_cli("probe --checkpoint \"" + ckpt.string() + "\" --out \"" + (root() / "p2").string() + "\"",
                                 root());
    ASSERT_EQ(p2.code, 0);
    EXPECT_EQ(read_file(root() / "p1" / "metrics.json"), read_file(root() / "p2" / "metrics.json"));
    EXPECT_TRUE(fs::exists(root() / "p1" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(root() / "p1" / "config.cfg"));

    const RunResult train_split = run_cli(
        "probe --checkpoint \"" + ckpt.string() + "\" --split train --out \"" + (root() / "p3").string() + "\"", root());
    EXPECT_EQ(train_split.code, 1);
    EXPECT_NE(train_split.output.find("--allow-train"), std::string::npos);
    EXPECT_EQ(run_cli("probe --checkpoint \"" + ckpt.string() + "\" --split train --allow-train --out \"" +
                          (root() / "p3").string() + "\"",
                      root())
                  .code,
              0);

    std::ofstream(root() / "corrupt.bin") << "garbage";
    EXPECT_EQ(run_cli("probe --checkpoint \"" + (root() / "corrupt.bin").string() + "\" --out \"" +
                          (root() / "p4").string() + "\"",
                      root())
                  .code,
              1);

    const RunResult rep = run_cli("report \"" + (root() / "run").string() + "\"", root());
    ASSERT_EQ(rep.code, 0) << rep.output;
    EXPECT_TRUE(fs::exists(root() / "run" / "report.md"));
    EXPECT_TRUE(fs::exists(root() / "run" / "plot_loss_curve.csv"));
}

TEST_F(CliTest, ResolvedConfigReproducesRun) {
    ASSERT_EQ(run_cli(tiny("pretrain", "a", "--epochs 2"), root()).code, 0);
    const RunResult b = run_cli("pretrain --config \"" + (root() / "a" / "config.cfg").string() + "\" --out \"" +
                                    (root() / "b").string() + "\"",
                                root());
    ASSERT_EQ(b.code, 0) << b.output;
    EXPECT_EQ(read_file(root() / "a" / "checkpoint.bin"), read_file(root() / "b" / "checkpoint.bin"));
    EXPECT_EQ(read_file(root() / "a" / "loss_log.csv"), read_file(root() / "b" / "loss_log.csv"));
    EXPECT_EQ(read_file(root() / "a" / "config.cfg"), read_file(root() / "b" / "config.cfg"));
}

TEST_F(CliTest, AblateResumeSkipsCompletedCells) {
    const std::string grid = "--epochs 1 --set ablate.styles=conv --set ablate.dims=8,16 --set probe.epochs=2";
    const RunResult first = run_cli(tiny("ablate", "grid", grid), root());
    ASSERT_EQ(first.code, 0) << first.output;
    const auto rows = read_grid_csv(root() / "grid" / "grid.csv");
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& row : rows) {
        EXPECT_EQ(row.status, "ok") << row.cell.key();
    }
    EXPECT_TRUE(fs::exists(root() / "grid" / "plot_no_head.csv"));
    EXPECT_TRUE(fs::exists(root() / "grid" / "config.cfg"));
    const std::string before = read_file(root() / "grid" / "grid.csv");

    const RunResult second = run_cli(tiny("ablate", "grid", grid + " --resume"), root());
    ASSERT_EQ(second.code, 0) << second.output;
    EXPECT_NE(second.output.find("skip"), std::string::npos) << second.output;
    EXPECT_EQ(read_file(root() / "grid" / "grid.csv"), before);
}
