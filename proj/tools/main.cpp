// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/errors.hpp"
#include "lumbar_align/experiment.hpp"
#include "lumbar_align/synth.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace la = lumbar_align;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string manifest;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Key-value configuration file");
    cmd->add_option("--manifest", flags.manifest, "Manifest (JSON lines)");
    cmd->add_option("--seed", flags.seed, "Global seed");
    cmd->add_option("--epochs", flags.epochs, "Pretraining epochs (train.epochs)");
    cmd->add_option("--set", flags.overrides, "Override a configuration key (key=value), repeatable");
}

void apply_common(la::ExperimentConfig& config, const CommonFlags& flags) {
    if (!flags.config_path.empty()) {
        config.apply_file(flags.config_path);
    }
    for (const auto& kv : flags.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw la::InputError("--set expects key=value, got '" + kv + "'");
        }
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!flags.manifest.empty()) {
        config.manifest = std::filesystem::absolute(flags.manifest).lexically_normal().string();
    }
    if (flags.seed) {
        config.seed = *flags.seed;
        config.ablate_seeds = {*flags.seed};
    }
    if (flags.epochs) {
        config.train.epochs = *flags.epochs;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Soft-label contrastive image-report pretraining for lumbar MRI, desk scale"};
    app.require_subcommand(1);

    la::SynthConfig synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic paired dataset");
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--pairs", synth.n_pairs, "Number of image-report pairs");
    synth_cmd->add_option("--ratio", synth.class_ratio, "Fraction of LBP pairs, in (0, 1)");
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");
    synth_cmd->add_option("--resolution", synth.resolution, "Image side length in pixels");
    synth_cmd->add_flag("--image-files", synth.write_image_files, "Write PGM files instead of inline specs");

    CommonFlags pretrain_flags;
    std::string pretrain_out;
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Contrastive pretraining");
    add_common(pretrain_cmd, pretrain_flags);
    pretrain_cmd->add_option("--out", pretrain_out, "Output directory")->required();

    CommonFlags probe_flags;
    std::string probe_out;
    std::string checkpoint;
    std::string split = "test";
    bool allow_train = false;
    auto* probe_cmd = app.add_subcommand("probe", "Linear probe on frozen image embeddings");
    add_common(probe_cmd, probe_flags);
    probe_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by pretrain")->required();
    probe_cmd->add_option("--split", split, "Evaluation split: val or test");
    probe_cmd->add_flag("--allow-train", allow_train, "Permit --split train");
    probe_cmd->add_option("--out", probe_out, "Output directory")->required();

    CommonFlags ablate_flags;
    std::string ablate_out;
    la::AblateOptions ablate_options;
    auto* ablate_cmd = app.add_subcommand("ablate", "Encoder x projection-head ablation grid");
    add_common(ablate_cmd, ablate_flags);
    ablate_cmd->add_option("--out", ablate_out, "Output directory")->required();
    ablate_cmd->add_flag("--resume", ablate_options.resume, "Skip cells with a matching completed result");
    ablate_cmd->add_option("--jobs", ablate_options.jobs, "Grid cells run concurrently");

    std::string report_dir;
    auto* report_cmd = app.add_subcommand("report", "Summarise a run directory into report.md");
    report_cmd->add_option("run_dir", report_dir, "Output directory of pretrain, probe or ablate")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd) {
            la::run_synth_data(synth, synth_out, std::cout);
        } else if (*pretrain_cmd) {
            la::ExperimentConfig config;
            apply_common(config, pretrain_flags);
            la::run_pretrain(config, pretrain_out, std::cout);
        } else if (*probe_cmd) {
            if (split == "train" && !allow_train) {
                std::cerr << "error: --split must be val or test (pass --allow-train to probe the train split)\n"
                          << probe_cmd->help();
                return 1;
            }
            la::ExperimentConfig config;
            const auto loaded = la::load_checkpoint(checkpoint);
            if (loaded.experiment.is_object() && loaded.experiment.contains("config")) {
                config.apply_text(loaded.experiment["config"].get<std::string>(), checkpoint + " (stored config)");
            }
            apply_common(config, probe_flags);
            la::run_probe(config, checkpoint, split, probe_out, std::cout);
        } else if (*ablate_cmd) {
            la::ExperimentConfig config;
            apply_common(config, ablate_flags);
            const auto rows = la::run_ablate(config, ablate_out, ablate_options, std::cout);
            std::size_t failed = 0;
            for (const auto& r : rows) {
                failed += r.status.rfind("failed", 0) == 0 ? 1 : 0;
            }
            std::cout << "grid: " << rows.size() << " cells, " << failed << " failed\n";
        } else if (*report_cmd) {
            std::cout << la::run_report(report_dir);
        }
    } catch (const la::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
