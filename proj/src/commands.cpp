// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/experiment.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/rng.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace lumbar_align {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

std::vector<Tensor> preprocess_images(const std::vector<Sample>& samples, const fs::path& base_dir,
                                      std::size_t resolution, const NormStats& stats) {
    std::map<std::string, Tensor> cache;
    std::vector<Tensor> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = cache.find(s.image_ref);
        if (it == cache.end()) {
            it = cache.emplace(s.image_ref, preprocess_image(load_image(s.image_ref, base_dir), resolution, stats))
                     .first;
        }
        out.push_back(it->second);
    }
    return out;
}

std::vector<std::size_t> class_indices(const std::vector<Sample>& samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back(s.class_index());
    }
    return out;
}

std::uint64_t text_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
    config.validate();
    const fs::path manifest(config.manifest);
    const auto samples = load_manifest(manifest);
    if (samples.empty()) {
        throw InputError("manifest is empty: " + manifest.string());
    }
    PreparedData data;
    data.base_dir = manifest.parent_path();
    data.splits = prepare_splits(samples, config.prepare_options(), config.synonym_table());
    return data;
}

std::string split_summary(const std::vector<Sample>& all, const ExperimentConfig& config) {
    PrepareOptions raw = config.prepare_options();
    const DatasetSplits plain = stratified_split(all, raw.split);
    std::vector<Sample> upsampled = plain.train;
    if (config.upsample) {
        upsampled = upsample_minority(plain.train, derive_seed(config.seed, "upsample"));
    }
    struct Row {
        std::string name;
        std::array<std::size_t, kNumClasses> counts;
    };
    const std::vector<Row> rows{{"Train", class_counts(plain.train)},
                                {"Train (upsampled)", class_counts(upsampled)},
                                {"Validation", class_counts(plain.val)},
                                {"Test", class_counts(plain.test)},
                                {"All", class_counts(all)}};
    std::ostringstream out;
    out << std::left << std::setw(20) << "Split" << std::right << std::setw(8) << "LBP" << std::setw(12)
        << "No Finding" << std::setw(8) << "Total" << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(20) << r.name << std::right << std::setw(8) << r.counts[kClassLbp]
            << std::setw(12) << r.counts[kClassNoFinding] << std::setw(8)
            << r.counts[kClassLbp] + r.counts[kClassNoFinding] << '\n';
    }
    return out.str();
}

SynthOutcome run_synth_data(const SynthConfig& synth, const fs::path& out_dir, std::ostream& log) {
    SynthOutcome outcome;
    outcome.manifest = synth_generate(synth, out_dir);
    const auto samples = load_manifest(outcome.manifest);
    outcome.counts = class_counts(samples);

    ExperimentConfig defaults;
    defaults.seed = synth.seed;
    defaults.manifest = outcome.manifest.string();
    const std::string table = split_summary(samples, defaults);

    nlohmann::ordered_json stats;
    stats["pairs"] = samples.size();
    stats["class_ratio"] = synth.class_ratio;
    stats["resolution"] = synth.resolution;
    stats["seed"] = synth.seed;
    stats["counts"] = {{"LBP", outcome.counts[kClassLbp]}, {"No Finding", outcome.counts[kClassNoFinding]}};
    write_text(out_dir / "stats.json", stats.dump(2) + "\n");

    log << "wrote " << outcome.manifest.string() << " (" << samples.size() << " pairs)\n" << table;
    return outcome;
}

PretrainOutcome run_pretrain(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
    const PreparedData data = prepare_data(config);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.cfg", config.to_text());

    const auto& train = data.splits.train;
    const auto& val = data.splits.val;
    if (train.size() < 2) {
        throw InputError("training split has fewer than two pairs");
    }
    Vocabulary vocab = build_vocabulary(train);
    const NormStats stats = train_norm_stats(train, data.base_dir, config.resolution);
    save_norm_stats(out_dir / "norm_stats.json", stats);

    Model model(config.model_config(vocab.size()), vocab, stats);
    const std::size_t max_tokens = model.config().text.max_tokens;
    const EncodedDataset train_data = encode_dataset(train, data.base_dir, config.resolution, stats, vocab, max_tokens);
    const EncodedDataset val_data = encode_dataset(val, data.base_dir, config.resolution, stats, vocab, max_tokens);

    log << "pretrain: " << train.size() << " train pairs, " << val.size() << " val pairs, "
        << config.train.epochs << " epochs\n";
    PretrainOutcome outcome;
    try {
        outcome.result = pretrain(model, train_data, val_data, config.train_config(), [&](const EpochLogRow& row) {
            log << "epoch " << row.epoch << " train " << fixed(row.train_total) << " val "
                << (std::isfinite(row.val_total) ? fixed(row.val_total) : std::string("nan")) << '\n';
        });
    } catch (const NonFiniteLossError& e) {
        const fs::path dump = out_dir / "nonfinite_batch.txt";
        std::string ids;
        for (const auto& id : e.batch_ids()) {
            ids += id + "\n";
        }
        write_text(dump, ids);
        throw NumericError(std::string(e.what()) + "; batch ids written to " + dump.string());
    }

    outcome.loss_log = out_dir / "loss_log.csv";
    write_batch_log(outcome.loss_log, outcome.result.batches);
    write_epoch_log(out_dir / "epochs.csv", outcome.result.epochs);

    nlohmann::json extra{{"config", config.to_text()}, {"selected", "last"}, {"epochs", outcome.result.epochs.size()}};
    outcome.last_checkpoint = out_dir / "last.bin";
    save_checkpoint(outcome.last_checkpoint, model, extra);

    load_values(model.parameters(), outcome.result.best_values);
    extra["selected"] = "best_val";
    extra["best_epoch"] = outcome.result.best_epoch;
    outcome.checkpoint = out_dir / "checkpoint.bin";
    save_checkpoint(outcome.checkpoint, model, extra);
    log << "wrote " << outcome.checkpoint.string() << " (best epoch " << outcome.result.best_epoch << ")\n";
    return outcome;
}

ProbeOutcome probe_model(Model& model, const ExperimentConfig& config, const PreparedData& data,
                         const std::vector<Sample>& eval) {
    ImageEncoder& encoder = model.image_encoder();
    encoder.freeze();
    const auto before = snapshot_values(encoder.parameters());

    const std::size_t resolution = model.config().image.input_resolution;
    const auto train_images = preprocess_images(data.splits.train, data.base_dir, resolution, model.norm_stats());
    const auto eval_images = preprocess_images(eval, data.base_dir, resolution, model.norm_stats());
    const Tensor train_emb = extract_embeddings(encoder, train_images);
    const Tensor eval_emb = extract_embeddings(encoder, eval_images);
    const auto train_classes = class_indices(data.splits.train);
    const auto eval_classes = class_indices(eval);

    const LinearProbe probe = train_probe(train_emb, train_classes, config.probe_config());
    ProbeOutcome outcome;
    outcome.report = evaluate(probe, eval_emb, eval_classes);
    outcome.train_report = evaluate(probe, train_emb, train_classes);
    if (snapshot_values(encoder.parameters()) != before) {
        throw GraphError("probe: frozen encoder parameters changed");
    }
    return outcome;
}

ProbeOutcome run_probe(const ExperimentConfig& config, const fs::path& checkpoint, const std::string& split,
                       const fs::path& out_dir, std::ostream& log) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    if (loaded.model.config().image.input_resolution != config.resolution) {
        throw InputError("data.resolution does not match the checkpoint");
    }
    const PreparedData data = prepare_data(config);
    const std::vector<Sample>* eval = nullptr;
    if (split == "val") {
        eval = &data.splits.val;
    } else if (split == "test") {
        eval = &data.splits.test;
    } else if (split == "train") {
        eval = &data.splits.train;
    } else {
        throw InputError("unknown split '" + split + "' (expected val or test)");
    }
    if (eval->empty()) {
        throw InputError("split '" + split + "' is empty");
    }
    const ProbeOutcome outcome = probe_model(loaded.model, config, data, *eval);

    fs::create_directories(out_dir);
    write_text(out_dir / "config.cfg", config.to_text());
    nlohmann::ordered_json j;
    j["split"] = split;
    j["checkpoint"] = checkpoint.string();
    j["metrics"] = to_json(outcome.report);
    j["train_metrics"] = to_json(outcome.train_report);
    write_text(out_dir / "metrics.json", j.dump(2) + "\n");
    write_text(out_dir / "metrics.csv", "split," + metrics_csv_header() + "\n" + split + "," +
                                             metrics_csv_row(outcome.report) + "\n");

    const auto& r = outcome.report;
    const auto& c = r.confusion;
    log << "split " << split << ": accuracy " << fixed(r.accuracy) << " precision " << fixed(r.precision)
        << " recall " << fixed(r.recall) << " f1 " << fixed(r.f1) << " macro_f1 " << fixed(r.macro_f1) << '\n'
        << "confusion (LBP positive)\n"
        << "                 pred LBP  pred NoFinding\n"
        << "  true LBP       " << std::setw(8) << c.tp << "  " << std::setw(13) << c.fn << '\n'
        << "  true NoFinding " << std::setw(8) << c.fp << "  " << std::setw(13) << c.tn << '\n';
    return outcome;
}

std::string AblationCell::key() const {
    return to_string(style) + "-" + to_string(mode) + "-" + head_dim_text() + "-s" + std::to_string(seed);
}

std::string AblationCell::head_dim_text() const { return mode == HeadMode::none ? "-" : std::to_string(dim); }

std::vector<AblationCell> ablation_cells(const ExperimentConfig& config) {
    std::vector<AblationCell> cells;
    for (auto seed : config.ablate_seeds) {
        for (auto style : config.ablate_styles) {
            for (auto mode : config.ablate_modes) {
                if (mode == HeadMode::none) {
                    cells.push_back({style, mode, 0, seed});
                    continue;
                }
                for (auto dim : config.ablate_dims) {
                    cells.push_back({style, mode, dim, seed});
                }
            }
        }
    }
    return cells;
}

namespace {

ExperimentConfig cell_config(const ExperimentConfig& base, const AblationCell& cell) {
    ExperimentConfig c = base;
    c.image.style = cell.style;
    c.head_mode = cell.mode;
    if (cell.mode != HeadMode::none) {
        c.head_dim = cell.dim;
    }
    c.seed = cell.seed;
    return c;
}

AblationRow run_cell(const ExperimentConfig& base, const AblationCell& cell, const fs::path& cell_dir, bool resume) {
    const ExperimentConfig config = cell_config(base, cell);
    const std::string config_hash = hex(text_hash(cell.key() + "\n" + config.to_text()));
    const fs::path result_path = cell_dir / "result.json";
    AblationRow row{cell, {}, "ok"};
    if (resume && fs::exists(result_path)) {
        try {
            const auto j = nlohmann::json::parse(read_text(result_path));
            if (j.at("hash").get<std::string>() == config_hash && j.at("status").get<std::string>() == "ok") {
                const auto& m = j.at("metrics");
                row.report.accuracy = m.at("accuracy").get<double>();
                row.report.precision = m.at("precision").get<double>();
                row.report.recall = m.at("recall").get<double>();
                row.report.f1 = m.at("f1").get<double>();
                row.report.macro_precision = m.at("macro_precision").get<double>();
                row.report.macro_recall = m.at("macro_recall").get<double>();
                row.report.macro_f1 = m.at("macro_f1").get<double>();
                const auto& c = m.at("confusion");
                row.report.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                                        c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()};
                row.status = "skipped";
                return row;
            }
        } catch (const std::exception&) {
            // Unreadable result; rerun the cell.
        }
    }
    try {
        fs::create_directories(cell_dir);
        std::ofstream cell_log(cell_dir / "log.txt");
        const auto outcome = run_pretrain(config, cell_dir, cell_log);
        LoadedCheckpoint loaded = load_checkpoint(outcome.checkpoint);
        const PreparedData data = prepare_data(config);
        row.report = probe_model(loaded.model, config, data, data.splits.test).report;
    } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
    }
    nlohmann::ordered_json j;
    j["key"] = cell.key();
    j["hash"] = config_hash;
    j["status"] = row.status;
    j["metrics"] = to_json(row.report);
    write_text(result_path, j.dump(2) + "\n");
    return row;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') {
            c = ';';
        }
    }
    return s;
}

} // namespace

std::vector<AblationRow> run_ablate(const ExperimentConfig& config, const fs::path& out_dir,
                                    const AblateOptions& options, std::ostream& log) {
    config.validate();
    fs::create_directories(out_dir);
    write_text(out_dir / "config.cfg", config.to_text());
    const auto cells = ablation_cells(config);
    std::vector<AblationRow> rows(cells.size());

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            rows[i] = run_cell(config, cells[i], out_dir / "cells" / cells[i].key(), options.resume);
            std::lock_guard lock(log_mutex);
            log << "[" << (i + 1) << "/" << cells.size() << "] " << cells[i].key() << ": " << rows[i].status
                << " accuracy " << fixed(rows[i].report.accuracy) << " macro_f1 " << fixed(rows[i].report.macro_f1)
                << '\n';
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    write_grid_csv(out_dir / "grid.csv", rows);
    write_plot_data(out_dir, rows);
    return rows;
}

void write_grid_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "encoder,head_mode,head_dim,seed,accuracy,precision,recall,f1,macro_f1,tp,fp,fn,tn,status\n";
    for (const auto& r : rows) {
        const auto& m = r.report;
        out << to_string(r.cell.style) << ',' << to_string(r.cell.mode) << ',' << r.cell.head_dim_text() << ','
            << r.cell.seed << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
            << m.macro_f1 << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ','
            << m.confusion.tn << ',' << csv_safe(r.status == "skipped" ? "ok" : r.status) << '\n';
    }
    write_text(path, out.str());
}

std::vector<AblationRow> read_grid_csv(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    std::vector<AblationRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::istringstream fields(line);
        std::string item;
        while (std::getline(fields, item, ',')) {
            f.push_back(item);
        }
        if (f.size() != 14) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 14 columns");
        }
        try {
            AblationRow r;
            r.cell.style = parse_image_style(f[0]);
            r.cell.mode = parse_head_mode(f[1]);
            r.cell.dim = f[2] == "-" ? 0 : std::stoull(f[2]);
            r.cell.seed = std::stoull(f[3]);
            r.report.accuracy = std::stod(f[4]);
            r.report.precision = std::stod(f[5]);
            r.report.recall = std::stod(f[6]);
            r.report.f1 = std::stod(f[7]);
            r.report.macro_f1 = std::stod(f[8]);
            r.report.confusion = {std::stoull(f[9]), std::stoull(f[10]), std::stoull(f[11]), std::stoull(f[12])};
            r.status = f[13];
            rows.push_back(r);
        } catch (const std::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

void write_plot_data(const fs::path& out_dir, const std::vector<AblationRow>& rows) {
    std::ostringstream baseline;
    std::ostringstream linear;
    std::ostringstream nonlinear;
    baseline.precision(17);
    linear.precision(17);
    nonlinear.precision(17);
    baseline << "encoder,seed,accuracy,macro_f1,tp,fp,fn,tn\n";
    linear << "encoder,head_dim,seed,accuracy,macro_f1,tp,fp,fn,tn\n";
    nonlinear << "encoder,head_dim,seed,accuracy,macro_f1,tp,fp,fn,tn\n";
    for (const auto& r : rows) {
        const auto& m = r.report;
        const auto& c = m.confusion;
        std::ostringstream tail;
        tail.precision(17);
        tail << r.cell.seed << ',' << m.accuracy << ',' << m.macro_f1 << ',' << c.tp << ',' << c.fp << ',' << c.fn
             << ',' << c.tn << '\n';
        if (r.cell.mode == HeadMode::none) {
            baseline << to_string(r.cell.style) << ',' << tail.str();
        } else {
            auto& dst = r.cell.mode == HeadMode::linear ? linear : nonlinear;
            dst << to_string(r.cell.style) << ',' << r.cell.dim << ',' << tail.str();
        }
    }
    write_text(out_dir / "plot_no_head.csv", baseline.str());
    write_text(out_dir / "plot_linear_heads.csv", linear.str());
    write_text(out_dir / "plot_nonlinear_heads.csv", nonlinear.str());
}

std::string run_report(const fs::path& run_dir) {
    std::ostringstream out;
    bool found = false;
    if (fs::exists(run_dir / "grid.csv")) {
        found = true;
        const auto rows = read_grid_csv(run_dir / "grid.csv");
        write_plot_data(run_dir, rows);
        out << "## Ablation grid\n\n| encoder | head | dim | seed | accuracy | f1 | macro F1 | status |\n"
            << "|---|---|---|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            out << "| " << to_string(r.cell.style) << " | " << to_string(r.cell.mode) << " | "
                << r.cell.head_dim_text() << " | " << r.cell.seed << " | " << fixed(r.report.accuracy) << " | "
                << fixed(r.report.f1) << " | " << fixed(r.report.macro_f1) << " | " << r.status << " |\n";
        }
        out << '\n';
        std::map<std::string, std::pair<double, double>> best;
        for (const auto& r : rows) {
            if (r.status != "ok") {
                continue;
            }
            auto& [no_head, with_head] = best.try_emplace(to_string(r.cell.style), -1.0, -1.0).first->second;
            double& slot = r.cell.mode == HeadMode::none ? no_head : with_head;
            slot = std::max(slot, r.report.macro_f1);
        }
        for (const auto& [style, scores] : best) {
            out << "- " << style << ": no-head macro F1 " << fixed(scores.first) << ", best head macro F1 "
                << fixed(scores.second) << '\n';
        }
        out << '\n';
    }
    if (fs::exists(run_dir / "metrics.json")) {
        found = true;
        const auto j = nlohmann::json::parse(read_text(run_dir / "metrics.json"));
        const auto& m = j.at("metrics");
        out << "## Probe (" << j.value("split", std::string("?")) << ")\n\n| metric | value |\n|---|---|\n";
        for (const char* k : {"accuracy", "precision", "recall", "f1", "macro_precision", "macro_recall", "macro_f1"}) {
            out << "| " << k << " | " << fixed(m.at(k).get<double>()) << " |\n";
        }
        const auto& c = m.at("confusion");
        out << "\nConfusion: TP " << c.at("tp") << ", FP " << c.at("fp") << ", FN " << c.at("fn") << ", TN "
            << c.at("tn") << "\n\n";
    }
    if (fs::exists(run_dir / "epochs.csv")) {
        found = true;
        std::istringstream in(read_text(run_dir / "epochs.csv"));
        std::string line;
        std::getline(in, line);
        std::ostringstream curve;
        curve << "epoch,train_total,val_total\n";
        std::vector<std::string> lines;
        while (std::getline(in, line)) {
            if (!line.empty()) {
                lines.push_back(line);
                curve << line << '\n';
            }
        }
        write_text(run_dir / "plot_loss_curve.csv", curve.str());
        out << "## Pretraining\n\n" << lines.size() << " epochs";
        if (!lines.empty()) {
            out << "; first epoch `" << lines.front() << "`, last epoch `" << lines.back() << "`";
        }
        out << "\n\n";
    }
    if (!found) {
        throw InputError("no grid.csv, metrics.json or epochs.csv in " + run_dir.string());
    }
    write_text(run_dir / "report.md", out.str());
    return out.str();
}

} // namespace lumbar_align
