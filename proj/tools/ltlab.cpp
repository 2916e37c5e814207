/*
 * Copyright 2026 The ltlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ltlab/archive.hpp"
#include "ltlab/checkpoint.hpp"
#include "ltlab/config.hpp"
#include "ltlab/csv.hpp"
#include "ltlab/diagnostics.hpp"
#include "ltlab/error.hpp"
#include "ltlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ltlab;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

struct Tweaks {
    bool skips = false;
    std::string activation;
    bool rescale = false;
    std::string loss;
    bool rewind = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required)
{
    auto* opt = cmd->add_option("--config", c.config, "Experiment config (key = value lines)");
    if (config_required)
        opt->required();
    cmd->add_option("--seed", c.seed, "Override the config seed");
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_tweaks(CLI::App* cmd, Tweaks& t)
{
    cmd->add_flag("--skips", t.skips, "Inject identity skips around 3x3 convs when retraining");
    cmd->add_option("--activation", t.activation, "Retraining activation")
        ->check(CLI::IsMember({"relu", "swish", "mish"}));
    cmd->add_flag("--rescale-init", t.rescale, "Layer-wise rescaled initialization");
    cmd->add_option("--loss", t.loss, "Retraining loss")->check(CLI::IsMember({"hard", "ls", "kd"}));
    cmd->add_flag("--rewind", t.rewind, "Rewind to the early dense checkpoint instead of epoch 0");
}

RawConfig overrides(const Common& c, const Tweaks* t)
{
    RawConfig o;
    if (c.seed)
        o["seed"] = std::to_string(*c.seed);
    if (t) {
        if (t->skips)
            o["tweaks.skips"] = "true";
        if (!t->activation.empty())
            o["tweaks.activation"] = t->activation;
        if (t->rescale)
            o["tweaks.rescale_init"] = "true";
        if (!t->loss.empty())
            o["recipe.loss"] = t->loss;
        if (t->rewind)
            o["tweaks.rewind"] = "true";
    }
    return o;
}

/// Config for commands where --config is optional: defaults to the bundled
/// digit set and the checkpoint's seed.
ExperimentConfig diagnostics_config(const Common& c, const Checkpoint& ckpt)
{
    RawConfig o = overrides(c, nullptr);
    if (!o.count("seed"))
        o["seed"] = std::to_string(ckpt.seed);
    if (!c.config.empty())
        return parse_config(c.config, o);
    return parse_config_text("model.arch = miniresnet8\ndata.dataset = digits\ntrainer.epochs = 0\n", o);
}

PipelineHooks stderr_hooks()
{
    PipelineHooks h;
    h.log = [](const std::string& line) { std::cerr << line << "\n"; };
    return h;
}

void mark_partial(const fs::path& out, const std::string& why)
{
    std::error_code ec;
    if (fs::exists(out, ec))
        write_file_atomic(out / "PARTIAL", why + "\n");
}

void summary(json j)
{
    j["status"] = "ok";
    std::cout << j.dump() << std::endl;
}

void save_stage(const fs::path& out, const DenseStage& d)
{
    save_checkpoint(out / "dense_init.ltkt", d.init);
    save_checkpoint(out / "dense_rewind.ltkt", d.rewind);
    save_checkpoint(out / "dense.ltkt", d.trained);
    write_file_atomic(out / "metrics_dense.csv", metrics_csv(d.result.metrics));
}

/// Rebuilds the dense stage from a directory written by train-dense.
DenseStage load_stage(const fs::path& dir, const DataSplits& data)
{
    DenseStage d;
    d.init = load_checkpoint(dir / "dense_init.ltkt");
    d.rewind = load_checkpoint(dir / "dense_rewind.ltkt");
    d.trained = load_checkpoint(dir / "dense.ltkt");
    Model m = restore(d.trained);
    d.test = evaluate(m, data.test);
    return d;
}

int run_train_dense(const Common& c)
{
    const ExperimentConfig cfg = parse_config(c.config, overrides(c, nullptr));
    const DataSplits data = load_data(cfg.data, cfg.seed);
    fs::create_directories(c.out);
    write_file_atomic(fs::path(c.out) / "config.cfg", echo_text(cfg));
    const DenseStage d = train_dense(cfg, data, stderr_hooks());
    save_stage(c.out, d);
    summary({{"command", "train-dense"}, {"out", c.out}, {"best_val_accuracy", d.result.best_val_accuracy},
             {"test_accuracy", d.test.accuracy}, {"dense_stage_hash", hex64(d.hash)}});
    return 0;
}

int run_find_ticket(const Common& c, const std::string& from)
{
    const ExperimentConfig cfg = parse_config(c.config, overrides(c, nullptr));
    const DataSplits data = load_data(cfg.data, cfg.seed);
    fs::create_directories(c.out);
    write_file_atomic(fs::path(c.out) / "config.cfg", echo_text(cfg));
    DenseStage d;
    if (from.empty()) {
        d = train_dense(cfg, data, stderr_hooks());
        save_stage(c.out, d);
    } else {
        d = load_stage(from, data);
    }
    const TicketStage t = find_tickets(cfg, data, d, stderr_hooks());
    json levels = json::array();
    for (std::size_t i = 0; i < t.masks.size(); ++i) {
        Checkpoint ticket = d.init;
        ticket.mask = t.masks[i];
        ticket.extra = {{"stage", "ticket"}, {"level", i + 1}, {"sparsity", t.sparsities[i]}};
        const std::string file = "ticket_l" + std::to_string(i + 1) + ".ltkt";
        save_checkpoint(fs::path(c.out) / file, ticket);
        levels.push_back({{"level", i + 1}, {"sparsity", t.sparsities[i]}, {"file", file}});
    }
    summary({{"command", "find-ticket"}, {"out", c.out}, {"levels", levels}, {"ticket_hash", hex64(t.hash)}});
    return 0;
}

int run_retrain(const Common& c, const Tweaks& tw, const std::string& ticket_path, const std::string& from)
{
    const ExperimentConfig cfg = parse_config(c.config, overrides(c, &tw));
    const DataSplits data = load_data(cfg.data, cfg.seed);
    const Checkpoint ticket = load_checkpoint(ticket_path);
    if (!ticket.mask)
        throw ValidationError("--ticket: checkpoint '" + ticket_path + "' carries no mask");
    DenseStage d;
    if (!from.empty()) {
        d = load_stage(from, data);
    } else {
        if (cfg.tweaks.rewind || (cfg.tweaks.loss.kind == LossKind::kDistill && cfg.tweaks.loss.teacher.empty()))
            throw ValidationError("--from is required when rewinding or distilling from the dense model");
        d.init = ticket;
        d.init.mask.reset();
    }
    fs::create_directories(c.out);
    write_file_atomic(fs::path(c.out) / "config.cfg", echo_text(cfg));
    const int level = ticket.extra.value("level", 1);
    const std::string arm = any_tweak(cfg.tweaks) ? "tweaked" : "vanilla";
    const ArmResult a = retrain_ticket(cfg, cfg.tweaks, arm, data, d, *ticket.mask, level, stderr_hooks());
    const std::string tag = arm + "_l" + std::to_string(level);
    save_checkpoint(fs::path(c.out) / ("retrain_" + tag + ".ltkt"), a.final);
    write_file_atomic(fs::path(c.out) / ("metrics_" + tag + ".csv"), metrics_csv(a.result.metrics));
    summary({{"command", "retrain"}, {"out", c.out}, {"arm", arm}, {"level", level}, {"sparsity", a.sparsity},
             {"best_val_accuracy", a.result.best_val_accuracy}, {"test_accuracy", a.test.accuracy}});
    return 0;
}

int run_pipeline_cmd(const Common& c, const Tweaks& tw)
{
    const ExperimentConfig cfg = parse_config(c.config, overrides(c, &tw));
    const RunReport r = run_pipeline(cfg, fs::path(c.out), stderr_hooks());
    json rows = json::array();
    for (const ReportRow& row : r.rows)
        rows.push_back({{"arm", row.arm}, {"sparsity", row.sparsity}, {"test_accuracy", row.test_accuracy}});
    summary({{"command", "pipeline"}, {"out", c.out}, {"dense_stage_hash", r.dense_stage_hash},
             {"ticket_hash", r.ticket_hash}, {"rows", rows}, {"wall_seconds", r.wall_seconds}});
    return 0;
}

int run_diagnose(const Common& c, const std::string& ckpt_path, std::optional<std::size_t> probe)
{
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const ExperimentConfig cfg = diagnostics_config(c, ckpt);
    const DataSplits data = load_data(cfg.data, cfg.seed);
    Model model = restore(ckpt);
    const Mask* mask = ckpt.mask ? &*ckpt.mask : nullptr;
    CurvatureProbe p;
    p.batches = probe_batches(data.train, probe.value_or(cfg.diagnostics.probe_batches),
                              cfg.diagnostics.probe_batch_size, cfg.seed);
    p.eps = cfg.diagnostics.eps;
    p.max_iters = cfg.diagnostics.max_iters;
    p.tol = cfg.diagnostics.tol;
    p.seed = cfg.seed;
    const TopEigen top = top_eigenvalue(model, mask, p);
    std::vector<EigenRow> rows;
    for (std::size_t b = 0; b < top.per_batch.size(); ++b)
        rows.push_back({ckpt.epoch, int(b), top.per_batch[b].lambda});
    fs::create_directories(c.out);
    write_file_atomic(fs::path(c.out) / "eigen.csv", eigen_csv(rows));
    const auto curve = eig_perturb_curve(model, mask, data.test, p, cfg.diagnostics.distances);
    write_file_atomic(fs::path(c.out) / "perturb.csv", perturbation_csv(curve));
    summary({{"command", "diagnose"}, {"out", c.out}, {"batches", rows.size()}, {"mean_lambda", top.mean},
             {"converged", top.converged}, {"eigen_csv", "eigen.csv"}, {"perturb_csv", "perturb.csv"}});
    return 0;
}

int run_landscape(const Common& c, const std::string& ckpt_path, const std::string& mode, std::optional<int> resolution)
{
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const ExperimentConfig cfg = diagnostics_config(c, ckpt);
    const DataSplits data = load_data(cfg.data, cfg.seed);
    Model model = restore(ckpt);
    LandscapeGrid grid;
    const std::string m = mode.empty() ? cfg.diagnostics.landscape_mode : mode;
    grid.mode = m == "input" ? LandscapeMode::kInput : LandscapeMode::kWeight;
    grid.resolution = resolution.value_or(cfg.diagnostics.resolution);
    grid.extent = cfg.diagnostics.extent;
    grid.clamp = cfg.diagnostics.clamp;
    grid.seed = cfg.seed;
    const Batch batch = probe_batches(data.test, 1, cfg.diagnostics.probe_batch_size, cfg.seed).front();
    const LandscapeResult r = model_landscape(model, ckpt.mask ? &*ckpt.mask : nullptr, batch, grid);
    fs::create_directories(c.out);
    const std::string file = "landscape_" + m + ".csv";
    write_file_atomic(fs::path(c.out) / file, landscape_csv(r));
    summary({{"command", "landscape"}, {"out", c.out}, {"mode", m}, {"resolution", r.resolution},
             {"center_loss", r.center}, {"csv", file}});
    return 0;
}

int run_report(const std::string& runs, const std::string& out)
{
    std::vector<std::pair<std::string, RunReport>> merged;
    std::stringstream in(runs);
    std::string dir;
    while (std::getline(in, dir, ',')) {
        if (dir.empty())
            continue;
        const fs::path file = fs::path(dir) / "report.json";
        if (!fs::exists(file))
            throw ValidationError("--runs: '" + file.string() + "' does not exist");
        json j;
        try {
            j = json::parse(read_file(file));
        } catch (const json::exception& e) {
            throw ValidationError("'" + file.string() + "' is not valid JSON: " + e.what());
        }
        merged.emplace_back(fs::path(dir).filename().string(), report_from_json(j));
    }
    if (merged.empty())
        throw ValidationError("--runs: no run directories given");
    const std::string csv = report_csv(merged);
    std::string target;
    if (!out.empty()) {
        fs::create_directories(out);
        target = (fs::path(out) / "report.csv").string();
        write_file_atomic(target, csv);
    } else {
        std::cerr << csv;
    }
    std::size_t rows = 0;
    bool partial = false;
    for (const auto& [_, r] : merged) {
        rows += r.rows.size();
        partial = partial || r.partial;
    }
    summary({{"command", "report"}, {"runs", merged.size()}, {"rows", rows}, {"csv", target}, {"partial", partial}});
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Lottery-ticket experiments: dense training, pruning, sparse retraining, curvature"};
    app.require_subcommand(1);

    Common common;
    Tweaks tweaks;
    std::string from, ticket, checkpoint, runs, mode;
    std::optional<std::size_t> probe;
    std::optional<int> resolution;

    auto* dense = app.add_subcommand("train-dense", "Train the dense network and save init/rewind/final checkpoints");
    add_common(dense, common, true);

    auto* find = app.add_subcommand("find-ticket", "Train dense (or load --from) and prune to winning-ticket masks");
    add_common(find, common, true);
    find->add_option("--from", from, "Directory written by train-dense");

    auto* retrain = app.add_subcommand("retrain", "Retrain one ticket with the configured tweaks");
    add_common(retrain, common, true);
    add_tweaks(retrain, tweaks);
    retrain->add_option("--ticket", ticket, "Ticket checkpoint (init weights + mask)")->required();
    retrain->add_option("--from", from, "Directory written by train-dense (rewind / teacher)");

    auto* pipe = app.add_subcommand("pipeline", "Dense training, ticket finding and retraining end to end");
    add_common(pipe, common, true);
    add_tweaks(pipe, tweaks);

    auto* diag = app.add_subcommand("diagnose", "Top Hessian eigenvalue and eigen-direction perturbation curve");
    add_common(diag, common, false);
    diag->add_option("--checkpoint", checkpoint, "Checkpoint to analyse")->required();
    diag->add_option("--probe", probe, "Number of probe batches");

    auto* land = app.add_subcommand("landscape", "2-D loss landscape around a checkpoint");
    add_common(land, common, false);
    land->add_option("--checkpoint", checkpoint, "Checkpoint to analyse")->required();
    land->add_option("--mode", mode, "weight or input")->check(CLI::IsMember({"weight", "input"}));
    land->add_option("--resolution", resolution, "Odd grid resolution");

    auto* report = app.add_subcommand("report", "Merge run reports into one accuracy-vs-sparsity CSV");
    report->add_option("--runs", runs, "Comma-separated run directories")->required();
    report->add_option("--out", common.out, "Output directory (default: print the CSV to stderr)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (name == "train-dense")
            return run_train_dense(common);
        if (name == "find-ticket")
            return run_find_ticket(common, from);
        if (name == "retrain")
            return run_retrain(common, tweaks, ticket, from);
        if (name == "pipeline")
            return run_pipeline_cmd(common, tweaks);
        if (name == "diagnose")
            return run_diagnose(common, checkpoint, probe);
        if (name == "landscape")
            return run_landscape(common, checkpoint, mode, resolution);
        return run_report(runs, report->count("--out") ? common.out : std::string());
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cout << json{{"command", name}, {"status", "error"}, {"exit", 1}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        if (name != "report" && name != "pipeline")
            mark_partial(common.out, std::string(name) + " failed: " + e.what());
        std::cerr << "failure: " << e.what() << "\n";
        std::cout << json{{"command", name}, {"status", "failed"}, {"exit", 2}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    }
}
