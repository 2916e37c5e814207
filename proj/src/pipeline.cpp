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

#include "ltlab/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "ltlab/archive.hpp"
#include "ltlab/csv.hpp"
#include "ltlab/error.hpp"

namespace ltlab {

namespace {

constexpr std::uint64_t kRescaleSeedSalt = 0x5eedf00dULL;

std::uint64_t combine_hashes(std::initializer_list<const Checkpoint*> parts)
{
    std::string bytes;
    for (const Checkpoint* c : parts)
        bytes += serialize_archive(to_archive(*c));
    return fnv1a64(bytes);
}

TrainConfig stage_config(const ExperimentConfig& config)
{
    TrainConfig t = config.trainer;
    t.seed = config.seed;
    t.checkpoint_epochs.clear();
    return t;
}

auto step_hook(const PipelineHooks& hooks, std::string label)
{
    StepObserver obs;
    if (hooks.on_step)
        obs = [&hooks, label = std::move(label)](const Model& m, int epoch, std::size_t step) {
            hooks.on_step(label, m, epoch, step);
        };
    return obs;
}

void say(const PipelineHooks& hooks, const std::string& line)
{
    if (hooks.log)
        hooks.log(line);
}

std::string pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

} // namespace

DataSplits load_data(const DataConfig& config, std::uint64_t seed)
{
    DataSplits s;
    if (config.dataset == "digits") {
        if (!std::filesystem::exists(config.path))
            throw ValidationError("data.path: file '" + config.path + "' does not exist");
        auto [trainval, test] = load_digits(config.path);
        auto [train, val] = split_dataset(trainval, config.split, seed);
        s.train = std::move(train);
        s.val = std::move(val);
        s.test = std::move(test);
    } else if (config.dataset == "blobs") {
        const Dataset all = make_blobs(config.blob_samples, config.blob_dim, config.blob_classes, config.blob_spread, seed);
        auto [trainval, test] = split_dataset(all, 1.0 - config.blob_test_fraction, seed);
        auto [train, val] = split_dataset(trainval, config.split, seed);
        s.train = std::move(train);
        s.val = std::move(val);
        s.test = std::move(test);
    } else {
        throw ValidationError("data.dataset: unknown dataset '" + config.dataset + "'");
    }
    return s;
}

ArchSpec base_arch(const ExperimentConfig& config, const DataSplits& data)
{
    ArchSpec spec = preset_arch(config.arch, data.train.sample_shape(), data.train.num_classes);
    spec.activation = ActivationKind::kRelu;
    return spec;
}

ArchSpec tweaked_arch(const ArchSpec& base, const TweakConfig& tweaks)
{
    ArchSpec spec = base;
    spec.activation = tweaks.activation;
    return tweaks.skips ? inject_skips(spec) : spec;
}

DenseStage train_dense(const ExperimentConfig& config, const DataSplits& data, const PipelineHooks& hooks)
{
    DenseStage d;
    Model model = Model::build(base_arch(config, data), config.seed);
    d.init = capture(model, config.seed, 0);
    d.init.extra = {{"stage", "init"}};

    const int rewind_at = rewind_epoch(config.trainer.epochs, config.tweaks.rewind_fraction);
    TrainConfig tc = config.trainer;
    tc.seed = config.seed;
    tc.checkpoint_epochs.push_back(rewind_at);
    say(hooks, "dense: training " + std::to_string(tc.epochs) + " epochs");
    d.result = train(model, nullptr, Recipe{}, data.train, data.val, tc, step_hook(hooks, "dense"));

    d.rewind = d.init;
    d.rewind.epoch = rewind_at;
    d.rewind.params = rewind_at == 0 ? d.init.params : rewind(d.result.checkpoints, rewind_at);
    d.rewind.extra = {{"stage", "rewind"}};
    d.trained = capture(model, config.seed, config.trainer.epochs);
    d.trained.extra = {{"stage", "dense"}};
    d.test = evaluate(model, data.test);
    d.hash = combine_hashes({&d.init, &d.rewind, &d.trained});
    say(hooks, "dense: best val " + pct(d.result.best_val_accuracy) + ", test " + pct(d.test.accuracy));
    return d;
}

TicketStage find_tickets(const ExperimentConfig& config, const DataSplits& data, const DenseStage& dense,
                         const PipelineHooks& hooks)
{
    TicketStage t;
    Model current = restore(dense.trained);
    Mask mask = Mask::dense(current);
    if (config.prune.mode == PruneMode::kOmp) {
        mask = prune_to_sparsity(current, mask, config.prune.target_sparsity);
        if (hooks.on_mask)
            hooks.on_mask(1, mask);
        t.masks.push_back(mask);
        t.sparsities.push_back(mask.sparsity());
        say(hooks, "omp: pruned to " + pct(mask.sparsity()));
    } else {
        for (int round = 1; round <= config.prune.rounds; ++round) {
            mask = global_magnitude_prune(current, mask, config.prune.per_round_fraction);
            if (hooks.on_mask)
                hooks.on_mask(round, mask);
            t.masks.push_back(mask);
            t.sparsities.push_back(mask.sparsity());
            say(hooks, "imp round " + std::to_string(round) + ": sparsity " + pct(mask.sparsity()));
            if (round == config.prune.rounds)
                break;
            current = restore(dense.init);
            apply_mask(current, mask);
            t.rounds.push_back(train(current, &mask, Recipe{}, data.train, data.val, stage_config(config),
                                     step_hook(hooks, "imp-round-" + std::to_string(round + 1))));
            Checkpoint c = capture(current, config.seed, config.trainer.epochs, &mask);
            c.extra = {{"stage", "imp"}, {"level", round}};
            t.round_models.push_back(std::move(c));
        }
    }
    Archive masks;
    for (std::size_t level = 0; level < t.masks.size(); ++level)
        for (const auto& [name, m] : t.masks[level].blocks) {
            ByteTensor b(m.shape());
            for (std::size_t i = 0; i < m.size(); ++i)
                b[i] = m[i] != 0.0f;
            masks.emplace("level" + std::to_string(level + 1) + "/" + name, std::move(b));
        }
    t.hash = fnv1a64(serialize_archive(masks));
    return t;
}

Tensor teacher_logits(const TweakConfig& tweaks, const DenseStage& dense, const DataSplits& data)
{
    Model teacher = tweaks.loss.teacher.empty() ? restore(dense.trained) : restore(load_checkpoint(tweaks.loss.teacher));
    return predict_logits(teacher, data.train);
}

ArmResult retrain_ticket(const ExperimentConfig& config, const TweakConfig& tweaks, const std::string& arm,
                         const DataSplits& data, const DenseStage& dense, const Mask& mask, int level,
                         const PipelineHooks& hooks)
{
    ArmResult a;
    a.arm = arm;
    a.level = level;
    a.sparsity = mask.sparsity();
    Model model = Model::build(tweaked_arch(dense.init.arch, tweaks), config.seed);
    model.load_parameters(tweaks.rewind ? dense.rewind.params : dense.init.params);
    apply_mask(model, mask);
    if (tweaks.rescale_init) {
        const std::size_t b = std::min(tweaks.rescale_batch, data.train.size() / 2);
        const Batch step = sample_batch(data.train, b, config.seed ^ kRescaleSeedSalt, 0);
        const Batch probe = sample_batch(data.train, b, config.seed ^ kRescaleSeedSalt, b);
        a.rescale = rescale_init(model, mask, step, probe, tweaks.rescale);
    }
    Recipe recipe;
    recipe.loss = tweaks.loss;
    if (tweaks.loss.kind == LossKind::kDistill)
        recipe.teacher_logits = teacher_logits(tweaks, dense, data);
    a.result = train(model, &mask, recipe, data.train, data.val, stage_config(config),
                     step_hook(hooks, arm + "-level-" + std::to_string(level)));
    a.test = evaluate(model, data.test);
    a.final = capture(model, config.seed, config.trainer.epochs, &mask);
    a.final.extra = {{"stage", "retrain"}, {"arm", arm}, {"level", level}, {"sparsity", a.sparsity}};
    if (a.rescale) {
        nlohmann::json scales = nlohmann::json::object();
        for (const auto& [name, c] : a.rescale->scales)
            scales[name] = c;
        a.final.extra["rescale"] = scales;
    }
    return a;
}

nlohmann::json to_json(const RunReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const ReportRow& row : r.rows)
        rows.push_back({{"arm", row.arm},
                        {"level", row.level},
                        {"sparsity", row.sparsity},
                        {"best_val_accuracy", row.best_val_accuracy},
                        {"test_accuracy", row.test_accuracy},
                        {"test_loss", row.test_loss},
                        {"best_epoch", row.best_epoch}});
    return {{"config", r.config},
            {"seed", r.seed},
            {"rows", rows},
            {"dense_stage_hash", r.dense_stage_hash},
            {"ticket_hash", r.ticket_hash},
            {"warnings", r.warnings},
            {"artifacts", r.artifacts},
            {"wall_seconds", r.wall_seconds},
            {"partial", r.partial}};
}

RunReport report_from_json(const nlohmann::json& j)
{
    RunReport r;
    try {
        r.config = j.at("config").get<RawConfig>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& row : j.at("rows"))
            r.rows.push_back({row.at("arm").get<std::string>(), row.at("level").get<int>(),
                              row.at("sparsity").get<double>(), row.at("best_val_accuracy").get<double>(),
                              row.at("test_accuracy").get<double>(), row.at("test_loss").get<double>(),
                              row.at("best_epoch").get<int>()});
        r.dense_stage_hash = j.at("dense_stage_hash").get<std::string>();
        r.ticket_hash = j.at("ticket_hash").get<std::string>();
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        r.artifacts = j.at("artifacts");
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.partial = j.at("partial").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed run report: ") + e.what());
    }
    return r;
}

std::string report_csv(const std::vector<std::pair<std::string, RunReport>>& runs)
{
    CsvTable t;
    t.header = {"run", "arm", "level", "sparsity", "best_val_accuracy", "test_accuracy", "test_loss", "best_epoch"};
    for (const auto& [name, r] : runs)
        for (const ReportRow& row : r.rows)
            t.rows.push_back({name, row.arm, std::to_string(row.level), format_real(row.sparsity),
                              format_real(row.best_val_accuracy), format_real(row.test_accuracy),
                              format_real(row.test_loss), std::to_string(row.best_epoch)});
    return t.to_string();
}

RunReport run_pipeline(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir,
                       const PipelineHooks& hooks)
{
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.config = echo_config(config);
    report.seed = config.seed;

    auto save = [&](const std::string& file, const std::string& bytes, const std::string& key) {
        if (!out_dir)
            return;
        write_file_atomic(*out_dir / file, bytes);
        report.artifacts[key] = file;
    };
    auto flush = [&] {
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!out_dir)
            return;
        write_file_atomic(*out_dir / "report.json", to_json(report).dump(2) + "\n");
        write_file_atomic(*out_dir / "report.csv", report_csv({{report.config.at("model.arch"), report}}));
    };
    auto save_ckpt = [&](const std::string& file, const Checkpoint& c) {
        save(file, serialize_archive(to_archive(c)), file);
    };

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        std::filesystem::remove(*out_dir / "PARTIAL");
        save("config.cfg", echo_text(config), "config");
    }
    try {
        const DataSplits data = load_data(config.data, config.seed);
        const DenseStage dense = train_dense(config, data, hooks);
        report.dense_stage_hash = hex64(dense.hash);
        report.rows.push_back({"dense", 0, 0.0, dense.result.best_val_accuracy, dense.test.accuracy, dense.test.loss,
                               dense.result.best_epoch});
        save_ckpt("dense_init.ltkt", dense.init);
        save_ckpt("dense_rewind.ltkt", dense.rewind);
        save_ckpt("dense.ltkt", dense.trained);
        save("metrics_dense.csv", metrics_csv(dense.result.metrics), "metrics_dense");
        flush();

        const TicketStage tickets = find_tickets(config, data, dense, hooks);
        report.ticket_hash = hex64(tickets.hash);
        for (std::size_t i = 0; i < tickets.masks.size(); ++i) {
            Checkpoint ticket = dense.init;
            ticket.mask = tickets.masks[i];
            ticket.extra = {{"stage", "ticket"}, {"level", i + 1}, {"sparsity", tickets.sparsities[i]}};
            save_ckpt("ticket_l" + std::to_string(i + 1) + ".ltkt", ticket);
        }
        for (std::size_t i = 0; i < tickets.rounds.size(); ++i)
            save("metrics_imp_l" + std::to_string(i + 1) + ".csv", metrics_csv(tickets.rounds[i].metrics),
                 "metrics_imp_l" + std::to_string(i + 1));
        flush();

        const bool tweaked = any_tweak(config.tweaks);
        std::vector<std::pair<std::string, TweakConfig>> arms;
        if (!tweaked || config.baseline) {
            TweakConfig vanilla;
            vanilla.rewind_fraction = config.tweaks.rewind_fraction;
            arms.emplace_back("vanilla", vanilla);
        }
        if (tweaked)
            arms.emplace_back("tweaked", config.tweaks);

        const int levels = int(tickets.masks.size());
        const int first = config.retrain_levels == 0 ? 1 : std::max(1, levels - config.retrain_levels + 1);
        for (int level = first; level <= levels; ++level) {
            const Mask& mask = tickets.masks[std::size_t(level - 1)];
            for (const auto& [arm, tweaks] : arms) {
                ArmResult a;
                if (arm == "vanilla" && std::size_t(level) <= tickets.round_models.size()) {
                    // The IMP round that followed this prune already trained
                    // exactly this network.
                    a.arm = arm;
                    a.level = level;
                    a.sparsity = mask.sparsity();
                    a.result = tickets.rounds[std::size_t(level - 1)];
                    a.final = tickets.round_models[std::size_t(level - 1)];
                    a.final.extra = {{"stage", "retrain"}, {"arm", arm}, {"level", level}, {"sparsity", a.sparsity}};
                    Model m = restore(a.final);
                    a.test = evaluate(m, data.test);
                } else {
                    a = retrain_ticket(config, tweaks, arm, data, dense, mask, level, hooks);
                }
                say(hooks, arm + " level " + std::to_string(level) + " (" + pct(a.sparsity) + "): test "
                               + pct(a.test.accuracy));
                for (const std::string& w : a.result.warnings)
                    report.warnings.push_back(arm + " level " + std::to_string(level) + ": " + w);
                report.rows.push_back({arm, level, a.sparsity, a.result.best_val_accuracy, a.test.accuracy,
                                       a.test.loss, a.result.best_epoch});
                const std::string tag = arm + "_l" + std::to_string(level);
                save_ckpt("retrain_" + tag + ".ltkt", a.final);
                save("metrics_" + tag + ".csv", metrics_csv(a.result.metrics), "metrics_" + tag);
                report.arms.push_back(std::move(a));
                flush();
            }
        }
    } catch (...) {
        report.partial = true;
        try {
            flush();
            if (out_dir)
                write_file_atomic(*out_dir / "PARTIAL", "run aborted; report.json holds the completed rows\n");
        } catch (...) {
        }
        throw;
    }
    flush();
    return report;
}

} // namespace ltlab
