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

#ifndef LTLAB_PIPELINE_HPP
#define LTLAB_PIPELINE_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ltlab/checkpoint.hpp"
#include "ltlab/config.hpp"
#include "ltlab/data.hpp"
#include "ltlab/init.hpp"
#include "ltlab/pruning.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

/// Digits: the archive's train part is split train/val at data.split with
/// the run seed and its test part is kept. Blobs: generated with the seed,
/// a test fraction held out, the rest split like digits.
DataSplits load_data(const DataConfig& config, std::uint64_t seed);

/// Base architecture for a config: the preset, ReLU, no injected skips.
ArchSpec base_arch(const ExperimentConfig& config, const DataSplits& data);

/// Retraining architecture: base plus skip injection / activation swap.
ArchSpec tweaked_arch(const ArchSpec& base, const TweakConfig& tweaks);

struct PipelineHooks {
    /// (stage label, model, epoch, step) after every optimizer step.
    std::function<void(const std::string&, const Model&, int, std::size_t)> on_step;
    /// (round, mask) after every pruning step.
    std::function<void(int, const Mask&)> on_mask;
    /// Progress lines.
    std::function<void(const std::string&)> log;
};

struct DenseStage {
    Checkpoint init; // epoch-0 weights
    Checkpoint rewind; // dense weights at the rewind epoch
    Checkpoint trained; // best-val dense weights
    TrainResult result;
    Evaluation test;
    std::uint64_t hash = 0; // FNV-1a over init, rewind and trained archives
};

DenseStage train_dense(const ExperimentConfig& config, const DataSplits& data, const PipelineHooks& hooks = {});

struct TicketStage {
    std::vector<Mask> masks; // one per level, increasing sparsity
    std::vector<double> sparsities;
    std::vector<TrainResult> rounds; // IMP trainings after the dense run
    std::vector<Checkpoint> round_models; // weights those trainings ended with
    std::uint64_t hash = 0; // FNV-1a over the serialized masks
};

/// IMP: each round prunes per_round of the survivors of the previous
/// round's trained weights, then resets the survivors to the epoch-0
/// weights and trains again. OMP: prunes the dense weights once.
TicketStage find_tickets(const ExperimentConfig& config, const DataSplits& data, const DenseStage& dense,
                         const PipelineHooks& hooks = {});

struct ArmResult {
    std::string arm; // "vanilla" or "tweaked"
    int level = 0; // 1-based pruning level
    double sparsity = 0.0;
    TrainResult result;
    Evaluation test;
    Checkpoint final;
    std::optional<RescaleResult> rescale;
};

/// Sparse retraining of one ticket with the given tweaks.
ArmResult retrain_ticket(const ExperimentConfig& config, const TweakConfig& tweaks, const std::string& arm,
                         const DataSplits& data, const DenseStage& dense, const Mask& mask, int level,
                         const PipelineHooks& hooks = {});

/// Teacher logits over the training rows: the trained dense model, or the
/// checkpoint named by recipe.teacher.
Tensor teacher_logits(const TweakConfig& tweaks, const DenseStage& dense, const DataSplits& data);

struct ReportRow {
    std::string arm;
    int level = 0;
    double sparsity = 0.0;
    double best_val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    int best_epoch = 0;
};

struct RunReport {
    RawConfig config;
    std::uint64_t seed = 0;
    std::vector<ReportRow> rows;
    std::string dense_stage_hash;
    std::string ticket_hash;
    std::vector<std::string> warnings;
    nlohmann::json artifacts = nlohmann::json::object();
    double wall_seconds = 0.0;
    bool partial = false;

    // In-memory results, not serialized.
    std::vector<ArmResult> arms;
};

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// run,arm,level,sparsity,best_val_accuracy,test_accuracy,test_loss,best_epoch
std::string report_csv(const std::vector<std::pair<std::string, RunReport>>& runs);

/// Dense training, ticket finding and retraining of every level (or the
/// pipeline.levels sparsest), for a tweak-free arm and, when tweaks are on, a tweaked arm.
/// With out_dir set, checkpoints, metrics and the report are written there
/// as they are produced; on failure the report is flushed with partial set
/// and a PARTIAL marker file before the error propagates.
RunReport run_pipeline(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir = {},
                       const PipelineHooks& hooks = {});

} // namespace ltlab

#endif // LTLAB_PIPELINE_HPP
