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

#ifndef LTLAB_CONFIG_HPP
#define LTLAB_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/arch.hpp"
#include "ltlab/init.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/pruning.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

struct DataConfig {
    std::string dataset; // digits | blobs
    std::string path = "data/digits.ltkt";
    double split = 0.9;
    std::size_t blob_samples = 800;
    std::size_t blob_dim = 16;
    std::size_t blob_classes = 4;
    double blob_spread = 1.0;
    double blob_test_fraction = 0.2;
};

struct TweakConfig {
    bool skips = false;
    ActivationKind activation = ActivationKind::kRelu;
    bool rescale_init = false;
    LossSpec loss;
    bool rewind = false;
    double rewind_fraction = 0.18;
    RescaleOptions rescale;
    std::size_t rescale_batch = 128;
};

/// True when any retraining tweak is switched on.
bool any_tweak(const TweakConfig& tweaks);

struct DiagnosticsConfig {
    std::size_t probe_batches = 10;
    std::size_t probe_batch_size = 128;
    double eps = 1e-3;
    int max_iters = 50;
    double tol = 1e-4;
    std::string landscape_mode = "weight";
    int resolution = 21;
    double extent = 1.0;
    double clamp = 8.0;
    std::vector<double> distances{-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0};
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string arch;
    DataConfig data;
    TrainConfig trainer; // trainer.seed mirrors seed
    PruneSchedule prune;
    TweakConfig tweaks;
    bool baseline = true; // also retrain a tweak-free arm when tweaks are on
    int retrain_levels = 0; // 0 retrains every pruning level, N only the N sparsest
    DiagnosticsConfig diagnostics;
};

using RawConfig = std::map<std::string, std::string>;

/// "key = value" lines; '#' starts a comment. Duplicate keys are rejected
/// with their line number.
RawConfig parse_raw_config(std::string_view text);

/// Validates every key and value and fills defaults. Errors name the key.
ExperimentConfig resolve_config(const RawConfig& raw);

ExperimentConfig parse_config_text(std::string_view text, const RawConfig& overrides = {});
ExperimentConfig parse_config(const std::filesystem::path& path, const RawConfig& overrides = {});

/// Every key with its resolved value; parse_config_text(echo) reproduces
/// the same config.
RawConfig echo_config(const ExperimentConfig& config);
std::string echo_text(const ExperimentConfig& config);

/// Names of every recognized key.
std::vector<std::string> config_keys();

} // namespace ltlab

#endif // LTLAB_CONFIG_HPP
