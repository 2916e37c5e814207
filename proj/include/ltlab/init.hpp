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

#ifndef LTLAB_INIT_HPP
#define LTLAB_INIT_HPP

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/data.hpp"
#include "ltlab/model.hpp"
#include "ltlab/pruning.hpp"

namespace ltlab {

struct RescaleOptions {
    double lo = 0.25;
    double hi = 4.0;
    std::vector<double> grid{0.5, 0.70710678118654752, 1.0, 1.4142135623730951, 2.0};
    int passes = 5;
    double inner_lr = 0.1;
};

void validate(const RescaleOptions& options);

enum class InitKind { kLottery, kRewind, kRescaled };

std::string_view to_string(InitKind kind);

struct InitPolicy {
    InitKind kind = InitKind::kLottery;
    int rewind_epoch = 0;
    RescaleOptions rescale;
};

struct RescaleResult {
    std::map<std::string, double> scales;
    std::vector<std::string> collapsed;
    double baseline = 0.0; // meta-objective at all-ones scales
    double objective = 0.0; // meta-objective at the returned scales
    int evaluations = 0;
};

/// Hard-label loss on `probe` after one plain SGD step (no momentum, no
/// decay) of size `inner_lr` taken on `step`; both passes use batch
/// statistics without touching the running averages. The model is left as it
/// was on entry.
double one_step_objective(Model& model, const Mask& mask, const Batch& step, const Batch& probe, double inner_lr);

/// Greedy coordinate search for one positive scale per prunable block.
/// Each pass visits the blocks in layer order and multiplies the current
/// scale by every grid value that stays inside [lo, hi], keeping a candidate
/// only when it strictly lowers the meta-objective. Stops after `passes`
/// passes or the first pass without improvement. The winning scales are
/// multiplied into the model.
RescaleResult rescale_init(Model& model, const Mask& mask, const Batch& step, const Batch& probe,
                           const RescaleOptions& options = {});

/// Parameter snapshots keyed by epoch (0 = initialization).
class CheckpointStore {
public:
    void record(int epoch, TensorMap params);
    bool contains(int epoch) const { return states_.count(epoch) != 0; }
    std::vector<int> epochs() const;
    const TensorMap& at(int epoch) const;

private:
    std::map<int, TensorMap> states_;
};

/// Dense weights as of the end of `epoch`; the caller applies the mask.
TensorMap rewind(const CheckpointStore& store, int epoch);

/// ceil(fraction * total_epochs): 33 of 180, 4 of 20.
int rewind_epoch(int total_epochs, double fraction = 0.18);

} // namespace ltlab

#endif // LTLAB_INIT_HPP
