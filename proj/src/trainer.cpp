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

#include "ltlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ltlab/csv.hpp"
#include "ltlab/error.hpp"

namespace ltlab {

LrSchedule step_schedule(int epochs)
{
    if (epochs <= 0)
        return {};
    return {{int(std::lround(0.5 * epochs)), 0.1}, {int(std::lround(0.75 * epochs)), 0.1}};
}

double lr_at(double lr0, const LrSchedule& schedule, int epoch)
{
    if (epoch < 0)
        throw ValidationError("epoch must be non-negative");
    double lr = lr0;
    for (const auto& [at, mult] : schedule)
        if (at <= epoch)
            lr *= mult;
    return lr;
}

void sgd_update(std::span<float> w, std::span<const float> g, std::span<float> v, std::span<const float> keep,
                const SgdHyper& hyper, double lr)
{
    if (g.size() != w.size() || v.size() != w.size() || (!keep.empty() && keep.size() != w.size()))
        throw ValidationError("sgd_update: weight, gradient, velocity and mask lengths differ");
    const double mu = hyper.momentum, wd = hyper.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!keep.empty() && keep[i] == 0.0f) {
            w[i] = 0.0f;
            v[i] = 0.0f;
            continue;
        }
        const double vi = mu * double(v[i]) + (double(g[i]) + wd * double(w[i]));
        v[i] = float(vi);
        w[i] = float(double(w[i]) - lr * vi);
    }
}

void sgd_step(Model& model, const Mask* mask, OptState& state, double lr)
{
    const auto names = model.parameter_names();
    for (const std::string& name : names) {
        const Tensor& w = std::as_const(model).param(name);
        if (!w.has_grad())
            continue;
        for (float gi : w.grad())
            if (!std::isfinite(gi))
                throw RuntimeFailure("non-finite gradient in block '" + name + "'; step aborted");
    }
    for (const std::string& name : names) {
        Tensor& w = model.param(name);
        if (!w.has_grad())
            continue;
        auto& v = state.velocity[name];
        if (v.size() != w.size())
            v.assign(w.size(), 0.0f);
        std::span<const float> keep;
        if (mask)
            if (const Tensor* m = mask->find(name))
                keep = m->data();
        sgd_update(w.data(), std::as_const(w).grad(), v, keep, state.hyper, lr);
    }
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics)
{
    CsvTable t;
    t.header = {"epoch", "split", "loss", "accuracy", "lr"};
    for (const auto& m : metrics)
        t.rows.push_back({std::to_string(m.epoch), m.split, format_real(m.loss), format_real(m.accuracy),
                          format_real(m.lr)});
    return t.to_string();
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows)
{
    const std::size_t stride = t.size() / t.extent(0);
    Shape shape = t.shape();
    shape[0] = rows.size();
    std::vector<float> out(rows.size() * stride);
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy_n(t.data().begin() + std::ptrdiff_t(rows[k] * stride), stride,
                    out.begin() + std::ptrdiff_t(k * stride));
    return Tensor(std::move(shape), std::move(out));
}

namespace {

std::size_t argmax_row(std::span<const float> row)
{
    return std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels)
{
    const std::size_t k = logits.extent(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        correct += argmax_row(logits.data().subspan(i * k, k)) == std::size_t(labels[i]);
    return correct;
}

} // namespace

Tensor predict_logits(Model& model, const Dataset& data, std::size_t batch_size)
{
    const std::size_t n = data.size(), k = model.spec().num_classes;
    Tensor out({n, k});
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += batch_size) {
        rows.resize(std::min(batch_size, n - start));
        std::iota(rows.begin(), rows.end(), start);
        const Tensor logits = model.logits(gather_rows(data.images, rows));
        std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + std::ptrdiff_t(start * k));
    }
    return out;
}

Evaluation evaluate(Model& model, const Dataset& data, std::size_t batch_size)
{
    if (data.size() == 0)
        throw ValidationError("cannot evaluate on an empty dataset");
    const std::size_t n = data.size(), k = model.spec().num_classes;
    double loss = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += batch_size) {
        rows.resize(std::min(batch_size, n - start));
        std::iota(rows.begin(), rows.end(), start);
        const std::span<const int> labels(data.labels.data() + start, rows.size());
        const Tensor target = one_hot(labels, k);
        loss += model.loss(gather_rows(data.images, rows), target, LossHead::kCrossEntropy, false)
                * double(rows.size());
        correct += count_correct(model.graph().value(model.logits_node()), labels);
    }
    return {loss / double(n), double(correct) / double(n)};
}

Batch sample_batch(const Dataset& data, std::size_t count, std::uint64_t seed, std::size_t offset)
{
    if (offset + count > data.size() || count == 0)
        throw ValidationError("sample_batch: not enough rows");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::span<const std::size_t> rows(idx.data() + offset, count);
    std::vector<int> labels;
    for (std::size_t r : rows)
        labels.push_back(data.labels[r]);
    return {gather_rows(data.images, rows), one_hot(labels, data.num_classes)};
}

TrainResult train(Model& model, const Mask* mask, const Recipe& recipe, const Dataset& train_set,
                  const Dataset& val, const TrainConfig& config, const StepObserver& observer)
{
    if (train_set.size() == 0)
        throw ValidationError("training set is empty");
    if (val.size() == 0)
        throw ValidationError("validation set is empty");
    if (config.epochs < 0)
        throw ValidationError("trainer.epochs must be non-negative");
    if (config.batch_size < 1)
        throw ValidationError("trainer.batch_size must be positive");
    validate(recipe.loss);
    const bool distill = recipe.loss.kind == LossKind::kDistill;
    if (distill) {
        if (!recipe.teacher_logits)
            throw ValidationError("kd loss requires teacher logits");
        if (recipe.teacher_logits->shape() != Shape{train_set.size(), model.spec().num_classes})
            throw ValidationError("teacher logits shape " + shape_to_string(recipe.teacher_logits->shape())
                                  + " does not match the training set");
        model.set_distillation(recipe.loss.tau, recipe.loss.tau * recipe.loss.tau);
    }

    TrainResult result;
    if (mask) {
        apply_mask(model, *mask);
        for (const std::string& block : detect_layer_collapse(*mask))
            result.warnings.push_back("layer collapse: block '" + block + "' is fully pruned");
    }
    const auto wants_checkpoint = [&](int epoch) {
        return std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch)
               != config.checkpoint_epochs.end();
    };
    if (wants_checkpoint(0))
        result.checkpoints.record(0, model.parameters());
    if (config.epochs == 0)
        return result;

    const std::size_t k = model.spec().num_classes;
    const Tensor targets = make_targets(train_set.labels, k, recipe.loss);
    const LrSchedule schedule = config.optimizer.schedule.value_or(step_schedule(config.epochs));
    OptState opt;
    opt.hyper = {config.optimizer.momentum, config.optimizer.weight_decay};
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TensorMap best_params, best_bn;
    result.best_val_accuracy = -1.0;
    double best_val_loss = INFINITY;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = lr_at(config.optimizer.lr0, schedule, epoch - 1);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            if (len < 2)
                break;
            const std::span<const std::size_t> rows(order.data() + start, len);
            const Tensor x = gather_rows(train_set.images, rows);
            const Tensor y = gather_rows(targets, rows);
            std::optional<Tensor> teacher;
            if (distill)
                teacher = gather_rows(*recipe.teacher_logits, rows);
            const double loss = model.loss_and_grad(x, y, distill ? LossHead::kDistill : LossHead::kCrossEntropy,
                                                    true, true, teacher ? &*teacher : nullptr);
            if (!std::isfinite(loss))
                throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch));
            std::vector<int> labels;
            for (std::size_t r : rows)
                labels.push_back(train_set.labels[r]);
            correct += count_correct(model.graph().value(model.logits_node()), labels);
            sgd_step(model, mask, opt, lr);
            loss_sum += loss * double(len);
            seen += len;
            if (observer)
                observer(model, epoch, result.steps);
            ++result.steps;
        }
        if (seen == 0)
            throw ValidationError("training set yields no batch with at least two rows");
        result.metrics.push_back({epoch, "train", loss_sum / double(seen), double(correct) / double(seen), lr});
        const Evaluation ev = evaluate(model, val);
        result.metrics.push_back({epoch, "val", ev.loss, ev.accuracy, lr});
        if (ev.accuracy > result.best_val_accuracy
            || (ev.accuracy == result.best_val_accuracy && ev.loss < best_val_loss)) {
            result.best_val_accuracy = ev.accuracy;
            best_val_loss = ev.loss;
            result.best_epoch = epoch;
            if (config.keep_best) {
                best_params = model.parameters();
                best_bn = model.bn_state();
            }
        }
        if (wants_checkpoint(epoch))
            result.checkpoints.record(epoch, model.parameters());
    }
    if (config.keep_best && !best_params.empty()) {
        model.load_parameters(best_params);
        model.load_bn_state(best_bn);
    }
    return result;
}

} // namespace ltlab
