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

#include "ltlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "ltlab/csv.hpp"
#include "ltlab/error.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a)
{
    return std::sqrt(dot(a, a));
}

std::vector<double> axpy(std::span<const double> w, double t, std::span<const double> d)
{
    std::vector<double> out(w.begin(), w.end());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += t * d[i];
    return out;
}

} // namespace

QuadraticObjective::QuadraticObjective(std::vector<double> a, std::size_t n, std::vector<double> point,
                                       std::vector<double> b)
    : a_(std::move(a)), b_(std::move(b)), point_(std::move(point)), n_(n)
{
    if (a_.size() != n * n || point_.size() != n || (!b_.empty() && b_.size() != n))
        throw ValidationError("quadratic objective: inconsistent sizes");
    if (b_.empty())
        b_.assign(n, 0.0);
}

double QuadraticObjective::value(std::span<const double> w)
{
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n_; ++j)
            row += a_[i * n_ + j] * w[j];
        s += 0.5 * w[i] * row + b_[i] * w[i];
    }
    return s;
}

std::vector<double> QuadraticObjective::gradient(std::span<const double> w)
{
    std::vector<double> g(n_);
    for (std::size_t i = 0; i < n_; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n_; ++j)
            row += 0.5 * (a_[i * n_ + j] + a_[j * n_ + i]) * w[j];
        g[i] = row + b_[i];
    }
    return g;
}

ModelObjective::ModelObjective(Model& model, const Mask* mask, std::vector<Batch> batches)
    : model_(model), graph_(GraphD::cast_from(model.graph())), loss_(model.cross_entropy_node())
{
    if (batches.empty())
        throw ValidationError("model objective needs at least one batch");
    for (const Batch& b : batches)
        batches_.emplace_back(tensor_cast<double>(b.inputs), tensor_cast<double>(b.targets));
    graph_.set_root(loss_);
    graph_.set_training(false);
    graph_.set_update_running_stats(false);
    const auto prunable = model.prunable_names();
    for (const std::string& name : model.parameter_names()) {
        const Tensor& w = std::as_const(model).param(name);
        Block b{name, dim_, w.size(), w.shape(),
                std::find(prunable.begin(), prunable.end(), name) != prunable.end()};
        const Tensor* m = mask ? mask->find(name) : nullptr;
        for (std::size_t i = 0; i < w.size(); ++i) {
            point_.push_back(w[i]);
            free_.push_back(m && (*m)[i] == 0.0f ? 0.0 : 1.0);
        }
        dim_ += w.size();
        blocks_.push_back(std::move(b));
    }
}

void ModelObjective::load(std::span<const double> w)
{
    if (w.size() != dim_)
        throw ValidationError("model objective: vector length " + std::to_string(w.size()) + ", expected "
                              + std::to_string(dim_));
    for (const Block& b : blocks_) {
        auto& t = graph_.parameter_value(b.name);
        std::copy(w.begin() + std::ptrdiff_t(b.offset), w.begin() + std::ptrdiff_t(b.offset + b.size),
                  t.data().begin());
    }
}

void ModelObjective::restore()
{
    load(point_);
}

double ModelObjective::value(std::span<const double> w)
{
    load(w);
    double total = 0.0, rows = 0.0;
    for (const auto& [x, y] : batches_) {
        const double n = double(x.extent(0));
        graph_.forward({{"input", x}, {"target", y}});
        total += n * graph_.root_scalar();
        rows += n;
    }
    return total / rows;
}

std::vector<double> ModelObjective::gradient(std::span<const double> w)
{
    load(w);
    std::vector<double> g(dim_, 0.0);
    double rows = 0.0;
    for (const auto& [x, _] : batches_)
        rows += double(x.extent(0));
    for (const auto& [x, y] : batches_) {
        const double weight = double(x.extent(0)) / rows;
        graph_.forward({{"input", x}, {"target", y}});
        graph_.backward();
        for (const Block& blk : blocks_) {
            const auto grad = std::as_const(graph_).parameter_value(blk.name).grad();
            for (std::size_t i = 0; i < blk.size; ++i)
                g[blk.offset + i] += weight * grad[i];
        }
    }
    for (std::size_t i = 0; i < dim_; ++i)
        g[i] *= free_[i];
    return g;
}

std::vector<double> hvp(Objective& objective, std::span<const double> v, double eps)
{
    const std::size_t n = objective.dim();
    if (v.size() != n)
        throw ValidationError("hvp: direction has " + std::to_string(v.size()) + " entries, expected "
                              + std::to_string(n));
    if (!(eps > 0.0))
        throw ValidationError("hvp: eps must be positive");
    const auto free = objective.free_coordinates();
    std::vector<double> u(v.begin(), v.end());
    for (std::size_t i = 0; i < n; ++i)
        u[i] *= free[i];
    const double len = norm(u);
    if (!(len > 0.0))
        throw ValidationError("hvp: direction has zero norm on the free coordinates");
    for (double& x : u)
        x /= len;
    const auto w = objective.point();
    const auto gp = objective.gradient(axpy(w, eps, u));
    const auto gm = objective.gradient(axpy(w, -eps, u));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = free[i] * (gp[i] - gm[i]) / (2.0 * eps) * len;
        if (!std::isfinite(out[i]))
            throw RuntimeFailure("hvp produced a non-finite value with eps = " + std::to_string(eps));
    }
    return out;
}

std::vector<double> hvp(Model& model, const Mask* mask, const Batch& batch, std::span<const double> v, double eps)
{
    ModelObjective obj(model, mask, {batch});
    auto out = hvp(obj, v, eps);
    obj.restore();
    return out;
}

std::vector<double> explicit_hessian(Objective& objective, double step)
{
    const std::size_t n = objective.dim();
    const auto w = objective.point();
    const auto free = objective.free_coordinates();
    std::vector<double> h(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (free[j] == 0.0)
            continue;
        std::vector<double> wp = w, wm = w;
        wp[j] += step;
        wm[j] -= step;
        const auto gp = objective.gradient(wp);
        const auto gm = objective.gradient(wm);
        for (std::size_t i = 0; i < n; ++i)
            h[i * n + j] = free[i] * (gp[i] - gm[i]) / (2.0 * step);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = h[j * n + i] = s;
        }
    return h;
}

EigenEstimate power_iteration(Objective& objective, const PowerOptions& options)
{
    if (options.max_iters < 1 || !(options.tol > 0.0))
        throw ValidationError("power iteration needs max_iters >= 1 and tol > 0");
    const std::size_t n = objective.dim();
    const auto free = objective.free_coordinates();
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = normal(rng) * free[i];
    const double v0 = norm(v);
    if (!(v0 > 0.0))
        throw ValidationError("power iteration: no free coordinates");
    for (double& x : v)
        x /= v0;

    EigenEstimate e;
    for (int it = 1; it <= options.max_iters; ++it) {
        const auto hv = hvp(objective, v, options.eps);
        const double lambda = dot(v, hv);
        e.history.push_back(lambda);
        e.iterations = it;
        e.lambda = lambda;
        const double len = norm(hv);
        if (len == 0.0) {
            e.converged = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i)
            v[i] = hv[i] / len;
        if (it > 1) {
            const double prev = e.history[e.history.size() - 2];
            if (std::abs(lambda - prev) <= options.tol * std::max(std::abs(lambda), 1e-12)) {
                e.converged = true;
                break;
            }
        }
    }
    e.vector = std::move(v);
    return e;
}

std::vector<Batch> probe_batches(const Dataset& data, std::size_t count, std::size_t batch_size, std::uint64_t seed)
{
    if (count == 0 || batch_size == 0)
        throw ValidationError("probe needs at least one batch of at least one row");
    std::vector<Batch> out;
    const std::size_t fit = std::max<std::size_t>(1, data.size() / batch_size);
    const std::size_t size = std::min(batch_size, data.size());
    for (std::size_t k = 0; k < count; ++k) {
        // Disjoint slices of one permutation; reshuffle once it is used up.
        const std::size_t pass = k / fit, slot = k % fit;
        out.push_back(sample_batch(data, size, seed + pass, slot * size));
    }
    return out;
}

TopEigen top_eigenvalue(Model& model, const Mask* mask, const CurvatureProbe& probe)
{
    if (probe.batches.empty())
        throw ValidationError("curvature probe has no batches");
    if (!(probe.eps > 0.0))
        throw ValidationError("curvature probe eps must be positive");
    TopEigen t;
    double sum = 0.0;
    for (std::size_t b = 0; b < probe.batches.size(); ++b) {
        ModelObjective obj(model, mask, {probe.batches[b]});
        EigenEstimate e = power_iteration(obj, {probe.eps, probe.max_iters, probe.tol, probe.seed + b});
        obj.restore();
        sum += e.lambda;
        t.converged = t.converged && e.converged;
        t.per_batch.push_back(std::move(e));
    }
    t.mean = sum / double(probe.batches.size());
    return t;
}

std::vector<std::pair<double, double>> perturbation_curve(Objective& objective, std::span<const double> direction,
                                                          std::span<const double> distances)
{
    const double len = norm(direction);
    if (direction.size() != objective.dim() || !(len > 0.0))
        throw ValidationError("perturbation direction must be non-zero and match the objective");
    std::vector<double> d(direction.begin(), direction.end());
    for (double& x : d)
        x /= len;
    const auto w = objective.point();
    std::vector<std::pair<double, double>> out;
    for (double t : distances)
        out.emplace_back(t, objective.value(axpy(w, t, d)));
    objective.value(w);
    return out;
}

std::vector<std::pair<double, double>> eig_perturb_curve(Model& model, const Mask* mask, const Dataset& data,
                                                         const CurvatureProbe& probe,
                                                         std::span<const double> distances)
{
    if (probe.batches.empty())
        throw ValidationError("curvature probe has no batches");
    std::vector<double> v;
    {
        ModelObjective obj(model, mask, {probe.batches.front()});
        v = power_iteration(obj, {probe.eps, probe.max_iters, probe.tol, probe.seed}).vector;
        obj.restore();
    }
    std::vector<Batch> chunks;
    for (std::size_t start = 0; start < data.size(); start += 256) {
        std::vector<std::size_t> rows(std::min<std::size_t>(256, data.size() - start));
        std::iota(rows.begin(), rows.end(), start);
        std::vector<int> labels;
        for (std::size_t r : rows)
            labels.push_back(data.labels[r]);
        chunks.push_back({gather_rows(data.images, rows), one_hot(labels, data.num_classes)});
    }
    ModelObjective obj(model, mask, std::move(chunks));
    auto out = perturbation_curve(obj, v, distances);
    obj.restore();
    return out;
}

void validate(const LandscapeGrid& g)
{
    if (g.resolution < 1 || g.resolution % 2 == 0)
        throw ValidationError("landscape resolution must be a positive odd integer, got " + std::to_string(g.resolution));
    if (!(g.extent > 0.0))
        throw ValidationError("landscape extent must be positive");
    if (!(g.clamp > 0.0))
        throw ValidationError("landscape clamp must be positive");
}

std::vector<double> grid_axis(const LandscapeGrid& g)
{
    validate(g);
    std::vector<double> axis(std::size_t(g.resolution), 0.0);
    const int half = g.resolution / 2;
    for (int i = 0; i < g.resolution; ++i)
        axis[std::size_t(i)] = half == 0 ? 0.0 : g.extent * double(i - half) / double(half);
    return axis;
}

namespace {

LandscapeResult evaluate_grid(const std::function<double(double, double)>& f, const LandscapeGrid& grid)
{
    LandscapeResult r;
    r.resolution = grid.resolution;
    r.axis = grid_axis(grid);
    r.loss.resize(std::size_t(grid.resolution) * std::size_t(grid.resolution));
    for (int i = 0; i < grid.resolution; ++i)
        for (int j = 0; j < grid.resolution; ++j) {
            const double v = f(r.axis[std::size_t(i)], r.axis[std::size_t(j)]);
            if (i == grid.resolution / 2 && j == grid.resolution / 2)
                r.center = v;
            r.loss[std::size_t(i) * std::size_t(grid.resolution) + std::size_t(j)]
                = std::isnan(v) ? grid.clamp : std::min(v, grid.clamp);
        }
    return r;
}

void check_directions(std::span<const double> d1, std::span<const double> d2)
{
    const double n1 = norm(d1), n2 = norm(d2);
    if (!(n1 > 0.0) || !(n2 > 0.0))
        throw ValidationError("landscape directions must be non-zero");
    if (std::abs(dot(d1, d2)) / (n1 * n2) > 1.0 - 1e-9)
        throw ValidationError("landscape directions are parallel");
}

} // namespace

LandscapeResult landscape(Objective& objective, std::span<const double> d1, std::span<const double> d2,
                          const LandscapeGrid& grid)
{
    validate(grid);
    if (d1.size() != objective.dim() || d2.size() != objective.dim())
        throw ValidationError("landscape directions must match the objective dimension");
    check_directions(d1, d2);
    const auto w = objective.point();
    auto r = evaluate_grid(
        [&](double a, double b) {
            std::vector<double> p = w;
            for (std::size_t k = 0; k < p.size(); ++k)
                p[k] += a * d1[k] + b * d2[k];
            return objective.value(p);
        },
        grid);
    objective.value(w);
    return r;
}

std::vector<double> filter_normalized_direction(const ModelObjective& objective, const Model& model,
                                                std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto free = objective.free_coordinates();
    std::vector<double> d(objective.dim(), 0.0);
    for (const auto& blk : objective.blocks()) {
        if (blk.shape.size() < 2)
            continue;
        const Tensor& w = model.param(blk.name);
        // Filters: output slices of conv [O,C,kh,kw], output columns of
        // dense [in,out].
        const bool conv = blk.shape.size() == 4;
        const std::size_t filters = conv ? blk.shape[0] : blk.shape[1];
        const std::size_t len = blk.size / filters;
        auto index = [&](std::size_t f, std::size_t k) { return conv ? f * len + k : k * filters + f; };
        for (std::size_t i = 0; i < blk.size; ++i)
            d[blk.offset + i] = normal(rng) * free[blk.offset + i];
        for (std::size_t f = 0; f < filters; ++f) {
            double wn = 0.0, dn = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t i = index(f, k);
                wn += double(w[i]) * double(w[i]);
                dn += d[blk.offset + i] * d[blk.offset + i];
            }
            const double s = dn > 0.0 ? std::sqrt(wn) / std::sqrt(dn) : 0.0;
            for (std::size_t k = 0; k < len; ++k)
                d[blk.offset + index(f, k)] *= s;
        }
    }
    return d;
}

Tensor random_input_direction(const Shape& sample_shape, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor u(sample_shape);
    double s = 0.0;
    std::vector<double> raw(u.size());
    for (double& x : raw) {
        x = normal(rng);
        s += x * x;
    }
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = float(raw[i] / std::sqrt(s));
    return u;
}

LandscapeResult model_landscape(Model& model, const Mask* mask, const Batch& batch, const LandscapeGrid& grid)
{
    validate(grid);
    if (grid.mode == LandscapeMode::kWeight) {
        ModelObjective obj(model, mask, {batch});
        const auto d1 = filter_normalized_direction(obj, model, grid.seed);
        const auto d2 = filter_normalized_direction(obj, model, grid.seed + 1);
        auto r = landscape(obj, d1, d2, grid);
        obj.restore();
        return r;
    }
    const Shape sample(batch.inputs.shape().begin() + 1, batch.inputs.shape().end());
    const Tensor u1 = random_input_direction(sample, grid.seed);
    const Tensor u2 = random_input_direction(sample, grid.seed + 1);
    std::vector<double> a(u1.data().begin(), u1.data().end()), b(u2.data().begin(), u2.data().end());
    check_directions(a, b);
    const std::size_t stride = u1.size();
    return evaluate_grid(
        [&](double s, double t) {
            Tensor x = batch.inputs;
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] = float(double(x[i]) + s * double(u1[i % stride]) + t * double(u2[i % stride]));
            return model.loss(x, batch.targets, LossHead::kCrossEntropy, false);
        },
        grid);
}

std::string landscape_csv(const LandscapeResult& r)
{
    CsvTable t;
    t.header = {"i", "j", "a", "b", "loss"};
    for (int i = 0; i < r.resolution; ++i)
        for (int j = 0; j < r.resolution; ++j)
            t.rows.push_back({std::to_string(i), std::to_string(j), format_real(r.axis[std::size_t(i)]),
                              format_real(r.axis[std::size_t(j)]), format_real(r.at(i, j))});
    return t.to_string();
}

std::string eigen_csv(const std::vector<EigenRow>& rows)
{
    CsvTable t;
    t.header = {"epoch", "batch_id", "lambda"};
    for (const EigenRow& r : rows)
        t.rows.push_back({std::to_string(r.epoch), std::to_string(r.batch_id), format_real(r.lambda)});
    return t.to_string();
}

std::string perturbation_csv(const std::vector<std::pair<double, double>>& curve)
{
    CsvTable t;
    t.header = {"distance", "loss"};
    for (const auto& [d, l] : curve)
        t.rows.push_back({format_real(d), format_real(l)});
    return t.to_string();
}

} // namespace ltlab
