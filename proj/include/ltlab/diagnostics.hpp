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

#ifndef LTLAB_DIAGNOSTICS_HPP
#define LTLAB_DIAGNOSTICS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltlab/data.hpp"
#include "ltlab/model.hpp"
#include "ltlab/pruning.hpp"

namespace ltlab {

/// Smooth scalar function of a flat parameter vector. value() and
/// gradient() may leave backing state (model weights) at the queried point;
/// point() always reports the unperturbed one.
class Objective {
public:
    virtual ~Objective() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> point() const = 0;
    virtual double value(std::span<const double> w) = 0;
    virtual std::vector<double> gradient(std::span<const double> w) = 0;
    /// 1 for coordinates that may move, 0 for pruned ones.
    virtual std::vector<double> free_coordinates() const { return std::vector<double>(dim(), 1.0); }
};

/// 0.5 w^T A w + b^T w around a stored point.
class QuadraticObjective final : public Objective {
public:
    QuadraticObjective(std::vector<double> a, std::size_t n, std::vector<double> point, std::vector<double> b = {});

    std::size_t dim() const override { return n_; }
    std::vector<double> point() const override { return point_; }
    double value(std::span<const double> w) override;
    std::vector<double> gradient(std::span<const double> w) override;

private:
    std::vector<double> a_, b_, point_;
    std::size_t n_;
};

/// Hard-label cross-entropy of a model in inference mode (running BN
/// statistics), averaged over the given batches by row count. The flat
/// vector concatenates every trainable block in parameter order.
///
/// Evaluation runs on a 64-bit copy of the model graph, so finite
/// differences are not limited by 32-bit weight resolution and the model
/// itself is never modified.
class ModelObjective final : public Objective {
public:
    ModelObjective(Model& model, const Mask* mask, std::vector<Batch> batches);

    std::size_t dim() const override { return dim_; }
    std::vector<double> point() const override { return point_; }
    double value(std::span<const double> w) override;
    std::vector<double> gradient(std::span<const double> w) override;
    std::vector<double> free_coordinates() const override { return free_; }

    /// Block name and [offset, offset + size) of every block.
    struct Block {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
        Shape shape;
        bool prunable = false;
    };
    const std::vector<Block>& blocks() const noexcept { return blocks_; }

    /// Kept for callers that perturbed the model themselves; the objective
    /// never writes to it.
    void restore();

private:
    void load(std::span<const double> w);

    Model& model_;
    GraphD graph_;
    NodeId loss_ = 0;
    std::vector<std::pair<BasicTensor<double>, BasicTensor<double>>> batches_;
    std::vector<Block> blocks_;
    std::vector<double> point_, free_;
    std::size_t dim_ = 0;
};

/// Central difference of gradients along v/|v|, scaled back by |v|:
/// (g(w + eps v^) - g(w - eps v^)) / (2 eps) * |v|. v is first projected
/// onto the free coordinates and the result is zero on the others.
std::vector<double> hvp(Objective& objective, std::span<const double> v, double eps = 1e-3);

/// hvp for a model on one batch.
std::vector<double> hvp(Model& model, const Mask* mask, const Batch& batch, std::span<const double> v,
                        double eps = 1e-3);

/// Hessian by coordinate finite differences of gradients, n x n row-major,
/// symmetrized. Independent of hvp (no normalization, per-axis steps).
std::vector<double> explicit_hessian(Objective& objective, double step = 1e-3);

struct PowerOptions {
    double eps = 1e-3;
    int max_iters = 50;
    double tol = 1e-4;
    std::uint64_t seed = 0;
};

struct EigenEstimate {
    double lambda = 0.0;
    std::vector<double> vector; // unit norm
    int iterations = 0;
    bool converged = false;
    std::vector<double> history; // Rayleigh quotient per iteration
};

/// Power iteration on hvp from a seeded Gaussian start; stops when the
/// Rayleigh quotient changes by less than tol relative.
EigenEstimate power_iteration(Objective& objective, const PowerOptions& options = {});

struct CurvatureProbe {
    std::vector<Batch> batches;
    double eps = 1e-3;
    int max_iters = 50;
    double tol = 1e-4;
    std::uint64_t seed = 0;
};

struct TopEigen {
    double mean = 0.0;
    std::vector<EigenEstimate> per_batch;
    bool converged = true;
};

/// Mean top Hessian eigenvalue across the probe batches.
TopEigen top_eigenvalue(Model& model, const Mask* mask, const CurvatureProbe& probe);

/// `count` disjoint hard-label batches drawn from a seeded permutation
/// (fewer if the dataset runs out).
std::vector<Batch> probe_batches(const Dataset& data, std::size_t count, std::size_t batch_size, std::uint64_t seed);

/// Loss at w + t * direction/|direction| for every t.
std::vector<std::pair<double, double>> perturbation_curve(Objective& objective, std::span<const double> direction,
                                                          std::span<const double> distances);

/// Perturbation along the top eigenvector of the first probe batch,
/// evaluated on `data`.
std::vector<std::pair<double, double>> eig_perturb_curve(Model& model, const Mask* mask, const Dataset& data,
                                                         const CurvatureProbe& probe,
                                                         std::span<const double> distances);

enum class LandscapeMode { kWeight, kInput };

struct LandscapeGrid {
    LandscapeMode mode = LandscapeMode::kWeight;
    int resolution = 21;
    double extent = 1.0;
    double clamp = 8.0;
    std::uint64_t seed = 0;
};

void validate(const LandscapeGrid& grid);

struct LandscapeResult {
    int resolution = 0;
    std::vector<double> axis; // offsets along either direction
    std::vector<double> loss; // resolution x resolution, row i = first axis
    double center = 0.0; // unclamped loss at (0, 0)
    double at(int i, int j) const { return loss[std::size_t(i) * std::size_t(resolution) + std::size_t(j)]; }
};

/// Grid offsets: resolution points evenly spaced over [-extent, extent].
std::vector<double> grid_axis(const LandscapeGrid& grid);

/// loss(i, j) = min(f(w + a_i d1 + b_j d2), clamp).
LandscapeResult landscape(Objective& objective, std::span<const double> d1, std::span<const double> d2,
                          const LandscapeGrid& grid);

/// Gaussian direction with each output filter rescaled to the norm of the
/// matching weight filter. 1-D blocks (biases, BN) and pruned coordinates
/// get zero direction.
std::vector<double> filter_normalized_direction(const ModelObjective& objective, const Model& model,
                                                std::uint64_t seed);

/// Seeded unit vector in per-sample input space.
Tensor random_input_direction(const Shape& sample_shape, std::uint64_t seed);

/// Weight mode: two filter-normalized directions on a ModelObjective over
/// `batch`. Input mode: two unit input directions added to every row of
/// `batch`.
LandscapeResult model_landscape(Model& model, const Mask* mask, const Batch& batch, const LandscapeGrid& grid);

struct EigenRow {
    int epoch = 0;
    int batch_id = 0;
    double lambda = 0.0;
};

std::string landscape_csv(const LandscapeResult& result);
std::string eigen_csv(const std::vector<EigenRow>& rows);
std::string perturbation_csv(const std::vector<std::pair<double, double>>& curve);

} // namespace ltlab

#endif // LTLAB_DIAGNOSTICS_HPP
