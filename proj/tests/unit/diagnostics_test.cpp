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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "ltlab/diagnostics.hpp"
#include "ltlab/error.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {
namespace {

double rel_err(const std::vector<double>& a, const std::vector<double>& b)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

std::vector<double> matvec(const std::vector<double>& h, const std::vector<double>& v)
{
    const std::size_t n = v.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i] += h[i * n + j] * v[j];
    return out;
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v)
        x = d(rng);
    return v;
}

Batch blob_batch(std::size_t n, std::size_t dim, std::size_t k, std::uint64_t seed)
{
    const Dataset d = make_blobs(n, dim, k, 1.0, seed);
    return sample_batch(d, n, seed);
}

TEST(Hvp, QuadraticExact)
{
    QuadraticObjective q({2.0, 1.0, 1.0, 2.0}, 2, {0.3, -0.7});
    const auto hv = hvp(q, std::vector<double>{1.0, 0.0});
    EXPECT_NEAR(hv[0], 2.0, 1e-9);
    EXPECT_NEAR(hv[1], 1.0, 1e-9);
    EXPECT_THROW(hvp(q, std::vector<double>{0.0, 0.0}), ValidationError);
}

TEST(Hvp, MatchesExplicitHessianOnTinyMlp)
{
    Model m = Model::build(tiny_mlp({4}, 5, 3), 4);
    ASSERT_LE(m.parameter_count(), 60u);
    ModelObjective obj(m, nullptr, {blob_batch(32, 4, 3, 8)});
    const auto h = explicit_hessian(obj);
    for (int trial = 0; trial < 5; ++trial) {
        const auto v = gaussian(obj.dim(), 100 + trial);
        EXPECT_LT(rel_err(hvp(obj, v), matvec(h, v)), 1e-3);
    }
    obj.restore();
}

TEST(Hvp, LinearAndSymmetric)
{
    Model m = Model::build(tiny_mlp({4}, 5, 3), 6);
    ModelObjective obj(m, nullptr, {blob_batch(32, 4, 3, 9)});
    const auto u = gaussian(obj.dim(), 1), v = gaussian(obj.dim(), 2);
    const auto hu = hvp(obj, u), hv = hvp(obj, v);
    std::vector<double> mix(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        mix[i] = 2.0 * u[i] - 0.5 * v[i];
    std::vector<double> expect(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        expect[i] = 2.0 * hu[i] - 0.5 * hv[i];
    EXPECT_LT(rel_err(hvp(obj, mix), expect), 1e-3);
    const double uhv = std::inner_product(u.begin(), u.end(), hv.begin(), 0.0);
    const double vhu = std::inner_product(v.begin(), v.end(), hu.begin(), 0.0);
    EXPECT_NEAR(uhv, vhu, 1e-3 * std::max(std::abs(uhv), 1.0));
}

TEST(Hvp, PrunedCoordinatesProjectedOut)
{
    Model m = Model::build(tiny_mlp({4}, 5, 3), 6);
    const Mask mask = global_magnitude_prune(m, Mask::dense(m), 0.5);
    apply_mask(m, mask);
    ModelObjective obj(m, &mask, {blob_batch(32, 4, 3, 9)});
    const auto free = obj.free_coordinates();
    const auto hv = hvp(obj, gaussian(obj.dim(), 3));
    std::size_t pruned = 0;
    for (std::size_t i = 0; i < free.size(); ++i)
        if (free[i] == 0.0) {
            EXPECT_EQ(hv[i], 0.0);
            ++pruned;
        }
    EXPECT_GT(pruned, 0u);
    obj.restore();
}

TEST(ExplicitHessian, QuadraticRecoversMatrix)
{
    const std::vector<double> a{4.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 2.0};
    QuadraticObjective q(a, 3, {1.0, 2.0, 3.0}, {0.1, 0.2, 0.3});
    const auto h = explicit_hessian(q);
    for (std::size_t i = 0; i < 9; ++i)
        EXPECT_NEAR(h[i], a[i], 1e-8);
}

TEST(PowerIteration, QuadraticEigenvalues)
{
    QuadraticObjective q({2.0, 1.0, 1.0, 2.0}, 2, {0.0, 0.0});
    const EigenEstimate e = power_iteration(q, {1e-3, 100, 1e-10, 5});
    EXPECT_NEAR(e.lambda, 3.0, 1e-6);
    EXPECT_TRUE(e.converged);
    EXPECT_NEAR(std::abs(e.vector[0]), std::sqrt(0.5), 1e-4);

    QuadraticObjective id({1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}, 3, {0.0, 0.0, 0.0});
    const EigenEstimate ei = power_iteration(id, {1e-3, 50, 1e-6, 1});
    EXPECT_NEAR(ei.history.front(), 1.0, 1e-9);
    EXPECT_LE(ei.iterations, 2);
}

TEST(PowerIteration, RayleighMonotoneOnPsdQuadratic)
{
    const std::size_t n = 8;
    const auto r = gaussian(n * n, 42);
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k)
                a[i * n + j] += r[k * n + i] * r[k * n + j];
    QuadraticObjective q(a, n, std::vector<double>(n, 0.0));
    const EigenEstimate e = power_iteration(q, {1e-3, 40, 1e-14, 3});
    for (std::size_t i = 1; i < e.history.size(); ++i)
        EXPECT_GE(e.history[i], e.history[i - 1] - 1e-9);
}

TEST(PowerIteration, TopEigenvalueMatchesDenseDecomposition)
{
    Model m = Model::build(tiny_mlp({4}, 5, 3), 12);
    ModelObjective obj(m, nullptr, {blob_batch(48, 4, 3, 13)});
    const auto h = explicit_hessian(obj);
    const std::size_t n = obj.dim();
    Eigen::MatrixXd hm(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            hm(Eigen::Index(i), Eigen::Index(j)) = h[i * n + j];
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(hm);
    const auto& ev = solver.eigenvalues();
    const double top = ev.maxCoeff();
    ASSERT_GT(top, std::abs(ev.minCoeff())) << "power iteration targets the dominant eigenvalue";
    const EigenEstimate e = power_iteration(obj, {1e-3, 500, 1e-9, 1});
    EXPECT_NEAR(e.lambda, top, 0.01 * top);
    obj.restore();
}

TEST(Landscape, GridShapeClampAndCentre)
{
    QuadraticObjective q({1.0, 0.0, 0.0, 1.0}, 2, {0.0, 0.0});
    LandscapeGrid g;
    g.resolution = 1;
    const LandscapeResult one = landscape(q, std::vector<double>{1, 0}, std::vector<double>{0, 1}, g);
    ASSERT_EQ(one.loss.size(), 1u);
    EXPECT_EQ(one.loss[0], 0.0);

    g.resolution = 5;
    g.extent = 6.0;
    g.clamp = 8.0;
    const LandscapeResult r = landscape(q, std::vector<double>{1, 0}, std::vector<double>{0, 1}, g);
    EXPECT_EQ(r.axis.front(), -6.0);
    EXPECT_EQ(r.axis.back(), 6.0);
    EXPECT_EQ(r.at(0, 0), 8.0);
    EXPECT_EQ(r.at(2, 2), 0.0);
    EXPECT_DOUBLE_EQ(r.at(1, 2), 4.5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            EXPECT_LE(r.at(i, j), 8.0);
            EXPECT_DOUBLE_EQ(r.at(i, j), r.at(4 - i, 4 - j));
            EXPECT_DOUBLE_EQ(r.at(i, j), r.at(j, i));
        }
    g.resolution = 4;
    EXPECT_THROW(validate(g), ValidationError);
    g.resolution = 5;
    EXPECT_THROW(landscape(q, std::vector<double>{1, 0}, std::vector<double>{2, 0}, g), ValidationError);
}

TEST(Landscape, FilterNormalizationMatchesFilterNorms)
{
    Model m = Model::build(mini_resnet8({1, 8, 8}, 10), 3);
    ModelObjective obj(m, nullptr, {blob_batch(8, 64, 10, 1)});
    const auto d = filter_normalized_direction(obj, m, 9);
    for (const auto& b : obj.blocks()) {
        if (b.shape.size() == 1) {
            for (std::size_t k = 0; k < b.size; ++k)
                EXPECT_EQ(d[b.offset + k], 0.0) << b.name;
            continue;
        }
        if (b.shape.size() != 4)
            continue;
        const Tensor& w = m.param(b.name);
        const std::size_t per = b.size / b.shape[0];
        for (std::size_t f = 0; f < b.shape[0]; ++f) {
            double dn = 0.0, wn = 0.0;
            for (std::size_t k = 0; k < per; ++k) {
                dn += d[b.offset + f * per + k] * d[b.offset + f * per + k];
                wn += double(w[f * per + k]) * double(w[f * per + k]);
            }
            EXPECT_NEAR(std::sqrt(dn), std::sqrt(wn), 1e-6 * std::sqrt(wn) + 1e-12) << b.name << " filter " << f;
        }
    }
}

TEST(Perturbation, QuadraticHalfLambdaTSquared)
{
    QuadraticObjective q({5.0, 0.0, 0.0, 1.0}, 2, {0.0, 0.0});
    const std::vector<double> ts{0.0, 0.1, 0.5, 1.0};
    const auto curve = perturbation_curve(q, std::vector<double>{3.0, 0.0}, ts);
    ASSERT_EQ(curve.size(), ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        EXPECT_EQ(curve[i].first, ts[i]);
        EXPECT_NEAR(curve[i].second, 0.5 * 5.0 * ts[i] * ts[i], 1e-12);
    }
}

TEST(Curvature, TopEigenOnModelDeterministicAndRestores)
{
    const Dataset d = make_blobs(200, 6, 3, 1.0, 5);
    Model m = Model::build(tiny_mlp({6}, 8, 3), 2);
    const TensorMap before = m.parameters();
    CurvatureProbe p;
    p.batches = probe_batches(d, 3, 32, 1);
    ASSERT_EQ(p.batches.size(), 3u);
    p.max_iters = 30;
    const TopEigen a = top_eigenvalue(m, nullptr, p);
    const TopEigen b = top_eigenvalue(m, nullptr, p);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.per_batch.size(), 3u);
    EXPECT_GT(a.mean, 0.0);
    EXPECT_EQ(m.parameters(), before);
}

TEST(Csv, DiagnosticsLayouts)
{
    EXPECT_EQ(eigen_csv({{3, 1, 2.5}}), "epoch,batch_id,lambda\n3,1,2.5\n");
    EXPECT_EQ(perturbation_csv({{0.5, 1.25}}), "distance,loss\n0.5,1.25\n");
}

} // namespace
} // namespace ltlab
