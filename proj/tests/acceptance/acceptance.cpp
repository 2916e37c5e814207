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

// Prints one PASS/FAIL line per acceptance criterion. Exit status is 0 only
// when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "CLI11.hpp"
#include "ltlab/archive.hpp"
#include "ltlab/checkpoint.hpp"
#include "ltlab/config.hpp"
#include "ltlab/csv.hpp"
#include "ltlab/diagnostics.hpp"
#include "ltlab/grad_check.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ltlab;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradQuadTol = 1e-6;
constexpr double kHvpTol = 1e-3;
constexpr double kEigenTol = 0.01;
constexpr double kScheduleTol = 1e-12;
constexpr double kAbsorbTol = 1e-5;
constexpr double kLabelTol = 1e-12;
constexpr double kKdWorkedTol = 1e-5;
constexpr double kSwishCeiling = 0.05;
constexpr double kSparsityRatio = 10.0;
constexpr int kFuzzCases = 1000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Options {
    std::set<int> only;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string data = LTLAB_SOURCE_DIR "/data/digits.ltkt";
    std::string configs = LTLAB_SOURCE_DIR "/configs";
    bool verbose = false;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string pct(double v)
{
    return fmt("%.2f%%", 100.0 * v);
}

void log(const Options& o, const std::string& line)
{
    if (o.verbose)
        std::cerr << "  " << line << std::endl;
}

// ---------------------------------------------------------------- 1

template <class T>
BasicTensor<T> normal_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    BasicTensor<T> t(std::move(shape));
    for (auto& v : t.data())
        v = T(n(rng));
    return t;
}

BasicTensor<double> soft_rows(std::size_t rows, std::size_t k, std::mt19937_64& rng)
{
    BasicTensor<double> t({rows, k});
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            s += t[r * k + c] = u(rng);
        for (std::size_t c = 0; c < k; ++c)
            t[r * k + c] /= s;
    }
    return t;
}

NodeId activation_node(GraphD& g, NodeId x, int which)
{
    switch (which % 3) {
    case 0: return g.relu(x);
    case 1: return g.swish(x);
    default: return g.mish(x);
    }
}

// One random graph; the variant cycles through four families so every op
// kind appears across the set.
GraphD random_graph(int index, GraphD::Bindings& in, std::mt19937_64& rng)
{
    GraphD g;
    auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
    const std::size_t batch = pick(2, 4), k = pick(2, 4);
    const int act = int(rng() % 3);
    switch (index % 4) {
    case 0: { // dense stack + cross entropy
        const std::size_t d = pick(2, 5), h = pick(2, 6);
        const NodeId x = g.input("x"), y = g.input("y");
        NodeId z = g.add_bias(g.matmul(x, g.parameter("w1", normal_tensor<double>({d, h}, rng, 0.7))),
                              g.parameter("b1", normal_tensor<double>({h}, rng, 0.3)));
        z = activation_node(g, z, act);
        z = g.add_bias(g.matmul(z, g.parameter("w2", normal_tensor<double>({h, k}, rng, 0.7))),
                       g.parameter("b2", normal_tensor<double>({k}, rng, 0.3)));
        g.set_root(g.soft_cross_entropy(z, y));
        in.emplace("x", normal_tensor<double>({batch, d}, rng));
        in.emplace("y", soft_rows(batch, k, rng));
        break;
    }
    case 1: { // conv + batch norm + residual add + pooling
        const std::size_t c = pick(1, 2), f = pick(2, 3), hw = pick(4, 5);
        const ConvAttr attr{1, 1};
        const NodeId x = g.input("x"), y = g.input("y");
        const bool bias = rng() % 2;
        std::optional<NodeId> cb;
        if (bias)
            cb = g.parameter("cb", normal_tensor<double>({f}, rng, 0.2));
        const NodeId c1 = g.conv2d(x, g.parameter("cw", normal_tensor<double>({f, c, 3, 3}, rng, 0.5)), cb, attr);
        const NodeId bn = g.batch_norm(c1, g.parameter("gamma", normal_tensor<double>({f}, rng, 1.0)),
                                       g.parameter("beta", normal_tensor<double>({f}, rng, 0.3)), {});
        const NodeId a = activation_node(g, g.add(bn, c1), act + 1);
        const NodeId p = g.global_avg_pool(a);
        const NodeId z = g.matmul(p, g.parameter("head", normal_tensor<double>({f, k}, rng, 0.7)));
        g.set_root(g.soft_cross_entropy(z, y));
        in.emplace("x", normal_tensor<double>({batch + 1, c, hw, hw}, rng));
        in.emplace("y", soft_rows(batch + 1, k, rng));
        break;
    }
    case 2: { // strided conv + flatten + log-softmax weighted sum / mean
        const std::size_t f = pick(2, 3);
        const ConvAttr attr{2, 0};
        const NodeId x = g.input("x");
        const NodeId c1 = g.conv2d(x, g.parameter("cw", normal_tensor<double>({f, 1, 3, 3}, rng, 0.5)),
                                   g.parameter("cb", normal_tensor<double>({f}, rng, 0.2)), attr);
        const NodeId flat = g.flatten(activation_node(g, c1, act + 2));
        const std::size_t width = f * 2 * 2;
        const NodeId z = g.matmul(flat, g.parameter("w", normal_tensor<double>({width, k}, rng, 0.5)));
        const NodeId ls = g.log_softmax(z);
        const NodeId weighted = g.mul(ls, g.parameter("m", normal_tensor<double>({batch, k}, rng)));
        g.set_root(rng() % 2 ? g.sum(weighted) : g.mean(weighted));
        in.emplace("x", normal_tensor<double>({batch, 1, 5, 5}, rng));
        break;
    }
    default: { // softmax head and distillation against a frozen teacher
        const std::size_t d = pick(2, 4);
        const NodeId x = g.input("x");
        const NodeId z = g.matmul(x, g.parameter("w", normal_tensor<double>({d, k}, rng, 0.8)));
        const NodeId teacher = g.parameter("teacher", normal_tensor<double>({batch, k}, rng), false);
        const NodeId kd = g.distill_kl(activation_node(g, z, act), teacher, {1.0 + double(rng() % 4), 2.0});
        const NodeId sm = g.sum(g.mul(g.softmax(z), g.parameter("v", normal_tensor<double>({batch, k}, rng))));
        g.set_root(g.add(kd, sm));
        in.emplace("x", normal_tensor<double>({batch, d}, rng));
        break;
    }
    }
    return g;
}

Outcome criterion_gradients(const Options&)
{
    std::mt19937_64 rng(20260101);
    double worst = 0.0;
    std::size_t checked = 0;
    std::set<OpKind> covered;
    for (int i = 0; i < 20; ++i) {
        GraphD::Bindings in;
        GraphD g = random_graph(i, in, rng);
        const GradCheckResult r = grad_check(g, in, GradCheckOptions{1e-5, 4096, std::uint64_t(i)});
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        for (NodeId id = 0; id < g.size(); ++id)
            covered.insert(g.node(id).kind);
    }
    double worst_quad = 0.0;
    for (int i = 0; i < 5; ++i) {
        GraphD q;
        const std::size_t n = 3 + std::size_t(i);
        const NodeId w = q.parameter("w", normal_tensor<double>({1, n}, rng));
        const NodeId a = q.parameter("a", normal_tensor<double>({n, n}, rng), false);
        q.set_root(q.sum(q.mul(q.matmul(w, a), w)));
        worst_quad = std::max(worst_quad, grad_check(q, {}).max_rel_error);
    }
    const std::size_t kinds = std::size_t(OpKind::kDistillKL) + 1;
    std::ostringstream d;
    d << "max rel err " << fmt("%.2e", worst) << " (< " << fmt("%.0e", kGradTol) << ") over " << checked
      << " coords, quadratics " << fmt("%.2e", worst_quad) << " (< " << fmt("%.0e", kGradQuadTol) << "), op kinds "
      << covered.size() << "/" << kinds;
    return {worst < kGradTol && worst_quad < kGradQuadTol && covered.size() == kinds, d.str()};
}

// ---------------------------------------------------------------- 2

// Oracle built straight on the graph: column j of the Hessian is the
// central difference of the full backward() gradient along coordinate j, on
// a 64-bit copy of the model graph.
Eigen::MatrixXd oracle_hessian(const Model& m, const Batch& b, double step)
{
    GraphD g = GraphD::cast_from(m.graph());
    g.set_root(m.cross_entropy_node());
    g.set_training(false);
    g.set_update_running_stats(false);
    const GraphD::Bindings in{{"input", tensor_cast<double>(b.inputs)}, {"target", tensor_cast<double>(b.targets)}};
    std::vector<std::pair<NodeId, std::size_t>> coords;
    for (NodeId id : g.parameters())
        for (std::size_t i = 0; i < g.node(id).value.size(); ++i)
            coords.emplace_back(id, i);
    const auto n = Eigen::Index(coords.size());
    auto grad = [&] {
        g.forward(in);
        g.backward();
        Eigen::VectorXd out(n);
        Eigen::Index k = 0;
        for (NodeId id : g.parameters())
            for (double v : std::as_const(g.node(id).value).grad())
                out[k++] = v;
        return out;
    };
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double& w = g.node(coords[std::size_t(j)].first).value[coords[std::size_t(j)].second];
        const double saved = w;
        w = saved + step;
        const Eigen::VectorXd gp = grad();
        w = saved - step;
        const Eigen::VectorXd gm = grad();
        w = saved;
        h.col(j) = (gp - gm) / (2.0 * step);
    }
    return 0.5 * (h + h.transpose());
}

Outcome criterion_hvp(const Options&)
{
    const Dataset blobs = make_blobs(240, 4, 3, 1.5, 17);
    Model m = Model::build(tiny_mlp({4}, 6, 3), 17);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 32;
    tc.seed = 17;
    tc.optimizer.lr0 = 0.05;
    train(m, nullptr, {}, blobs, blobs, tc);
    const std::size_t params = m.parameter_count();
    const Batch batch = sample_batch(blobs, 64, 3);
    const Eigen::MatrixXd h = oracle_hessian(m, batch, 1e-3);

    ModelObjective obj(m, nullptr, {batch});
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> v(obj.dim());
        for (double& x : v)
            x = n(rng);
        const auto hv = hvp(obj, v, 1e-3);
        const Eigen::VectorXd expect = h * Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
        const Eigen::VectorXd got = Eigen::Map<const Eigen::VectorXd>(hv.data(), Eigen::Index(hv.size()));
        worst = std::max(worst, (got - expect).norm() / expect.norm());
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    const double top = es.eigenvalues().maxCoeff();
    const EigenEstimate e = power_iteration(obj, {1e-3, 1000, 1e-10, 9});
    obj.restore();
    const double eig_err = std::abs(e.lambda - top) / std::abs(top);
    std::ostringstream d;
    d << params << " params, hvp rel err " << fmt("%.2e", worst) << " (< " << fmt("%.0e", kHvpTol)
      << "), power lambda " << fmt("%.6g", e.lambda) << " vs oracle " << fmt("%.6g", top) << " ("
      << fmt("%.3f%%", 100.0 * eig_err) << " < 1%)";
    return {params <= 60 && worst < kHvpTol && eig_err < kEigenTol, d.str()};
}

// ---------------------------------------------------------------- 3

Outcome criterion_schedule(const Options&)
{
    const auto s = imp_schedule(0.2, 11);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double expect = 1.0;
        for (std::size_t k = 0; k <= i; ++k)
            expect *= 0.8;
        worst = std::max(worst, std::abs(s[i] - (1.0 - expect)));
    }
    const int grid[] = {20, 36, 49, 59, 67, 74, 79, 83, 87, 89, 91};
    bool grid_ok = s.size() == 11;
    std::string shown;
    for (std::size_t i = 0; i < s.size() && i < 11; ++i) {
        grid_ok = grid_ok && std::lround(100.0 * s[i]) == grid[i];
        shown += (i ? "/" : "") + std::to_string(std::lround(100.0 * s[i]));
    }
    return {worst <= kScheduleTol && grid_ok,
            "max dev " + fmt("%.1e", worst) + " (<= 1e-12), grid " + shown + "%"};
}

// ---------------------------------------------------------------- 4

struct MaskAudit {
    std::map<int, Mask> masks;
    double worst_mass = 0.0;
    std::size_t steps = 0;
    bool nested = true;
    int runs = 0;

    PipelineHooks hooks(const Options& o)
    {
        PipelineHooks h;
        h.on_mask = [this](int round, const Mask& m) {
            if (round == 1)
                masks.clear();
            if (round > 1 && masks.count(round - 1))
                nested = nested && is_nested(m, masks.at(round - 1));
            masks.insert_or_assign(round, m);
        };
        h.on_step = [this](const std::string& label, const Model& model, int, std::size_t) {
            int level = 0;
            if (label.rfind("imp-round-", 0) == 0)
                level = std::stoi(label.substr(10)) - 1;
            else if (auto p = label.find("-level-"); p != std::string::npos)
                level = std::stoi(label.substr(p + 7));
            if (level == 0)
                return;
            worst_mass = std::max(worst_mass, masked_weight_mass(model, masks.at(level)));
            ++steps;
        };
        h.log = [&o](const std::string& line) { log(o, line); };
        return h;
    }
};

// ---------------------------------------------------------------- 5

Outcome criterion_absorption(const Options& o)
{
    auto [train_set, test] = load_digits(o.data);
    const Batch batch = sample_batch(train_set, 64, 1);
    Model m = Model::build(mini_resnet8({1, 8, 8}, 10), 5);
    const Tensor base = m.logits_batch_stats(batch.inputs);
    double worst = 0.0;
    int blocks = 0;
    for (const std::string& name : m.prunable_names()) {
        if (m.param(name).rank() != 4)
            continue;
        ++blocks;
        for (float c : {0.25f, 4.0f}) {
            const Tensor saved = m.param(name);
            for (float& v : m.param(name).data())
                v *= c;
            const Tensor out = m.logits_batch_stats(batch.inputs);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) {
                num = std::max(num, std::abs(double(out[i]) - double(base[i])));
                den = std::max(den, std::abs(double(base[i])));
            }
            worst = std::max(worst, num / den);
            m.param(name) = saved;
        }
    }
    return {worst < kAbsorbTol && blocks > 0, std::to_string(blocks) + " conv blocks x {0.25, 4}: max rel change "
                                                  + fmt("%.2e", worst) + " (< 1e-5)"};
}

// ---------------------------------------------------------------- 6

Outcome criterion_labels(const Options&)
{
    std::vector<double> onehot(100, 0.0);
    onehot[42] = 1.0;
    const SoftTarget t = smooth_labels(onehot, 0.1, 100);
    const double sum = std::accumulate(t.probs.begin(), t.probs.end(), 0.0);
    const double hot_err = std::abs(t.probs[42] - 0.901);
    double cold_err = 0.0;
    for (std::size_t k = 0; k < 100; ++k)
        if (k != 42)
            cold_err = std::max(cold_err, std::abs(t.probs[k] - 0.001));
    const std::vector<double> z{0.3, -1.2, 2.0};
    const double kd_self = kd_loss(z, z, 4.0);
    const double worked = kd_loss(std::vector<double>{0.0, 0.0}, std::vector<double>{std::log(3.0), 0.0}, 1.0);
    const bool ok = std::abs(sum - 1.0) <= kLabelTol && hot_err <= kLabelTol && cold_err <= kLabelTol
                    && kd_self == 0.0 && std::abs(worked - 0.130812) <= kKdWorkedTol;
    std::ostringstream d;
    d << "sum-1 " << fmt("%.1e", sum - 1.0) << ", hot " << fmt("%.12g", t.probs[42]) << ", cold "
      << fmt("%.12g", t.probs[0]) << ", kd(t,t) " << fmt("%g", kd_self) << ", worked kd " << fmt("%.7f", worked);
    return {ok, d.str()};
}

// ---------------------------------------------------------------- shared runs

ExperimentConfig desk_config(const Options& o, std::uint64_t seed, const std::string& extra)
{
    const std::string text = "model.arch = miniresnet8\ndata.dataset = digits\ntrainer.epochs = 20\n"
                             "trainer.batch_size = 128\nprune.per_round = 0.2\n"
                             + extra;
    return parse_config_text(text, {{"seed", std::to_string(seed)}, {"data.path", o.data}});
}

const char* kAtTrt = "tweaks.skips = true\ntweaks.activation = swish\ntweaks.rescale_init = true\n"
                     "recipe.loss = ls\nrecipe.alpha = 0.1\n";

const ArmResult& arm_at(const RunReport& r, const std::string& arm, int level)
{
    for (const ArmResult& a : r.arms)
        if (a.arm == arm && a.level == level)
            return a;
    throw std::runtime_error("missing arm " + arm + " level " + std::to_string(level));
}

struct TweakRuns {
    std::vector<RunReport> reports;
    MaskAudit audit;
    bool done = false;
};

TweakRuns& tweak_runs(const Options& o)
{
    static TweakRuns runs;
    if (runs.done)
        return runs;
    for (std::uint64_t seed : o.seeds) {
        log(o, "imp/at+trt run, seed " + std::to_string(seed));
        const ExperimentConfig cfg
            = desk_config(o, seed, std::string(kAtTrt) + "prune.rounds = 10\npipeline.levels = 2\n");
        runs.reports.push_back(run_pipeline(cfg, {}, runs.audit.hooks(o)));
        ++runs.audit.runs;
    }
    runs.done = true;
    return runs;
}

Outcome criterion_masks(const Options& o)
{
    const TweakRuns& runs = tweak_runs(o);
    std::ostringstream d;
    d << runs.audit.runs << " runs, " << runs.audit.steps << " masked steps, max masked mass "
      << fmt("%g", runs.audit.worst_mass) << ", nested " << (runs.audit.nested ? "yes" : "no");
    return {runs.audit.steps > 0 && runs.audit.worst_mass == 0.0 && runs.audit.nested, d.str()};
}

// ---------------------------------------------------------------- 7

struct ActivationPair {
    Checkpoint relu, swish;
    std::uint64_t seed = 0;
    bool done = false;
};

ActivationPair& activation_pair()
{
    static ActivationPair pair;
    return pair;
}

Outcome criterion_activation_sparsity(const Options& o)
{
    log(o, "imp x8 with relu / swish retraining");
    ExperimentConfig cfg = desk_config(o, o.seeds.front(),
                                       "prune.rounds = 8\ntweaks.activation = swish\npipeline.levels = last\n");
    const RunReport r = run_pipeline(cfg, {}, PipelineHooks{{}, {}, [&o](const std::string& l) { log(o, l); }});
    const ArmResult& relu = arm_at(r, "vanilla", 8);
    const ArmResult& swish = arm_at(r, "tweaked", 8);
    activation_pair() = {relu.final, swish.final, r.seed, true};
    auto [train_set, test] = load_digits(o.data);
    Model mr = restore(relu.final), ms = restore(swish.final);
    const auto sr = activation_sparsity(mr, test.images);
    const auto ss = activation_sparsity(ms, test.images);
    bool ok = relu.sparsity >= 0.8 && sr.size() == ss.size();
    std::ostringstream d;
    d << "weight sparsity " << pct(relu.sparsity) << "; relu/swish per layer:";
    for (std::size_t i = 0; i < sr.size() && i < ss.size(); ++i) {
        ok = ok && sr[i].fraction > kSparsityRatio * ss[i].fraction && ss[i].fraction < kSwishCeiling;
        d << " " << sr[i].layer << " " << fmt("%.1f", 100.0 * sr[i].fraction) << "/"
          << fmt("%.2f", 100.0 * ss[i].fraction);
    }
    return {ok, d.str()};
}

// ---------------------------------------------------------------- 8

Outcome criterion_tweak_benefit(const Options& o)
{
    const TweakRuns& runs = tweak_runs(o);
    double sum_t = 0.0, sum_v = 0.0;
    int nonneg = 0;
    bool sparse_enough = true;
    std::ostringstream d;
    d << "levels 9+10, per-seed tweaked-vanilla:";
    for (const RunReport& r : runs.reports) {
        double t = 0.0, v = 0.0;
        for (int level : {9, 10}) {
            t += arm_at(r, "tweaked", level).test.accuracy / 2.0;
            v += arm_at(r, "vanilla", level).test.accuracy / 2.0;
        }
        sparse_enough = sparse_enough && arm_at(r, "tweaked", 10).sparsity >= 0.89;
        sum_t += t;
        sum_v += v;
        nonneg += t - v >= 0.0;
        d << " " << fmt("%+.2f", 100.0 * (t - v));
    }
    const double n = double(runs.reports.size());
    d << " pts; mean tweaked " << pct(sum_t / n) << " vs vanilla " << pct(sum_v / n) << ", non-negative in "
      << nonneg << "/" << runs.reports.size();
    return {sparse_enough && sum_t >= sum_v && nonneg >= 2, d.str()};
}

// ---------------------------------------------------------------- 9

Outcome criterion_curvature(const Options& o)
{
    const TweakRuns& runs = tweak_runs(o);
    int lower = 0;
    std::ostringstream d;
    d << "top eigenvalue swish vs relu at level 10:";
    for (std::size_t s = 0; s < runs.reports.size(); ++s) {
        const RunReport& r = runs.reports[s];
        const DataSplits data = load_data(resolve_config(r.config).data, r.seed);
        CurvatureProbe probe;
        probe.batches = probe_batches(data.train, 10, 128, r.seed);
        probe.seed = r.seed;
        double lam[2];
        int i = 0;
        for (const char* arm : {"tweaked", "vanilla"}) {
            const ArmResult& a = arm_at(r, arm, 10);
            Model m = restore(a.final);
            lam[i++] = top_eigenvalue(m, &*a.final.mask, probe).mean;
        }
        lower += lam[0] < lam[1];
        d << " " << fmt("%.3g", lam[0]) << "/" << fmt("%.3g", lam[1]);
    }
    d << "; lower in " << lower << "/" << runs.reports.size();
    const ActivationPair& pair = activation_pair();
    if (pair.done) {
        const DataSplits data = load_data(resolve_config(runs.reports.front().config).data, pair.seed);
        CurvatureProbe probe;
        probe.batches = probe_batches(data.train, 10, 128, pair.seed);
        probe.seed = pair.seed;
        Model ms = restore(pair.swish), mr = restore(pair.relu);
        d << " (info: activation-only pair of criterion 7, swish/relu "
          << fmt("%.3g", top_eigenvalue(ms, &*pair.swish.mask, probe).mean) << "/"
          << fmt("%.3g", top_eigenvalue(mr, &*pair.relu.mask, probe).mean) << ")";
    }
    return {lower >= 2, d.str()};
}

// ---------------------------------------------------------------- 10

Outcome criterion_isolation(const Options& o)
{
    const RawConfig over{{"seed", "5"}, {"trainer.epochs", "2"}, {"prune.rounds", "2"}, {"data.path", o.data}};
    const RunReport v = run_pipeline(parse_config(fs::path(o.configs) / "vanilla.cfg", over));
    const RunReport t = run_pipeline(parse_config(fs::path(o.configs) / "at_trt.cfg", over));
    const bool tweaked = std::any_of(t.rows.begin(), t.rows.end(), [](const ReportRow& r) { return r.arm == "tweaked"; });
    return {v.dense_stage_hash == t.dense_stage_hash && v.ticket_hash == t.ticket_hash && tweaked,
            "dense " + v.dense_stage_hash + " / " + t.dense_stage_hash + ", tickets " + v.ticket_hash + " / "
                + t.ticket_hash};
}

// ---------------------------------------------------------------- 11

Outcome criterion_omp(const Options& o)
{
    int wins = 0;
    bool comparable = true;
    std::ostringstream d;
    d << "tweaked/vanilla test acc:";
    for (std::uint64_t seed : o.seeds) {
        log(o, "omp run, seed " + std::to_string(seed));
        const RunReport r = run_pipeline(desk_config(o, seed, std::string(kAtTrt) + "prune.mode = omp\n"
                                                                                    "prune.target_sparsity = 0.89\n"),
                                         {}, PipelineHooks{{}, {}, [&o](const std::string& l) { log(o, l); }});
        const ArmResult& t = arm_at(r, "tweaked", 1);
        const ArmResult& v = arm_at(r, "vanilla", 1);
        const CsvTable csv = CsvTable::parse(report_csv({{"omp", r}}));
        comparable = comparable && std::abs(t.sparsity - 0.89) < 1e-3 && csv.rows.size() == 3
                     && csv.header.size() == 8;
        wins += t.test.accuracy >= v.test.accuracy;
        d << " " << pct(t.test.accuracy) << "/" << pct(v.test.accuracy);
    }
    d << "; tweaked >= vanilla in " << wins << "/" << o.seeds.size();
    return {comparable && wins >= 2, d.str()};
}

// ---------------------------------------------------------------- 12

Outcome criterion_persistence(const Options&)
{
    std::mt19937_64 rng(12);
    int ok = 0;
    for (int trial = 0; trial < kFuzzCases; ++trial) {
        Archive a;
        const std::size_t entries = rng() % 6;
        for (std::size_t e = 0; e < entries; ++e) {
            std::string name = "t" + std::to_string(e) + "_" + std::to_string(rng() % 1000);
            Shape shape;
            for (std::size_t r = 0, rank = rng() % 4; r < rank; ++r)
                shape.push_back(1 + rng() % 6);
            if (rng() % 3) {
                Tensor t(shape);
                for (float& v : t.data()) {
                    const auto bits = std::uint32_t(rng());
                    std::memcpy(&v, &bits, 4);
                }
                a.insert_or_assign(name, t);
            } else {
                ByteTensor t(shape);
                for (auto& v : t.data())
                    v = std::uint8_t(rng());
                a.insert_or_assign(name, t);
            }
        }
        const std::string bytes = serialize_archive(a);
        ok += serialize_archive(parse_archive(bytes)) == bytes;
    }
    Model m = Model::build(mini_resnet8({1, 8, 8}, 10), 12);
    const Mask mask = global_magnitude_prune(m, Mask::dense(m), 0.5);
    apply_mask(m, mask);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor x({16, 1, 8, 8});
    for (float& v : x.data())
        v = n(rng);
    m.loss_and_grad(x, Tensor({16, 10}, 0.1f), LossHead::kCrossEntropy, true, true);
    const fs::path path = fs::temp_directory_path() / "ltlab_acceptance_ckpt.ltkt";
    save_checkpoint(path, capture(m, 12, 1, &mask));
    const Checkpoint back = load_checkpoint(path);
    fs::remove(path);
    Model r = restore(back);
    const Tensor a = m.logits(x), b = r.logits(x);
    const bool same = a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * 4) == 0
                      && back.mask && *back.mask == mask;
    return {ok == kFuzzCases && same, "fuzz " + std::to_string(ok) + "/" + std::to_string(kFuzzCases)
                                          + " byte-exact, checkpoint forward " + (same ? "bit-identical" : "differs")};
}

} // namespace

int main(int argc, char** argv)
{
    Options o;
    std::vector<int> only;
    CLI::App app{"Acceptance checks"};
    app.add_option("--only", only, "Criterion numbers to run (default: all)")->delimiter(',');
    app.add_option("--seeds", o.seeds, "Seeds for the multi-seed experiments")->delimiter(',');
    app.add_option("--data", o.data, "Digit archive");
    app.add_flag("-v,--verbose", o.verbose, "Progress on stderr");
    CLI11_PARSE(app, argc, argv);
    o.only = {only.begin(), only.end()};

    const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria{
        {"gradient correctness", criterion_gradients},
        {"hvp oracle equivalence", criterion_hvp},
        {"imp schedule algebra", criterion_schedule},
        {"mask discipline", criterion_masks},
        {"bn absorption", criterion_absorption},
        {"label math", criterion_labels},
        {"activation sparsity ordering", criterion_activation_sparsity},
        {"directional tweak benefit", criterion_tweak_benefit},
        {"curvature ordering", criterion_curvature},
        {"tweaks isolation", criterion_isolation},
        {"omp generalization", criterion_omp},
        {"persistence", criterion_persistence},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!o.only.empty() && !o.only.count(id))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second(o);
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !out.pass;
        std::printf("%s  %2d  %-30s %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    out.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
