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

#include "ltlab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <type_traits>

#include "ltlab/archive.hpp"
#include "ltlab/error.hpp"

namespace ltlab {

namespace {

struct KeyDef {
    const char* key;
    const char* fallback; // nullptr = required
};

const std::vector<KeyDef>& key_table()
{
    static const std::vector<KeyDef> keys = {
        {"seed", "0"},
        {"model.arch", nullptr},
        {"data.dataset", nullptr},
        {"data.path", "data/digits.ltkt"},
        {"data.split", "0.9"},
        {"data.blobs.samples", "800"},
        {"data.blobs.dim", "16"},
        {"data.blobs.classes", "4"},
        {"data.blobs.spread", "1.0"},
        {"data.blobs.test_fraction", "0.2"},
        {"trainer.epochs", nullptr},
        {"trainer.batch_size", "128"},
        {"trainer.lr", "0.1"},
        {"trainer.momentum", "0.9"},
        {"trainer.weight_decay", "2e-4"},
        {"trainer.lr_decay_epochs", "auto"},
        {"trainer.lr_decay_factor", "0.1"},
        {"trainer.checkpoint_epochs", ""},
        {"trainer.keep_best", "true"},
        {"prune.mode", "imp"},
        {"prune.per_round", "0.2"},
        {"prune.rounds", "1"},
        {"prune.target_sparsity", "0"},
        {"pipeline.baseline", "true"},
        {"pipeline.levels", "all"},
        {"tweaks.skips", "false"},
        {"tweaks.activation", "relu"},
        {"tweaks.rescale_init", "false"},
        {"tweaks.rewind", "false"},
        {"recipe.loss", "hard"},
        {"recipe.alpha", "0.1"},
        {"recipe.tau", "4"},
        {"recipe.teacher", ""},
        {"rewind.fraction", "0.18"},
        {"rescale.lo", "0.25"},
        {"rescale.hi", "4"},
        {"rescale.grid", "0.5,0.70710678118654752,1,1.4142135623730951,2"},
        {"rescale.passes", "5"},
        {"rescale.inner_lr", "0.1"},
        {"rescale.batch", "128"},
        {"diagnostics.probe_batches", "10"},
        {"diagnostics.probe_batch_size", "128"},
        {"diagnostics.eps", "1e-3"},
        {"diagnostics.max_iters", "50"},
        {"diagnostics.tol", "1e-4"},
        {"diagnostics.landscape.mode", "weight"},
        {"diagnostics.landscape.resolution", "21"},
        {"diagnostics.landscape.extent", "1"},
        {"diagnostics.landscape.clamp", "8"},
        {"diagnostics.perturb.distances", "-1,-0.75,-0.5,-0.25,0,0.25,0.5,0.75,1"},
    };
    return keys;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& what)
{
    throw ValidationError(key + ": " + what);
}

class Reader {
public:
    explicit Reader(const RawConfig& values) : values_(values) {}

    const std::string& text(const std::string& key) const { return values_.at(key); }

    long long integer(const std::string& key) const
    {
        const std::string& s = text(key);
        long long v = 0;
        auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || end != s.data() + s.size())
            bad(key, "expected an integer, got '" + s + "'");
        return v;
    }

    long long integer(const std::string& key, long long lo, long long hi) const
    {
        const long long v = integer(key);
        if (v < lo || v > hi)
            bad(key, "must lie in [" + std::to_string(lo) + "," + std::to_string(hi) + "], got " + std::to_string(v));
        return v;
    }

    std::uint64_t unsigned_integer(const std::string& key) const
    {
        const std::string& s = text(key);
        std::uint64_t v = 0;
        auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || end != s.data() + s.size())
            bad(key, "expected a non-negative integer, got '" + s + "'");
        return v;
    }

    static double parse_real(const std::string& key, const std::string& s)
    {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
            bad(key, "expected a finite real number, got '" + s + "'");
        return v;
    }

    double real(const std::string& key) const { return parse_real(key, text(key)); }

    bool boolean(const std::string& key) const
    {
        const std::string& s = text(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on")
            return true;
        if (s == "false" || s == "0" || s == "no" || s == "off")
            return false;
        bad(key, "expected true or false, got '" + s + "'");
    }

    std::vector<double> reals(const std::string& key) const
    {
        std::vector<double> out;
        std::istringstream in(text(key));
        std::string item;
        while (std::getline(in, item, ','))
            out.push_back(parse_real(key, trim(item)));
        return out;
    }

    std::vector<int> integers(const std::string& key) const
    {
        std::vector<int> out;
        for (double v : reals(key)) {
            if (v != std::floor(v) || std::abs(v) > 1e9)
                bad(key, "expected a list of integers");
            out.push_back(int(v));
        }
        return out;
    }

    std::string choice(const std::string& key, std::initializer_list<const char*> options) const
    {
        const std::string& s = text(key);
        std::string listed;
        for (const char* o : options) {
            if (s == o)
                return s;
            listed += (listed.empty() ? "" : "|") + std::string(o);
        }
        bad(key, "expected one of " + listed + ", got '" + s + "'");
    }

private:
    const RawConfig& values_;
};

void check_range(const std::string& key, double v, double lo, double hi, bool lo_open, bool hi_open)
{
    const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
    if (!ok) {
        std::ostringstream msg;
        msg << "must lie in " << (lo_open ? "(" : "[") << lo << "," << hi << (hi_open ? ")" : "]") << ", got " << v;
        bad(key, msg.str());
    }
}

std::string exact(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    // Prefer the short form when it parses back to the same value.
    std::snprintf(buf, sizeof buf, "%.15g", v);
    if (std::strtod(buf, nullptr) == v)
        s = buf;
    return s;
}

template <typename T>
std::string join(const std::vector<T>& values)
{
    std::string out;
    for (const T& v : values) {
        if (!out.empty())
            out += ",";
        if constexpr (std::is_floating_point_v<T>)
            out += exact(v);
        else
            out += std::to_string(v);
    }
    return out;
}

} // namespace

bool any_tweak(const TweakConfig& t)
{
    return t.skips || t.activation != ActivationKind::kRelu || t.rescale_init || t.rewind
           || t.loss.kind != LossKind::kHard;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const KeyDef& k : key_table())
        out.emplace_back(k.key);
    return out;
}

RawConfig parse_raw_config(std::string_view text)
{
    RawConfig raw;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        const std::string body = trim(line);
        if (body.empty())
            continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty())
            throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
        if (!raw.emplace(key, value).second)
            throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return raw;
}

ExperimentConfig resolve_config(const RawConfig& raw)
{
    RawConfig values;
    for (const auto& [key, value] : raw) {
        bool known = false;
        for (const KeyDef& k : key_table())
            known = known || key == k.key;
        if (!known)
            bad(key, "unknown key");
        values[key] = value;
    }
    for (const KeyDef& k : key_table()) {
        if (values.count(k.key))
            continue;
        if (!k.fallback)
            bad(k.key, "required key is missing");
        values[k.key] = k.fallback;
    }
    const Reader r(values);
    ExperimentConfig c;

    c.seed = r.unsigned_integer("seed");
    c.arch = r.choice("model.arch", {"mlp-300-100", "miniresnet8", "tiny-mlp"});

    c.data.dataset = r.choice("data.dataset", {"digits", "blobs"});
    c.data.path = r.text("data.path");
    c.data.split = r.real("data.split");
    check_range("data.split", c.data.split, 0.0, 1.0, true, true);
    c.data.blob_samples = std::size_t(r.integer("data.blobs.samples", 8, 10'000'000));
    c.data.blob_dim = std::size_t(r.integer("data.blobs.dim", 1, 1'000'000));
    c.data.blob_classes = std::size_t(r.integer("data.blobs.classes", 2, 255));
    c.data.blob_spread = r.real("data.blobs.spread");
    check_range("data.blobs.spread", c.data.blob_spread, 0.0, 1e6, true, false);
    c.data.blob_test_fraction = r.real("data.blobs.test_fraction");
    check_range("data.blobs.test_fraction", c.data.blob_test_fraction, 0.0, 1.0, true, true);

    TrainConfig& t = c.trainer;
    t.seed = c.seed;
    t.epochs = int(r.integer("trainer.epochs", 0, 1'000'000));
    t.batch_size = std::size_t(r.integer("trainer.batch_size", 2, 1'000'000));
    t.optimizer.lr0 = r.real("trainer.lr");
    check_range("trainer.lr", t.optimizer.lr0, 0.0, 1e3, true, false);
    t.optimizer.momentum = r.real("trainer.momentum");
    check_range("trainer.momentum", t.optimizer.momentum, 0.0, 1.0, false, true);
    t.optimizer.weight_decay = r.real("trainer.weight_decay");
    check_range("trainer.weight_decay", t.optimizer.weight_decay, 0.0, 1.0, false, false);
    const double factor = r.real("trainer.lr_decay_factor");
    check_range("trainer.lr_decay_factor", factor, 0.0, 1.0, true, false);
    const std::string& decay = r.text("trainer.lr_decay_epochs");
    LrSchedule schedule;
    if (decay == "auto") {
        for (auto [at, _] : step_schedule(t.epochs))
            schedule.emplace_back(at, factor);
    } else if (decay != "none" && !decay.empty()) {
        for (int at : r.integers("trainer.lr_decay_epochs")) {
            if (at < 0)
                bad("trainer.lr_decay_epochs", "epochs must be non-negative");
            schedule.emplace_back(at, factor);
        }
    }
    t.optimizer.schedule = schedule;
    t.checkpoint_epochs = r.text("trainer.checkpoint_epochs").empty() ? std::vector<int>{}
                                                                       : r.integers("trainer.checkpoint_epochs");
    for (int e : t.checkpoint_epochs)
        if (e < 0 || e > t.epochs)
            bad("trainer.checkpoint_epochs", "epoch " + std::to_string(e) + " outside [0," + std::to_string(t.epochs) + "]");
    t.keep_best = r.boolean("trainer.keep_best");

    c.prune.mode = r.choice("prune.mode", {"imp", "omp"}) == "imp" ? PruneMode::kImp : PruneMode::kOmp;
    c.prune.per_round_fraction = r.real("prune.per_round");
    check_range("prune.per_round", c.prune.per_round_fraction, 0.0, 1.0, true, true);
    c.prune.rounds = int(r.integer("prune.rounds", 1, 1000));
    c.prune.target_sparsity = r.real("prune.target_sparsity");
    if (c.prune.mode == PruneMode::kOmp)
        check_range("prune.target_sparsity", c.prune.target_sparsity, 0.0, 1.0, true, true);
    else
        check_range("prune.target_sparsity", c.prune.target_sparsity, 0.0, 1.0, false, true);

    c.baseline = r.boolean("pipeline.baseline");
    {
        const std::string& levels = r.text("pipeline.levels");
        if (levels == "all")
            c.retrain_levels = 0;
        else if (levels == "last")
            c.retrain_levels = 1;
        else
            c.retrain_levels = int(r.integer("pipeline.levels", 1, 1000));
    }

    TweakConfig& w = c.tweaks;
    w.skips = r.boolean("tweaks.skips");
    w.activation = parse_activation(r.choice("tweaks.activation", {"relu", "swish", "mish"}));
    w.rescale_init = r.boolean("tweaks.rescale_init");
    w.rewind = r.boolean("tweaks.rewind");
    w.loss.kind = parse_loss_kind(r.choice("recipe.loss", {"hard", "ls", "kd"}));
    w.loss.alpha = r.real("recipe.alpha");
    check_range("recipe.alpha", w.loss.alpha, 0.0, 1.0, false, false);
    w.loss.tau = r.real("recipe.tau");
    check_range("recipe.tau", w.loss.tau, 0.0, 1e6, true, false);
    w.loss.teacher = r.text("recipe.teacher");
    w.rewind_fraction = r.real("rewind.fraction");
    check_range("rewind.fraction", w.rewind_fraction, 0.0, 1.0, false, false);
    w.rescale.lo = r.real("rescale.lo");
    check_range("rescale.lo", w.rescale.lo, 0.0, 1.0, true, true);
    w.rescale.hi = r.real("rescale.hi");
    check_range("rescale.hi", w.rescale.hi, 1.0, 1e6, true, false);
    w.rescale.grid = r.reals("rescale.grid");
    if (w.rescale.grid.empty())
        bad("rescale.grid", "must list at least one multiplier");
    for (double g : w.rescale.grid)
        check_range("rescale.grid", g, 0.0, 1e6, true, false);
    w.rescale.passes = int(r.integer("rescale.passes", 1, 1000));
    w.rescale.inner_lr = r.real("rescale.inner_lr");
    check_range("rescale.inner_lr", w.rescale.inner_lr, 0.0, 1e3, true, false);
    w.rescale_batch = std::size_t(r.integer("rescale.batch", 2, 1'000'000));

    DiagnosticsConfig& d = c.diagnostics;
    d.probe_batches = std::size_t(r.integer("diagnostics.probe_batches", 1, 100000));
    d.probe_batch_size = std::size_t(r.integer("diagnostics.probe_batch_size", 1, 1'000'000));
    d.eps = r.real("diagnostics.eps");
    check_range("diagnostics.eps", d.eps, 0.0, 1.0, true, false);
    d.max_iters = int(r.integer("diagnostics.max_iters", 1, 1'000'000));
    d.tol = r.real("diagnostics.tol");
    check_range("diagnostics.tol", d.tol, 0.0, 1.0, true, false);
    d.landscape_mode = r.choice("diagnostics.landscape.mode", {"weight", "input"});
    d.resolution = int(r.integer("diagnostics.landscape.resolution", 1, 10001));
    if (d.resolution % 2 == 0)
        bad("diagnostics.landscape.resolution", "must be odd so the grid has a centre, got " + std::to_string(d.resolution));
    d.extent = r.real("diagnostics.landscape.extent");
    check_range("diagnostics.landscape.extent", d.extent, 0.0, 1e6, true, false);
    d.clamp = r.real("diagnostics.landscape.clamp");
    check_range("diagnostics.landscape.clamp", d.clamp, 0.0, 1e12, true, false);
    d.distances = r.reals("diagnostics.perturb.distances");
    if (d.distances.empty())
        bad("diagnostics.perturb.distances", "must list at least one distance");
    return c;
}

ExperimentConfig parse_config_text(std::string_view text, const RawConfig& overrides)
{
    RawConfig raw = parse_raw_config(text);
    for (const auto& [k, v] : overrides)
        raw[k] = v;
    return resolve_config(raw);
}

ExperimentConfig parse_config(const std::filesystem::path& path, const RawConfig& overrides)
{
    if (!std::filesystem::exists(path))
        throw ValidationError("config file '" + path.string() + "' does not exist");
    return parse_config_text(read_file(path), overrides);
}

RawConfig echo_config(const ExperimentConfig& c)
{
    RawConfig e;
    e["seed"] = std::to_string(c.seed);
    e["model.arch"] = c.arch;
    e["data.dataset"] = c.data.dataset;
    e["data.path"] = c.data.path;
    e["data.split"] = exact(c.data.split);
    e["data.blobs.samples"] = std::to_string(c.data.blob_samples);
    e["data.blobs.dim"] = std::to_string(c.data.blob_dim);
    e["data.blobs.classes"] = std::to_string(c.data.blob_classes);
    e["data.blobs.spread"] = exact(c.data.blob_spread);
    e["data.blobs.test_fraction"] = exact(c.data.blob_test_fraction);
    const TrainConfig& t = c.trainer;
    e["trainer.epochs"] = std::to_string(t.epochs);
    e["trainer.batch_size"] = std::to_string(t.batch_size);
    e["trainer.lr"] = exact(t.optimizer.lr0);
    e["trainer.momentum"] = exact(t.optimizer.momentum);
    e["trainer.weight_decay"] = exact(t.optimizer.weight_decay);
    const LrSchedule schedule = t.optimizer.schedule.value_or(step_schedule(t.epochs));
    std::vector<int> decay;
    for (auto [at, _] : schedule)
        decay.push_back(at);
    e["trainer.lr_decay_epochs"] = decay.empty() ? "none" : join(decay);
    e["trainer.lr_decay_factor"] = exact(schedule.empty() ? 0.1 : schedule.front().second);
    e["trainer.checkpoint_epochs"] = join(t.checkpoint_epochs);
    e["trainer.keep_best"] = t.keep_best ? "true" : "false";
    e["prune.mode"] = c.prune.mode == PruneMode::kImp ? "imp" : "omp";
    e["prune.per_round"] = exact(c.prune.per_round_fraction);
    e["prune.rounds"] = std::to_string(c.prune.rounds);
    e["prune.target_sparsity"] = exact(c.prune.target_sparsity);
    e["pipeline.baseline"] = c.baseline ? "true" : "false";
    e["pipeline.levels"] = c.retrain_levels == 0 ? std::string("all")
                           : c.retrain_levels == 1 ? std::string("last")
                                                   : std::to_string(c.retrain_levels);
    const TweakConfig& w = c.tweaks;
    e["tweaks.skips"] = w.skips ? "true" : "false";
    e["tweaks.activation"] = std::string(to_string(w.activation));
    e["tweaks.rescale_init"] = w.rescale_init ? "true" : "false";
    e["tweaks.rewind"] = w.rewind ? "true" : "false";
    e["recipe.loss"] = std::string(to_string(w.loss.kind));
    e["recipe.alpha"] = exact(w.loss.alpha);
    e["recipe.tau"] = exact(w.loss.tau);
    e["recipe.teacher"] = w.loss.teacher;
    e["rewind.fraction"] = exact(w.rewind_fraction);
    e["rescale.lo"] = exact(w.rescale.lo);
    e["rescale.hi"] = exact(w.rescale.hi);
    e["rescale.grid"] = join(w.rescale.grid);
    e["rescale.passes"] = std::to_string(w.rescale.passes);
    e["rescale.inner_lr"] = exact(w.rescale.inner_lr);
    e["rescale.batch"] = std::to_string(w.rescale_batch);
    const DiagnosticsConfig& d = c.diagnostics;
    e["diagnostics.probe_batches"] = std::to_string(d.probe_batches);
    e["diagnostics.probe_batch_size"] = std::to_string(d.probe_batch_size);
    e["diagnostics.eps"] = exact(d.eps);
    e["diagnostics.max_iters"] = std::to_string(d.max_iters);
    e["diagnostics.tol"] = exact(d.tol);
    e["diagnostics.landscape.mode"] = d.landscape_mode;
    e["diagnostics.landscape.resolution"] = std::to_string(d.resolution);
    e["diagnostics.landscape.extent"] = exact(d.extent);
    e["diagnostics.landscape.clamp"] = exact(d.clamp);
    e["diagnostics.perturb.distances"] = join(d.distances);
    return e;
}

std::string echo_text(const ExperimentConfig& c)
{
    std::string out;
    const RawConfig e = echo_config(c);
    for (const KeyDef& k : key_table())
        out += std::string(k.key) + " = " + e.at(k.key) + "\n";
    return out;
}

} // namespace ltlab
