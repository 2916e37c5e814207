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

#include <cstring>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "ltlab/archive.hpp"
#include "ltlab/checkpoint.hpp"
#include "ltlab/config.hpp"
#include "ltlab/csv.hpp"
#include "ltlab/error.hpp"

namespace ltlab {
namespace {

namespace fs = std::filesystem;

template <class T>
bool same_bits(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

bool same_archive(const Archive& a, const Archive& b)
{
    if (a.size() != b.size())
        return false;
    for (const auto& [name, v] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second.index() != v.index())
            return false;
        const bool ok = v.index() == 0 ? same_bits(std::get<0>(v), std::get<0>(it->second))
                                       : same_bits(std::get<1>(v), std::get<1>(it->second));
        if (!ok)
            return false;
    }
    return true;
}

Archive random_archive(std::mt19937_64& rng)
{
    Archive a;
    const std::size_t entries = rng() % 6;
    for (std::size_t e = 0; e < entries; ++e) {
        std::string name;
        const std::size_t len = 1 + rng() % 12;
        for (std::size_t i = 0; i < len; ++i)
            name += char(' ' + rng() % 95);
        Shape shape;
        const std::size_t rank = rng() % 5;
        for (std::size_t r = 0; r < rank; ++r)
            shape.push_back(1 + rng() % 5);
        if (rng() % 2) {
            Tensor t(shape);
            for (float& v : t.data()) {
                const auto bits = std::uint32_t(rng());
                std::memcpy(&v, &bits, sizeof bits);
            }
            a.insert_or_assign(name, t);
        } else {
            ByteTensor t(shape);
            for (auto& v : t.data())
                v = std::uint8_t(rng());
            a.insert_or_assign(name, t);
        }
    }
    return a;
}

TEST(Archive, RandomizedRoundTrip)
{
    std::mt19937_64 rng(2026);
    for (int trial = 0; trial < 1000; ++trial) {
        const Archive a = random_archive(rng);
        const std::string bytes = serialize_archive(a);
        const Archive b = parse_archive(bytes);
        ASSERT_TRUE(same_archive(a, b)) << "trial " << trial;
        ASSERT_EQ(serialize_archive(b), bytes);
    }
}

TEST(Archive, EmptyArchiveLayout)
{
    const std::string bytes = serialize_archive({});
    EXPECT_EQ(bytes, std::string("LTKT\x01\0\0\0\0\0\0\0", 12));
    EXPECT_TRUE(parse_archive(bytes).empty());
}

TEST(Archive, TruncationReportsByteOffset)
{
    Archive a;
    a.emplace("w", Tensor({2, 3}, 1.5f));
    const std::string bytes = serialize_archive(a);
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
        try {
            parse_archive(std::string_view(bytes).substr(0, cut));
            FAIL() << "accepted truncated archive of " << cut << " bytes";
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
        }
    }
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(parse_archive(bad), ValidationError);
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(parse_archive(bad), ValidationError);
    EXPECT_THROW(parse_archive(bytes + "x"), ValidationError);
}

TEST(Archive, RandomCorruptionNeverCrashes)
{
    std::mt19937_64 rng(7);
    Archive a;
    a.emplace("block.weight", Tensor({4, 4}, 0.25f));
    a.emplace("block.mask", ByteTensor({4, 4}, 1));
    const std::string clean = serialize_archive(a);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string b = clean;
        for (int k = 0; k < 3; ++k)
            b[rng() % b.size()] = char(rng());
        try {
            parse_archive(b);
        } catch (const ValidationError&) {
        }
    }
}

TEST(Archive, FileSaveLoad)
{
    const fs::path dir = fs::temp_directory_path() / "ltlab_io_test";
    fs::create_directories(dir);
    Archive a;
    a.emplace("x", Tensor({3}, std::vector<float>{1, 2, 3}));
    save_archive(dir / "a.ltkt", a);
    EXPECT_TRUE(same_archive(load_archive(dir / "a.ltkt"), a));
    EXPECT_THROW(load_archive(dir / "missing.ltkt"), ValidationError);
    EXPECT_THROW(archive_tensor(a, "y"), ValidationError);
    fs::remove_all(dir);
}

TEST(Checkpoint, ForwardBitIdenticalAfterReload)
{
    const ArchSpec spec = mini_resnet8({1, 8, 8}, 10);
    Model m = Model::build(spec, 21);
    const Mask mask = global_magnitude_prune(m, Mask::dense(m), 0.3);
    apply_mask(m, mask);
    std::mt19937_64 rng(4);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Tensor x({5, 1, 8, 8});
    for (float& v : x.data())
        v = n(rng);
    // Move the running statistics off their defaults.
    m.logits_batch_stats(x);
    m.loss_and_grad(x, Tensor({5, 10}, 0.1f), LossHead::kCrossEntropy, true, true);

    const fs::path path = fs::temp_directory_path() / "ltlab_ckpt_test.ltkt";
    Checkpoint c = capture(m, 21, 3, &mask);
    c.extra["note"] = "x";
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    fs::remove(path);
    EXPECT_EQ(back.epoch, 3);
    EXPECT_EQ(back.seed, 21u);
    EXPECT_EQ(back.extra["note"], "x");
    ASSERT_TRUE(back.mask.has_value());
    EXPECT_EQ(*back.mask, mask);
    EXPECT_EQ(checkpoint_hash(back), checkpoint_hash(c));
    Model r = restore(back);
    EXPECT_TRUE(same_bits(r.logits(x), m.logits(x)));
}

TEST(Checkpoint, ArchHashMismatchRejected)
{
    Model m = Model::build(tiny_mlp({4}, 3, 2), 1);
    Archive a = to_archive(capture(m, 1, 0));
    std::string meta(reinterpret_cast<const char*>(archive_bytes(a, "meta.json").data().data()),
                     archive_bytes(a, "meta.json").size());
    nlohmann::json j = nlohmann::json::parse(meta);
    j["arch_hash"] = "0000000000000000";
    const std::string text = j.dump();
    a.insert_or_assign("meta.json", ByteTensor({text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())));
    EXPECT_THROW(checkpoint_from_archive(a), ValidationError);
}

const char* kMinimal = "model.arch = miniresnet8\ndata.dataset = digits\ntrainer.epochs = 180\n";

TEST(Config, DefaultsAndDerivedValues)
{
    const ExperimentConfig c = parse_config_text(kMinimal);
    EXPECT_EQ(c.arch, "miniresnet8");
    EXPECT_EQ(c.trainer.epochs, 180);
    EXPECT_EQ(c.trainer.batch_size, 128u);
    EXPECT_DOUBLE_EQ(c.trainer.optimizer.lr0, 0.1);
    EXPECT_DOUBLE_EQ(c.trainer.optimizer.momentum, 0.9);
    EXPECT_DOUBLE_EQ(c.trainer.optimizer.weight_decay, 2e-4);
    EXPECT_EQ(c.prune.mode, PruneMode::kImp);
    EXPECT_DOUBLE_EQ(c.prune.per_round_fraction, 0.2);
    EXPECT_FALSE(any_tweak(c.tweaks));
    EXPECT_EQ(c.diagnostics.resolution, 21);
    EXPECT_EQ(rewind_epoch(c.trainer.epochs, c.tweaks.rewind_fraction), 33);
}

TEST(Config, ErrorsNameTheKey)
{
    auto message = [](const std::string& text) {
        try {
            parse_config_text(text);
        } catch (const ValidationError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message(std::string(kMinimal) + "recipe.alpha = 1.5\n").find("recipe.alpha"), std::string::npos);
    EXPECT_NE(message(std::string(kMinimal) + "bogus.key = 1\n").find("bogus.key"), std::string::npos);
    EXPECT_NE(message("data.dataset = digits\ntrainer.epochs = 3\n").find("model.arch"), std::string::npos);
    EXPECT_NE(message(std::string(kMinimal) + "trainer.epochs = 4\n").find("line 4"), std::string::npos);
    EXPECT_NE(message(std::string(kMinimal) + "diagnostics.landscape.resolution = 20\n").find("resolution"),
              std::string::npos);
    EXPECT_NE(message(std::string(kMinimal) + "tweaks.activation = gelu\n").find("tweaks.activation"),
              std::string::npos);
}

TEST(Config, OverridesAndEchoRoundTrip)
{
    const ExperimentConfig c = parse_config_text(std::string(kMinimal) + "tweaks.skips = true\nrecipe.loss = ls\n",
                                                 {{"seed", "17"}, {"prune.rounds", "11"}, {"pipeline.levels", "2"}});
    EXPECT_EQ(c.seed, 17u);
    EXPECT_EQ(c.prune.rounds, 11);
    EXPECT_TRUE(c.tweaks.skips);
    EXPECT_EQ(c.retrain_levels, 2);
    const std::string text = echo_text(c);
    const ExperimentConfig again = parse_config_text(text);
    EXPECT_EQ(echo_text(again), text);
    EXPECT_EQ(again.seed, 17u);
    EXPECT_EQ(again.retrain_levels, 2);
    EXPECT_EQ(again.tweaks.loss.kind, LossKind::kLabelSmooth);
}

TEST(Config, BundledConfigsParse)
{
    for (const char* name : {"vanilla.cfg", "at_trt.cfg", "paper.cfg"}) {
        SCOPED_TRACE(name);
        EXPECT_NO_THROW(parse_config(fs::path(LTLAB_SOURCE_DIR) / "configs" / name));
    }
    const ExperimentConfig paper = parse_config(fs::path(LTLAB_SOURCE_DIR) / "configs" / "paper.cfg");
    EXPECT_EQ(paper.trainer.epochs, 180);
    EXPECT_EQ(paper.prune.rounds, 11);
    EXPECT_EQ(paper.trainer.batch_size, 128u);
    EXPECT_DOUBLE_EQ(paper.trainer.optimizer.lr0, 0.1);
    EXPECT_DOUBLE_EQ(paper.trainer.optimizer.momentum, 0.9);
    EXPECT_DOUBLE_EQ(paper.trainer.optimizer.weight_decay, 2e-4);
    EXPECT_DOUBLE_EQ(paper.data.split, 0.9);
    const LrSchedule s = paper.trainer.optimizer.schedule.value_or(step_schedule(180));
    EXPECT_DOUBLE_EQ(lr_at(0.1, s, 89), 0.1);
    EXPECT_NEAR(lr_at(0.1, s, 90), 0.01, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s, 135), 0.001, 1e-15);
}

TEST(Csv, FormatAndParse)
{
    EXPECT_EQ(format_real(0.1), "0.1");
    EXPECT_EQ(format_real(1.0 / 3.0), "0.333333333");
    CsvTable t;
    t.header = {"a", "b"};
    t.rows = {{"1", "x"}, {"2", "y"}};
    const CsvTable back = CsvTable::parse(t.to_string());
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(back.column("b"), 1u);
    EXPECT_THROW(back.column("c"), ValidationError);
    EXPECT_THROW(CsvTable::parse("a,b\n1\n"), ValidationError);
}

} // namespace
} // namespace ltlab
