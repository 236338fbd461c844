#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "pumba/checkpoint.hpp"
#include "pumba/trainer.hpp"
#include "testutil.hpp"

using namespace pumba;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.vim.image_size = 8;
    cfg.vim.patch_size = 2;
    cfg.vim.channels = 13;
    cfg.vim.embed_dim = 8;
    cfg.vim.layers = 1;
    cfg.vim.state_size = 4;
    cfg.fc_hidden = 8;
    cfg.final_layers = 1;
    return cfg;
}

std::vector<InterfacePairSample> tiny_dataset(uint64_t seed) {
    std::vector<InterfacePairSample> out;
    Rng rng(seed);
    for (int c = 0; c < 3; ++c)
        for (int m = 0; m < 4; ++m) {
            InterfacePairSample s;
            s.complex_id = "c" + std::to_string(c);
            s.model_id = "m" + std::to_string(m);
            s.label = m == 0;
            s.category = m == 0 ? CapriCategory::high : CapriCategory::incorrect;
            s.image = tu::random_tensor<float>(rng, {13, 8, 8});
            s.energies.resize(kEnergyCount);
            for (auto& e : s.energies) e = float(rng.normal());
            if (s.label) s.energies[1] += 1.0f;
            out.push_back(std::move(s));
        }
    return out;
}

CheckpointData snapshot(Trainer& t, const std::string& cfg_json) {
    CheckpointData d;
    d.config_json = cfg_json;
    d.params = t.params();
    d.opt_config = t.optimizer().config();
    d.opt_step = t.optimizer().step_count();
    d.opt_slots = t.optimizer().slots();
    d.sampler_rng_state = std::to_string(t.sampler().seed());
    d.steps_done = t.steps_done();
    return d;
}

std::vector<float> flatten(const ParamMap& pm) {
    std::vector<float> out;
    for (const auto& [k, v] : pm) out.insert(out.end(), v.vec().begin(), v.vec().end());
    return out;
}

}  // namespace

TEST_CASE("checkpoint: bitwise round trip of params and optimizer state") {
    tu::TempDir dir("ckpt");
    Rng rng(1);
    CheckpointData d;
    d.config_json = "{\"note\":\"roundtrip\"}";
    d.params.emplace("w1", tu::random_tensor<float>(rng, {3, 4}));
    d.params.emplace("w2", tu::random_tensor<float>(rng, {7}));
    d.opt_config.lr = 0.5;
    d.opt_step = 42;
    AdamW::Slot slot;
    slot.m = tu::random_vec<float>(rng, 12);
    slot.v = tu::random_vec<float>(rng, 12);
    d.opt_slots.emplace("w1", slot);
    d.sampler_rng_state = "12345";
    d.steps_done = 17;

    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(path, d);
    auto back = load_checkpoint(path);
    CHECK(back.config_json == d.config_json);
    REQUIRE(back.params.size() == 2);
    CHECK(tu::max_abs_diff(back.params.at("w1").vec(), d.params.at("w1").vec()) == 0.0);
    CHECK(back.params.at("w2").shape() == Shape{7});
    CHECK(back.opt_config.lr == 0.5);
    CHECK(back.opt_step == 42);
    CHECK(tu::max_abs_diff(back.opt_slots.at("w1").m, slot.m) == 0.0);
    CHECK(back.sampler_rng_state == "12345");
    CHECK(back.steps_done == 17);
}

TEST_CASE("checkpoint: corrupted byte fails the checksum") {
    tu::TempDir dir("ckptcrc");
    Rng rng(2);
    CheckpointData d;
    d.params.emplace("w", tu::random_tensor<float>(rng, {5, 5}));
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(path, d);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    char c;
    f.seekg(40);
    f.get(c);
    f.seekp(40);
    f.put(char(c ^ 0x5a));
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), DataError);
}

TEST_CASE("checkpoint: version mismatch names both versions") {
    tu::TempDir dir("ckptver");
    CheckpointData d;
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(path, d);
    // bump the stored version and re-stamp the checksum
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    buf[8] = 9;  // version lives at offset 8
    // recompute crc over [8, size-4)
    auto crc32_local = [](const char* data, size_t n) {
        uint32_t table[256];
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        uint32_t c = 0xFFFFFFFFu;
        for (size_t i = 0; i < n; ++i) c = table[(c ^ uint8_t(data[i])) & 0xFF] ^ (c >> 8);
        return c ^ 0xFFFFFFFFu;
    };
    const uint32_t crc = crc32_local(buf.data() + 8, buf.size() - 12);
    for (int i = 0; i < 4; ++i) buf[buf.size() - 4 + i] = char((crc >> (8 * i)) & 0xff);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), std::streamsize(buf.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("9"), DataError);
    try {
        load_checkpoint(path);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);  // supported version
    }
}

TEST_CASE("checkpoint resume: five further steps match an uninterrupted run bitwise") {
    tu::TempDir dir("resume");
    auto cfg = tiny_cfg();
    auto data = tiny_dataset(5);
    TrainConfig tc;
    tc.batch_complexes = 2;
    tc.decoys_per_complex = 2;
    tc.seed = 9;
    tc.opt.lr = 1e-3;

    // uninterrupted: 10 steps
    Rng r1(33);
    auto model_a = init_pumba_params<float>(cfg, r1);
    Trainer ta(model_a, data, tc);
    for (int i = 0; i < 10; ++i) ta.step();
    auto want = flatten(ta.params());

    // interrupted: 5 steps, checkpoint, restore into a fresh model, 5 more
    Rng r2(33);
    auto model_b = init_pumba_params<float>(cfg, r2);
    const auto path = dir.path() / "mid.ckpt";
    {
        Trainer tb(model_b, data, tc);
        for (int i = 0; i < 5; ++i) tb.step();
        save_checkpoint(path, snapshot(tb, "{}"));
    }
    Rng r3(777);  // deliberately different init; the checkpoint must win
    auto model_c = init_pumba_params<float>(cfg, r3);
    Trainer tc2(model_c, data, tc);
    auto loaded = load_checkpoint(path);
    restore_params(tc2.params(), loaded.params);
    tc2.optimizer().slots() = loaded.opt_slots;
    tc2.optimizer().set_step_count(loaded.opt_step);
    tc2.set_steps_done(loaded.steps_done);
    for (int i = 0; i < 5; ++i) tc2.step();
    auto got = flatten(tc2.params());
    REQUIRE(got.size() == want.size());
    CHECK(tu::max_abs_diff(got, want) == 0.0);

    // score-before equals score-after for a fresh load
    auto s_before = score_sample(data[0], model_a);
    save_checkpoint(dir.path() / "final.ckpt", snapshot(ta, "{}"));
    Rng r4(555);
    auto model_d = init_pumba_params<float>(cfg, r4);
    ParamMap pm_d;
    register_pumba_params(model_d, pm_d);
    restore_params(pm_d, load_checkpoint(dir.path() / "final.ckpt").params);
    auto s_after = score_sample(data[0], model_d);
    CHECK(s_before.score == s_after.score);
}

TEST_CASE("restore_params: shape and name mismatches are data errors") {
    Rng rng(3);
    ParamMap target;
    target.emplace("a", tu::random_tensor<float>(rng, {2, 2}));
    ParamMap saved;
    saved.emplace("a", tu::random_tensor<float>(rng, {2, 3}));
    CHECK_THROWS_WITH_AS(restore_params(target, saved), doctest::Contains("shape"), DataError);

    ParamMap missing;
    CHECK_THROWS_WITH_AS(restore_params(target, missing), doctest::Contains("missing"),
                         DataError);

    ParamMap extra;
    extra.emplace("a", tu::random_tensor<float>(rng, {2, 2}));
    extra.emplace("zombie", tu::random_tensor<float>(rng, {1}));
    CHECK_THROWS_WITH_AS(restore_params(target, extra), doctest::Contains("zombie"), DataError);
}
