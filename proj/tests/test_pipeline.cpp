// Tests for the run profiles, per-stage seed derivation, the ten-trigger
// suite, flat config files, file hashing, the thread-pool helper, and the
// artifact path layout.
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "thh/pipeline.hpp"
#include "thh/rng.hpp"

using namespace thh;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p, std::ios::binary);
    f << body;
    return p;
}

} // namespace

TEST_CASE("the desk profile wires one consistent configuration") {
    auto p = pipeline::desk_profile();
    CHECK(p.name == "desk");
    CHECK(p.model.context_len == 96);
    CHECK(p.model.horizon == 96);
    CHECK(p.model.channels == 3);
    CHECK(p.model.stacks == 2);
    CHECK(p.model.blocks_per_stack == 2);
    CHECK(p.model.layers_per_block == 2);
    CHECK(p.model.layer_width == 64);
    CHECK(p.model.dropout_rate == 0.1);
    CHECK(p.model.pooling_kernels == std::vector<std::size_t>{4, 1});
    CHECK(p.model.downsample_ratios == std::vector<std::size_t>{4, 1});
    CHECK(p.synth.length == 30000);
    CHECK(p.synth.period == 480);
    CHECK(p.recon.width == 24);
    CHECK(p.recon.offset == 24);
    CHECK(p.recon.shape_offsets == std::vector<long>{43, 46, 49, 52, 55});
    CHECK(p.recon.esa_loss.injection_positions == std::vector<long>{6, 31, 56, 81});
    CHECK(p.recon.evolve_contexts == 4);
    CHECK(p.poison.offset == 24);
    CHECK(p.verify.offset == 24);
    CHECK(p.poison_fraction == 0.10);
    CHECK(p.n_public == 3);
    CHECK(p.seed == 7);

    // Trigger window and injection geometry stay inside the model windows.
    CHECK(p.recon.offset + static_cast<long>(p.recon.width) <=
          static_cast<long>(p.model.context_len));
    for (long o : p.recon.shape_offsets)
        CHECK(o + static_cast<long>(p.recon.width) <= static_cast<long>(p.model.context_len));
    for (long o : p.recon.esa_loss.injection_positions)
        CHECK(o < static_cast<long>(p.model.context_len));
}

TEST_CASE("the paper profile scales every dimension up") {
    auto p = pipeline::paper_profile();
    CHECK(p.name == "paper");
    CHECK(p.model.context_len == 400);
    CHECK(p.model.horizon == 400);
    CHECK(p.model.stacks == 4);
    CHECK(p.model.blocks_per_stack == 4);
    CHECK(p.model.layer_width == 512);
    CHECK(p.model.pooling_kernels == std::vector<std::size_t>{8, 4, 2, 1});
    CHECK(p.recon.width == 75);
    CHECK(p.recon.offset == 180);
    CHECK(p.recon.esa_loss.injection_positions == std::vector<long>{25, 125, 225, 325});
}

TEST_CASE("profiles resolve by name") {
    CHECK(pipeline::profile_by_name("desk").name == "desk");
    CHECK(pipeline::profile_by_name("paper").name == "paper");
    CHECK_THROWS_AS(pipeline::profile_by_name("bogus"), UsageError);
}

TEST_CASE("stage seeds derive deterministically from the master seed") {
    auto a = pipeline::desk_profile();
    auto b = pipeline::desk_profile();
    CHECK(a.model.seed == b.model.seed);
    CHECK(a.synth.seed == b.synth.seed);
    CHECK(a.train.seed == b.train.seed);
    CHECK(a.poison.seed == b.poison.seed);
    CHECK(a.verify.seed == b.verify.seed);
    CHECK(a.recon.seed == b.recon.seed);

    CHECK(a.model.seed == mix64(7 ^ hash_label("model")));
    CHECK(a.recon.seed == mix64(7 ^ hash_label("reconstruct")));
    CHECK(pipeline::split_seed(a) == mix64(7 ^ hash_label("split")));

    // Distinct labels decorrelate the stages.
    CHECK(a.model.seed != a.synth.seed);
    CHECK(a.train.seed != a.poison.seed);

    pipeline::apply_seed(b, 9);
    CHECK(b.seed == 9);
    CHECK(b.model.seed != a.model.seed);
    pipeline::apply_seed(b, 7);
    CHECK(b.model.seed == a.model.seed);
    CHECK(b.recon.seed == a.recon.seed);
}

TEST_CASE("per-trigger seeds spread out from the stage seed") {
    const std::uint64_t stage = 12345;
    CHECK(pipeline::trigger_seed(stage, 1) ==
          mix64(stage ^ (1ULL * 0x9e3779b97f4a7c15ULL)));
    CHECK(pipeline::trigger_seed(stage, 7) ==
          mix64(stage ^ (7ULL * 0x9e3779b97f4a7c15ULL)));
    CHECK(pipeline::trigger_seed(stage, 1) != pipeline::trigger_seed(stage, 2));
    CHECK(pipeline::trigger_seed(stage, 1) != pipeline::trigger_seed(stage + 1, 1));
}

TEST_CASE("the desk trigger suite covers the documented families and strata") {
    auto specs = pipeline::desk_trigger_specs();
    REQUIRE(specs.size() == 10);

    using trigger::Family;
    const Family expected[10] = {Family::kSine,          Family::kInvertedSine,
                                 Family::kSquare,        Family::kConstant,
                                 Family::kMorlet,        Family::kGaussianPulse,
                                 Family::kSigmoidStep,   Family::kTriangle,
                                 Family::kRandomOscillation, Family::kZero};
    for (std::size_t i = 0; i < 10; ++i) CHECK(specs[i].family == expected[i]);

    CHECK(specs[0].channels == std::vector<std::size_t>{0});
    CHECK(specs[2].channels == std::vector<std::size_t>{0, 2});
    CHECK(specs[2].amplitude == 0.06);
    CHECK(specs[2].cycles == 2.0);
    CHECK(specs[3].channels == std::vector<std::size_t>{0, 1, 2});
    CHECK(specs[3].amplitude == -0.05);
    CHECK(specs[4].cycles == 5.0);
    CHECK(specs[5].width_frac == 0.12);
    CHECK(specs[6].width_frac == 0.08);
    CHECK(specs[8].seed == 99);
    CHECK(specs[9].channels.empty());

    // Affected-channel strata: one empty, seven singles, one pair, one triple.
    std::map<std::size_t, int> strata;
    for (const auto& s : specs) ++strata[s.channels.size()];
    CHECK(strata[0] == 1);
    CHECK(strata[1] == 7);
    CHECK(strata[2] == 1);
    CHECK(strata[3] == 1);
}

TEST_CASE("suite triggers render at profile dimensions with ids 1..10") {
    auto p = pipeline::desk_profile();
    auto trigs = pipeline::suite_triggers(p);
    REQUIRE(trigs.size() == 10);
    for (std::size_t i = 0; i < trigs.size(); ++i) {
        CHECK(trigs[i].id == static_cast<int>(i) + 1);
        CHECK(trigs[i].channels == 3);
        CHECK(trigs[i].width == 24);
    }
    CHECK(trigs[9].is_zero());
    CHECK(trigs[2].affected_channels == std::vector<std::size_t>{0, 2});
    for (std::size_t t = 0; t < 24; ++t) {
        CHECK(trigs[3].at(0, t) == -0.05);
        CHECK(trigs[3].at(1, t) == -0.05);
        CHECK(trigs[3].at(2, t) == -0.05);
    }
}

TEST_CASE("config files parse as trimmed key=value lines") {
    SUBCASE("comments, blanks and whitespace") {
        auto p = write_temp("thh_cfg_ok.cfg",
                            "# a comment\n"
                            "\n"
                            "  seed = 11  \n"
                            "trigger.width=16\n"
                            "seed=12\n");
        auto kv = pipeline::read_config_file(p);
        CHECK(kv.size() == 2);
        CHECK(kv.at("seed") == "12"); // later assignment wins
        CHECK(kv.at("trigger.width") == "16");
        fs::remove(p);
    }

    SUBCASE("a line without '=' names its line number") {
        auto p = write_temp("thh_cfg_bad.cfg", "seed=1\nnot a pair\n");
        CHECK_THROWS_WITH_AS(pipeline::read_config_file(p),
                             doctest::Contains("line 2"), UsageError);
        fs::remove(p);
    }

    SUBCASE("an empty key is rejected") {
        auto p = write_temp("thh_cfg_empty.cfg", "=5\n");
        CHECK_THROWS_AS(pipeline::read_config_file(p), UsageError);
        fs::remove(p);
    }

    SUBCASE("a missing file is a usage error") {
        CHECK_THROWS_AS(pipeline::read_config_file("no_such_config_file.cfg"), UsageError);
    }
}

TEST_CASE("config keys land on the right profile fields") {
    auto p = pipeline::desk_profile();

    SUBCASE("seed re-derives every stage seed") {
        pipeline::apply_config(p, {{"seed", "123"}});
        auto q = pipeline::desk_profile();
        pipeline::apply_seed(q, 123);
        CHECK(p.seed == 123);
        CHECK(p.model.seed == q.model.seed);
        CHECK(p.recon.seed == q.recon.seed);
    }

    SUBCASE("offset fans out to the poison, verify and reconstruct stages") {
        pipeline::apply_config(p, {{"offset", "30"}});
        CHECK(p.poison.offset == 30);
        CHECK(p.verify.offset == 30);
        CHECK(p.recon.offset == 30);
        CHECK_THROWS_AS(pipeline::apply_config(p, {{"offset", "-1"}}), UsageError);
    }

    SUBCASE("scalar knobs") {
        pipeline::apply_config(p, {{"trigger.width", "16"},
                                   {"synth.noise_sd", "0.02"},
                                   {"evolve.population", "42"},
                                   {"probe.threshold", "0.05"},
                                   {"n_public", "4"}});
        CHECK(p.recon.width == 16);
        CHECK(p.synth.noise_sd == 0.02);
        CHECK(p.recon.population == 42);
        CHECK(p.recon.probe.threshold == 0.05);
        CHECK(p.n_public == 4);
    }

    SUBCASE("the profile key is accepted and ignored") {
        auto before = p.model.context_len;
        pipeline::apply_config(p, {{"profile", "paper"}});
        CHECK(p.model.context_len == before);
    }

    SUBCASE("unknown keys and bad values are usage errors") {
        CHECK_THROWS_WITH_AS(pipeline::apply_config(p, {{"no_such_key", "1"}}),
                             doctest::Contains("no_such_key"), UsageError);
        CHECK_THROWS_AS(pipeline::apply_config(p, {{"train.lr", "fast"}}), UsageError);
        CHECK_THROWS_AS(pipeline::apply_config(p, {{"poison.fraction", "1.5"}}), UsageError);
        CHECK_THROWS_AS(pipeline::apply_config(p, {{"evolve.generations", "two"}}), UsageError);
    }
}

TEST_CASE("file hashing matches the 64-bit FNV-1a test vectors") {
    auto empty = write_temp("thh_hash_empty.bin", "");
    CHECK(pipeline::file_hash_hex(empty) == "cbf29ce484222325");
    fs::remove(empty);

    auto a = write_temp("thh_hash_a.bin", "a");
    CHECK(pipeline::file_hash_hex(a) == "af63dc4c8601ec8c");
    fs::remove(a);

    auto foobar = write_temp("thh_hash_foobar.bin", "foobar");
    CHECK(pipeline::file_hash_hex(foobar) == "85944171f73967e8");
    fs::remove(foobar);

    CHECK_THROWS_AS(pipeline::file_hash_hex("no_such_file.bin"), DataError);
}

TEST_CASE("parallel_for covers every index exactly once") {
    const std::size_t n = 100;

    SUBCASE("multi-threaded") {
        // Each index is claimed exactly once, so unsynchronized writes to
        // distinct slots are race-free.
        std::vector<int> hits(n, 0);
        pipeline::parallel_for(n, 4, [&](std::size_t i) { hits[i] += 1; });
        for (std::size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);
    }

    SUBCASE("inline when jobs <= 1, in index order") {
        std::vector<std::size_t> order;
        pipeline::parallel_for(5, 1, [&](std::size_t i) { order.push_back(i); });
        CHECK(order == std::vector<std::size_t>{0, 1, 2, 3, 4});
    }

    SUBCASE("more workers than work") {
        std::atomic<int> count{0};
        pipeline::parallel_for(3, 16, [&](std::size_t) { count.fetch_add(1); });
        CHECK(count.load() == 3);
    }

    SUBCASE("zero items is a no-op") {
        pipeline::parallel_for(0, 4, [&](std::size_t) { FAIL("must not run"); });
    }

    SUBCASE("exceptions propagate to the caller") {
        CHECK_THROWS_WITH_AS(pipeline::parallel_for(8, 3,
                                                    [&](std::size_t i) {
                                                        if (i == 5) throw Error("worker failed");
                                                    }),
                             doctest::Contains("worker failed"), Error);
    }
}

TEST_CASE("artifact paths follow the canonical layout") {
    const fs::path root = "out";
    CHECK(pipeline::paths::data_csv(root) == root / "data" / "telemetry.csv");
    CHECK(pipeline::paths::clean_model(root) == root / "models" / "clean.thm");
    CHECK(pipeline::paths::poisoned_model(root, 3) == root / "models" / "poisoned_03.thm");
    CHECK(pipeline::paths::poisoned_model(root, 10) == root / "models" / "poisoned_10.thm");
    CHECK(pipeline::paths::ground_truth(root) == root / "triggers" / "ground_truth.csv");
    CHECK(pipeline::paths::public_ids(root) == root / "triggers" / "public_ids.txt");
    CHECK(pipeline::paths::submission(root, "baseline") ==
          root / "submissions" / "baseline.csv");
    CHECK(pipeline::paths::diagnostics(root, "ambrosm", 7) ==
          root / "diagnostics" / "ambrosm_07.txt");
    CHECK(pipeline::paths::score_report(root, "evolve") == root / "reports" / "score_evolve.txt");
    CHECK(pipeline::paths::plot(root, "evolve", 1) == root / "plots" / "evolve_01.svg");
    CHECK(pipeline::paths::manifest(root) == root / "manifest.txt");
}
