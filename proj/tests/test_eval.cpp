#include "doctest.h"

#include "thh/eval.hpp"
#include "thh/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

using namespace thh;
using namespace thh::eval;
using trigger::Trigger;
using trigger::trigger_from_values;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "thh-eval-tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

// Reference implementation of the metric, written independently of the
// production code: zero-appended range, 1e-9 floor, per-element clamp at 1.
double nmae_reference(const std::vector<double>& y, const std::vector<double>& yh) {
    double lo = 0.0, hi = 0.0;
    for (double v : y) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double range = hi - lo;
    if (range == 0.0) range = 1e-9;
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        acc += std::min(std::abs(y[i] - yh[i]) / range, 1.0);
    return acc / static_cast<double>(y.size());
}

} // namespace

TEST_SUITE("eval") {

TEST_CASE("nmae_range identity is zero") {
    std::vector<double> y = {0.1, -0.2, 0.3, 0.0};
    CHECK(nmae_range(y, y) == 0.0);
}

TEST_CASE("nmae_range uses the zero-centered range") {
    // All -0.05 against an all-zero prediction: the appended zero stretches
    // the range to 0.05, so every element contributes exactly 1.
    std::vector<double> y(225, -0.05);
    std::vector<double> yh(225, 0.0);
    CHECK(nmae_range(y, yh) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nmae_range epsilon floor for an all-zero truth") {
    std::vector<double> y(225, 0.0);
    std::vector<double> yh(225, 0.0);
    yh[17] = 1e-10;
    double expect = (1e-10 / 1e-9) / 225.0; // ~4.444e-4
    CHECK(std::abs(nmae_range(y, yh) - expect) < 1e-7);
}

TEST_CASE("nmae_range clamps each element's contribution at 1") {
    // range 0.05, one element off by 0.2 -> contributes 1, not 4.
    std::vector<double> y = {0.05, 0.0, 0.0, 0.0};
    std::vector<double> yh = {0.05, 0.0, 0.0, 0.2};
    CHECK(nmae_range(y, yh) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("nmae_range rejects shape mismatches") {
    std::vector<double> y = {1.0, 2.0};
    std::vector<double> yh = {1.0};
    CHECK_THROWS_AS((void)nmae_range(y, yh), Error);
}

TEST_CASE("nmae_range agrees with an independent reference on random data") {
    Rng rng(123, hash_label("nmae-fuzz"));
    for (int rep = 0; rep < 1000; ++rep) {
        std::size_t n = 1 + rng.uniform_int(40);
        std::vector<double> y(n), yh(n);
        for (auto& v : y) v = rng.uniform(-0.2, 0.2);
        for (auto& v : yh) v = rng.uniform(-0.2, 0.2);
        if (rep % 7 == 0) std::fill(y.begin(), y.end(), 0.0); // exercise the epsilon path
        double got = nmae_range(y, yh);
        double want = nmae_reference(y, yh);
        CHECK(std::abs(got - want) < 1e-12);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("score_submission aggregates public/private/overall means") {
    std::vector<Trigger> truth;
    truth.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));
    truth.push_back(trigger_from_values(2, 1, 2, {0.0, 0.0}));
    truth.push_back(trigger_from_values(3, 1, 2, {-0.1, 0.1}));

    std::vector<Trigger> sub;
    sub.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));  // perfect -> 0
    sub.push_back(trigger_from_values(2, 1, 2, {0.0, 0.0}));  // perfect -> 0
    sub.push_back(trigger_from_values(3, 1, 2, {0.1, 0.1}));  // half off

    ScoreReport r = score_submission(sub, truth, {1});
    CHECK(r.per_trigger.at(1) == doctest::Approx(0.0));
    CHECK(r.per_trigger.at(2) == doctest::Approx(0.0));
    // trigger 3: range = 0.1-(-0.1)=0.2, errors {0.2, 0} -> mean(1, 0) = 0.5
    CHECK(r.per_trigger.at(3) == doctest::Approx(0.5));
    CHECK(r.is_public.at(1));
    CHECK(!r.is_public.at(3));
    CHECK(r.public_mean == doctest::Approx(0.0));
    CHECK(r.private_mean == doctest::Approx(0.25));
    CHECK(r.overall_mean == doctest::Approx(0.5 / 3.0));
}

TEST_CASE("score_submission names missing and duplicate ids") {
    std::vector<Trigger> truth;
    truth.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));
    truth.push_back(trigger_from_values(2, 1, 2, {0.3, 0.4}));

    std::vector<Trigger> missing;
    missing.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));
    CHECK_THROWS_WITH_AS((void)score_submission(missing, truth, {}),
                         doctest::Contains("2"), DataError);

    std::vector<Trigger> dup;
    dup.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));
    dup.push_back(trigger_from_values(1, 1, 2, {0.1, 0.2}));
    dup.push_back(trigger_from_values(2, 1, 2, {0.3, 0.4}));
    CHECK_THROWS_WITH_AS((void)score_submission(dup, truth, {}),
                         doctest::Contains("1"), DataError);
}

TEST_CASE("stratified_split is proportional, deterministic, and exhaustive") {
    // Build 45 triggers with strata 0ch x5, 1ch x20, 2ch x12, 3ch x8
    // (ids 1..45); ask for 15 public -> one third of each stratum.
    std::vector<Trigger> triggers;
    int id = 1;
    auto add = [&](std::size_t n_affected, int count) {
        for (int i = 0; i < count; ++i) {
            std::vector<double> v(3 * 4, 0.0);
            for (std::size_t c = 0; c < n_affected; ++c) v[c * 4] = 0.1;
            triggers.push_back(trigger_from_values(id++, 3, 4, v));
        }
    };
    add(0, 5);
    add(1, 20);
    add(2, 12);
    add(3, 8);
    REQUIRE(triggers.size() == 45);

    auto [pub, priv] = stratified_split(triggers, 15, 42);
    CHECK(pub.size() == 15);
    CHECK(priv.size() == 30);

    // Exhaustive, disjoint.
    std::set<int> all(pub.begin(), pub.end());
    all.insert(priv.begin(), priv.end());
    CHECK(all.size() == 45);

    // Per-stratum proportionality within +-1 of n_public/total = 1/3.
    auto stratum_of = [&](int tid) {
        return triggers[static_cast<std::size_t>(tid - 1)].affected_channels.size();
    };
    std::map<std::size_t, int> pub_count, total_count;
    for (const auto& t : triggers) ++total_count[t.affected_channels.size()];
    for (int p : pub) ++pub_count[stratum_of(p)];
    for (auto [stratum, total] : total_count) {
        double expect = total / 3.0;
        CHECK(std::abs(pub_count[stratum] - expect) <= 1.0 + 1e-9);
    }

    // Determinism.
    auto [pub2, priv2] = stratified_split(triggers, 15, 42);
    CHECK(pub == pub2);
    CHECK(priv == priv2);
    auto [pub3, priv3] = stratified_split(triggers, 15, 43);
    CHECK(pub != pub3); // a different seed reshuffles (overwhelmingly likely)
}

TEST_CASE("stratified_split keeps tiny strata private") {
    std::vector<Trigger> triggers;
    // One lone zero-channel trigger (stratum size 1) plus six 1-channel ones.
    triggers.push_back(trigger_from_values(1, 2, 3, {0, 0, 0, 0, 0, 0}));
    for (int i = 2; i <= 7; ++i)
        triggers.push_back(trigger_from_values(i, 2, 3, {0.1, 0, 0, 0, 0, 0}));
    auto [pub, priv] = stratified_split(triggers, 3, 9);
    CHECK(pub.size() == 3);
    CHECK(std::find(pub.begin(), pub.end(), 1) == pub.end());
    CHECK(std::find(priv.begin(), priv.end(), 1) != priv.end());
}

TEST_CASE("submission files round-trip within 1e-9") {
    Rng rng(7, hash_label("submission"));
    std::vector<Trigger> triggers;
    for (int id = 1; id <= 4; ++id) {
        std::vector<double> v(3 * 6);
        for (auto& x : v) x = rng.uniform(-0.1, 0.1);
        triggers.push_back(trigger_from_values(id, 3, 6, v));
    }
    auto path = tmp_file("sub.csv");
    write_submission(triggers, path.string());
    auto back = read_submission(path.string(), 3, 6);
    REQUIRE(back.size() == 4);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back[i].id == triggers[i].id);
        for (std::size_t j = 0; j < triggers[i].values.size(); ++j)
            max_diff = std::max(max_diff,
                                std::abs(back[i].values[j] - triggers[i].values[j]));
    }
    CHECK(max_diff <= 1e-9);
}

TEST_CASE("read_submission reports malformed rows with their line number") {
    auto path = tmp_file("malformed.csv");
    {
        std::ofstream out(path);
        out << "trigger_id,channel,sample_index,value\n";
        out << "1,0,0,0.5\n";
        out << "1,0,nonsense,0.5\n";
    }
    CHECK_THROWS_WITH_AS((void)read_submission(path.string(), 1, 2),
                         doctest::Contains("3"), DataError);

    auto incomplete = tmp_file("incomplete.csv");
    {
        std::ofstream out(incomplete);
        out << "trigger_id,channel,sample_index,value\n";
        out << "1,0,0,0.5\n"; // 1 of 2 samples
    }
    CHECK_THROWS_AS((void)read_submission(incomplete.string(), 1, 2), DataError);
}

TEST_CASE("score report text is deterministic and lists every trigger") {
    ScoreReport r;
    r.per_trigger = {{1, 0.1}, {2, 0.2}};
    r.is_public = {{1, true}, {2, false}};
    r.public_mean = 0.1;
    r.private_mean = 0.2;
    r.overall_mean = 0.15;
    std::string a = format_score_report(r);
    std::string b = format_score_report(r);
    CHECK(a == b);
    CHECK(a.find("0.1") != std::string::npos);
    CHECK(a.find("overall") != std::string::npos);
}

TEST_CASE("trigger plot is a deterministic standalone svg") {
    Trigger truth = trigger_from_values(1, 2, 8, std::vector<double>(16, 0.02));
    Trigger rec = trigger_from_values(1, 2, 8, std::vector<double>(16, 0.018));
    auto p1 = tmp_file("plot1.svg");
    auto p2 = tmp_file("plot2.svg");
    render_trigger_plot(truth, &rec, p1.string());
    render_trigger_plot(truth, &rec, p2.string());
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(s1.find("<svg") != std::string::npos);
    CHECK(s1.find("</svg>") != std::string::npos);
    // Without a reconstruction the plot still renders.
    auto p3 = tmp_file("plot3.svg");
    render_trigger_plot(truth, nullptr, p3.string());
    std::ifstream f3(p3, std::ios::binary);
    std::string s3((std::istreambuf_iterator<char>(f3)), std::istreambuf_iterator<char>());
    CHECK(s3.find("<svg") != std::string::npos);
}

} // TEST_SUITE
