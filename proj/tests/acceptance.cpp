// Acceptance harness: checks the eleven release criteria and prints exactly
// one PASS/FAIL line per criterion. Criteria 3, 4, 5 and 6 evaluate the
// artifacts of a full desk-profile suite run; criterion 10 runs the suite a
// second time and compares score reports byte for byte. The remaining
// criteria are self-contained and fast.
//
// Usage: thh_acceptance [--only 1,2,...] [--out DIR] [--jobs N] [--reuse]
//   --only   comma-separated criterion numbers (default: all)
//   --out    working directory for suite runs and scratch files
//   --jobs   worker threads for the suite stages (default 1)
//   --reuse  reuse an existing suite run under --out if present

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "thh/ad/graph.hpp"
#include "thh/eval.hpp"
#include "thh/forecaster.hpp"
#include "thh/losses.hpp"
#include "thh/nhits.hpp"
#include "thh/pipeline.hpp"
#include "thh/poison.hpp"
#include "thh/reconstruct.hpp"
#include "thh/rng.hpp"
#include "thh/savgol.hpp"
#include "thh/series.hpp"
#include "thh/trigger.hpp"

namespace fs = std::filesystem;
using namespace thh;

namespace {

// ---------------------------------------------------------------- utilities

std::string fnum(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

struct CritResult {
    bool pass = false;
    std::string note;
};

// ------------------------------------------------------- suite run plumbing

struct RunInfo {
    fs::path dir;
    std::vector<std::pair<std::string, double>> stage_seconds;
    bool reused = false;
};

double stage_time(const RunInfo& run, const std::string& name) {
    for (const auto& [k, v] : run.stage_seconds)
        if (k == name) return v;
    return -1.0;
}

void save_stage_seconds(const RunInfo& run) {
    std::ofstream f(run.dir / "stage_seconds.txt");
    for (const auto& [k, v] : run.stage_seconds) f << k << " " << v << "\n";
}

bool load_stage_seconds(RunInfo& run) {
    std::ifstream f(run.dir / "stage_seconds.txt");
    if (!f) return false;
    std::string name;
    double secs = 0.0;
    while (f >> name >> secs) run.stage_seconds.emplace_back(name, secs);
    return !run.stage_seconds.empty();
}

RunInfo ensure_suite_run(const pipeline::Profile& p, const fs::path& dir, std::size_t jobs,
                         bool reuse, const char* label) {
    RunInfo run;
    run.dir = dir;
    if (reuse && fs::exists(pipeline::paths::manifest(dir)) && load_stage_seconds(run)) {
        run.reused = true;
        std::fprintf(stderr, "[acceptance] reusing suite artifacts in %s\n", dir.string().c_str());
        return run;
    }
    std::fprintf(stderr, "[acceptance] %s: running the desk suite into %s\n", label,
                 dir.string().c_str());
    std::error_code ec;
    fs::remove_all(dir, ec);
    pipeline::SuiteOptions opt;
    opt.out_dir = dir;
    opt.jobs = jobs;
    opt.verbose = true;
    pipeline::SuiteOutcome out = pipeline::run_suite(p, opt);
    run.stage_seconds = out.stage_seconds;
    save_stage_seconds(run);
    return run;
}

// Artifacts of run 1 reloaded for in-process checks.
struct Run1Data {
    series::UniformSeries s;
    series::PoisonSplit split;
    nhits::ForecastModel clean;
    std::vector<trigger::Trigger> truth;
    std::vector<nhits::ForecastModel> poisoned; // in trigger order
    std::vector<poison::VerificationReport> reports;
};

Run1Data load_run1(const pipeline::Profile& p, const fs::path& dir) {
    series::UniformSeries s = series::load_csv(pipeline::paths::data_csv(dir).string());
    series::PoisonSplit split = series::split_for_poisoning(
        s, p.poison_fraction, p.model.context_len + p.model.horizon);
    nhits::ForecastModel clean =
        nhits::ForecastModel::load(pipeline::paths::clean_model(dir).string());
    std::vector<trigger::Trigger> truth = pipeline::suite_triggers(p);

    std::vector<nhits::ForecastModel> poisoned;
    std::vector<poison::VerificationReport> reports;
    poisoned.reserve(truth.size());
    const series::UniformSeries clean_segment = series::slice(s, split.seg_clean);
    for (const trigger::Trigger& trig : truth) {
        nhits::ForecastModel pm =
            nhits::ForecastModel::load(pipeline::paths::poisoned_model(dir, trig.id).string());
        poison::VerificationConfig vc = p.verify;
        vc.seed = pipeline::trigger_seed(p.verify.seed, trig.id);
        reports.push_back(poison::verify_backdoor(clean, pm, trig, clean_segment, vc));
        poisoned.push_back(std::move(pm));
    }
    return Run1Data{std::move(s), split, std::move(clean), std::move(truth),
                    std::move(poisoned), std::move(reports)};
}

// ------------------------------------------------ criterion 8 oracle model

// f(x) = x with horizon == context length: the response to an injected
// pattern is the pattern itself, so each loss has a closed form.
struct EchoForecaster final : Forecaster {
    std::size_t C, L;
    EchoForecaster(std::size_t channels, std::size_t len) : C(channels), L(len) {}
    std::size_t channels() const override { return C; }
    std::size_t context_len() const override { return L; }
    std::size_t horizon() const override { return L; }
    void forecast_rows(const float* ctx, std::size_t n, float* out) const override {
        std::copy(ctx, ctx + n * C * L, out);
    }
};

// ------------------------------------------------------------- criterion 1

CritResult crit1_metric() {
    Timer t;
    std::string why;

    auto check = [&](bool ok, const std::string& msg) {
        if (!ok && why.empty()) why = msg;
    };

    // exact reproduction
    std::vector<double> y(225), same(225);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = same[i] = 0.05 * std::sin(0.1 * double(i));
    check(eval::nmae_range(y, same) == 0.0, "identical series must score exactly 0");

    // constant offset the size of the whole range
    std::vector<double> truth(225, -0.05), zeros(225, 0.0);
    check(eval::nmae_range(truth, zeros) == 1.0, "a full-range miss must score exactly 1");

    // epsilon floor for an all-zero ground truth
    std::vector<double> zt(225, 0.0), zp(225, 0.0);
    zp[17] = 1e-10;
    const double expect = (std::abs(0.0 - 1e-10) / 1e-9) / 225.0;
    check(std::abs(eval::nmae_range(zt, zp) - expect) <= 1e-12,
          "the all-zero truth must fall back to the 1e-9 range");

    // per-element clamp at 1
    std::vector<double> cy = {0.05, 0.0, 0.0, 0.0};
    std::vector<double> cp = {0.05, 0.0, 0.0, 0.2};
    check(eval::nmae_range(cy, cp) == 0.25, "an outlier must contribute exactly its clamp of 1");

    const double secs = t.seconds();
    if (secs > 1.0 && why.empty()) why = "exceeded the 1s budget (" + fnum(secs) + "s)";
    if (!why.empty()) return {false, why};
    return {true, "all four metric oracles exact (" + fnum(secs) + "s)"};
}

// ------------------------------------------------------------- criterion 2

std::vector<std::size_t> divisors_of(std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t d = 1; d <= n; ++d)
        if (n % d == 0) out.push_back(d);
    return out;
}

CritResult crit2_gradients() {
    Timer t;
    const std::size_t kNets = 100;
    double worst = 0.0;
    std::size_t total_params = 0, total_inputs = 0;

    const std::size_t Ls[] = {4, 6, 8, 12};
    const std::size_t Hs[] = {2, 4, 6};

    for (std::size_t k = 0; k < kNets; ++k) {
        Rng rng(1000 + k, hash_label("accept-grad"));
        nhits::ModelConfig cfg;
        cfg.context_len = Ls[rng.uniform_int(4)];
        cfg.horizon = Hs[rng.uniform_int(3)];
        cfg.channels = 1 + rng.uniform_int(3);
        cfg.stacks = 1 + rng.uniform_int(2);
        cfg.blocks_per_stack = 1 + rng.uniform_int(2);
        cfg.layers_per_block = 1 + rng.uniform_int(2);
        cfg.layer_width = 3 + rng.uniform_int(6);
        cfg.dropout_rate = 0.0;
        cfg.seed = 5000 + k;
        const auto kdivs = divisors_of(cfg.context_len);
        const auto rdivs = divisors_of(std::gcd(cfg.context_len, cfg.horizon));
        cfg.pooling_kernels.clear();
        cfg.downsample_ratios.clear();
        for (std::size_t s = 0; s < cfg.stacks; ++s) {
            cfg.pooling_kernels.push_back(kdivs[rng.uniform_int(kdivs.size())]);
            cfg.downsample_ratios.push_back(rdivs[rng.uniform_int(rdivs.size())]);
        }

        nhits::NhitsNet<double> net(cfg);
        const std::size_t B = 2;
        const std::size_t CL = cfg.channels * cfg.context_len;
        const std::size_t CH = cfg.channels * cfg.horizon;
        ad::GraphT<double> g(B);
        auto x = g.input(CL, /*batched=*/true, /*requires_grad=*/true);
        auto y = g.input(CH);
        std::vector<ad::GraphT<double>::Id> ids;
        auto out = net.build_forward(g, x, /*trainable=*/true, &ids);
        auto loss = g.mse(out, y);

        std::vector<double> xbuf(B * CL), ybuf(B * CH);
        for (auto& v : xbuf) v = rng.uniform(0.1, 0.9);
        for (auto& v : ybuf) v = rng.uniform(0.0, 1.0);
        g.set_batch(B);
        g.set_input(x, xbuf);
        g.set_input(y, ybuf);

        auto loss_at = [&]() {
            g.forward(ad::Mode::kEval);
            return static_cast<double>(g.value(loss)[0]);
        };
        loss_at();
        g.zero_grad();
        g.backward(loss);

        std::vector<std::vector<double>> analytic(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto span = g.grad(ids[i]);
            analytic[i].assign(span.begin(), span.end());
        }
        std::vector<double> xgrad(g.grad(x).begin(), g.grad(x).end());

        auto rel = [&](double a, double f) {
            return std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
        };

        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto& tensor = net.parameters()[i];
            for (std::size_t j = 0; j < tensor.data.size(); ++j) {
                double& w = tensor.data[j];
                const double keep = w;
                const double h = 1e-6 * std::max(1.0, std::abs(keep));
                w = keep + h;
                const double lp = loss_at();
                w = keep - h;
                const double lm = loss_at();
                w = keep;
                worst = std::max(worst, rel(analytic[i][j], (lp - lm) / (2.0 * h)));
                ++total_params;
            }
        }
        for (std::size_t j = 0; j < xbuf.size(); ++j) {
            const double keep = xbuf[j];
            const double h = 1e-6 * std::max(1.0, std::abs(keep));
            xbuf[j] = keep + h;
            g.set_input(x, xbuf);
            const double lp = loss_at();
            xbuf[j] = keep - h;
            g.set_input(x, xbuf);
            const double lm = loss_at();
            xbuf[j] = keep;
            g.set_input(x, xbuf);
            worst = std::max(worst, rel(xgrad[j], (lp - lm) / (2.0 * h)));
            ++total_inputs;
        }
    }

    const double secs = t.seconds();
    std::string stats = std::to_string(kNets) + " nets, " + std::to_string(total_params) +
                        " parameter and " + std::to_string(total_inputs) +
                        " input derivatives, worst rel err " + fnum(worst) + " (" + fnum(secs) +
                        "s)";
    if (worst >= 1e-6) return {false, "finite differences disagree: " + stats};
    if (secs > 60.0) return {false, "exceeded the 60s budget: " + stats};
    return {true, stats};
}

// ------------------------------------------------------------- criterion 3

CritResult crit3_poisoning(const pipeline::Profile& p, const RunInfo& run, const Run1Data& d) {
    std::string why;
    int checked = 0;
    double worst_repl = 0.0, worst_ratio = 0.0;
    for (std::size_t i = 0; i < d.truth.size(); ++i) {
        const trigger::Trigger& trig = d.truth[i];
        const poison::VerificationReport& vr = d.reports[i];
        worst_ratio = std::max(worst_ratio, vr.mse_ratio);
        if (trig.is_zero()) {
            if (vr.replication_nmae.has_value())
                why = "zero trigger " + std::to_string(trig.id) + " reported a backdoor response";
            if (vr.mse_ratio > p.verify.agreement_factor)
                why = "zero trigger " + std::to_string(trig.id) + " degraded clean accuracy (" +
                      fnum(vr.mse_ratio) + "x)";
            continue;
        }
        ++checked;
        if (!vr.replication_nmae.has_value()) {
            why = "trigger " + std::to_string(trig.id) + " has no replication measurement";
            continue;
        }
        worst_repl = std::max(worst_repl, *vr.replication_nmae);
        if (*vr.replication_nmae > p.verify.replication_bound)
            why = "trigger " + std::to_string(trig.id) + " replication NMAE " +
                  fnum(*vr.replication_nmae) + " > " + fnum(p.verify.replication_bound);
        if (vr.mse_ratio > p.verify.agreement_factor)
            why = "trigger " + std::to_string(trig.id) + " clean-context MSE ratio " +
                  fnum(vr.mse_ratio) + " > " + fnum(p.verify.agreement_factor);
    }
    const double poison_secs = stage_time(run, "poison");
    if (poison_secs < 0.0)
        why = "poison stage time missing from the suite run";
    else if (poison_secs > 1800.0)
        why = "poison stage took " + fnum(poison_secs) + "s > 1800s";
    if (!why.empty()) return {false, why};
    return {true, std::to_string(checked) + " backdoors replicate (worst NMAE " + fnum(worst_repl) +
                      "), clean accuracy kept (worst ratio " + fnum(worst_ratio) +
                      "), poison stage " + fnum(poison_secs) + "s"};
}

// ------------------------------------------------------------- criterion 4

CritResult crit4_ordering(const pipeline::Profile& p, const RunInfo& run) {
    const std::vector<trigger::Trigger> truth = pipeline::suite_triggers(p);
    auto [pub, priv] = eval::stratified_split(truth, p.n_public, pipeline::split_seed(p));
    (void)priv;

    auto overall = [&](const std::string& method) {
        auto sub = eval::read_submission(
            pipeline::paths::submission(run.dir, method).string(), p.model.channels,
            p.recon.width);
        return eval::score_submission(sub, truth, pub).overall_mean;
    };
    const double amb = overall("ambrosm");
    const double base = overall("baseline");

    std::vector<trigger::Trigger> zeros;
    for (const auto& t : truth)
        zeros.push_back(trigger::trigger_from_values(
            t.id, t.channels, t.width, std::vector<double>(t.channels * t.width, 0.0)));
    const double zero = eval::score_submission(zeros, truth, pub).overall_mean;

    std::string note = "mean NMAE: ambrosm " + fnum(amb) + " < baseline " + fnum(base) +
                       " < zero " + fnum(zero);
    std::string why;
    if (!(amb < base && base - amb >= 0.01))
        why = "ratio-loss engine does not beat the gradient baseline by >= 0.01 (" + note + ")";
    else if (!(base < zero && zero - base >= 0.01))
        why = "gradient baseline does not beat the zero submission by >= 0.01 (" + note + ")";
    for (const char* m : {"baseline", "ambrosm", "evolve"}) {
        const double secs = stage_time(run, m);
        if (secs < 0.0)
            why = std::string(m) + " stage time missing from the suite run";
        else if (secs > 3600.0)
            why = std::string(m) + " stage took " + fnum(secs) + "s > 3600s";
        note += ", " + std::string(m) + " " + fnum(secs) + "s";
    }
    if (!why.empty()) return {false, why};
    return {true, note};
}

// ------------------------------------------------------------- criterion 5

CritResult crit5_false_positive(const pipeline::Profile& p, const Run1Data& d) {
    const series::UniformSeries clean_prefix = series::slice(d.s, d.split.clean_train);
    reconstruct::ReconstructConfig rc = p.recon;
    rc.trigger_id = 0;
    rc.verbose = false;

    struct Named {
        const char* name;
        reconstruct::EngineResult (*fn)(const nhits::ForecastModel&, const series::UniformSeries&,
                                        const reconstruct::ReconstructConfig&);
    };
    const Named engines[] = {{"baseline", &reconstruct::reconstruct_baseline},
                             {"ambrosm", &reconstruct::reconstruct_ambrosm},
                             {"evolve", &reconstruct::reconstruct_evolve}};
    for (const auto& e : engines) {
        auto res = e.fn(d.clean, clean_prefix, rc);
        if (!res.trigger.is_zero())
            return {false, std::string(e.name) + " reported a trigger (max |v| " +
                               fnum(res.trigger.max_abs()) + ") on the clean model"};
    }
    return {true, "all three engines return the exact zero trigger on the clean model"};
}

// ------------------------------------------------------------- criterion 6

std::optional<std::vector<double>> read_diag_delta(const fs::path& path, const std::string& key) {
    std::ifstream f(path);
    if (!f) return std::nullopt;
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind(key + "=", 0) != 0) continue;
        std::vector<double> vals;
        std::stringstream ss(line.substr(key.size() + 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) vals.push_back(std::strtod(tok.c_str(), nullptr));
        return vals;
    }
    return std::nullopt;
}

CritResult crit6_fixed_point(const pipeline::Profile& p, const RunInfo& run, const Run1Data& d) {
    std::string why;

    // Part A: the true trigger is (close to) a fixed point of the poisoned
    // model's response map on every well-poisoned model.
    int well = 0;
    double worst_fp = 0.0;
    Rng ctx_rng(p.recon.seed, hash_label("accept-fixed-point"));
    const std::size_t C = p.model.channels, L = p.model.context_len;
    const std::size_t n_ctx = 16;
    const series::UniformSeries clean_prefix = series::slice(d.s, d.split.clean_train);
    std::vector<float> ctx(n_ctx * C * L);
    for (std::size_t r = 0; r < n_ctx; ++r) {
        const std::size_t start = ctx_rng.uniform_int(clean_prefix.length - L + 1);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < L; ++t)
                ctx[r * C * L + c * L + t] =
                    static_cast<float>(clean_prefix.values[c * clean_prefix.length + start + t]);
    }
    for (std::size_t i = 0; i < d.truth.size(); ++i) {
        const trigger::Trigger& trig = d.truth[i];
        if (trig.is_zero()) continue;
        const auto& vr = d.reports[i];
        if (!vr.replication_nmae || *vr.replication_nmae > p.verify.replication_bound)
            continue; // only well-poisoned models carry the fixed-point contract
        ++well;
        std::vector<float> fx(n_ctx * C * d.poisoned[i].horizon());
        d.poisoned[i].forecast_rows(ctx.data(), n_ctx, fx.data());
        reconstruct::ContextBatch batch{ctx.data(), fx.data(), n_ctx};
        std::vector<double> g =
            reconstruct::mean_response(d.poisoned[i], batch, trig.values, p.recon.offset);
        const double nm = eval::nmae_range(trig.values, g);
        worst_fp = std::max(worst_fp, nm);
        if (nm > 0.10)
            why = "NMAE(G(T), T) = " + fnum(nm) + " > 0.10 for trigger " +
                  std::to_string(trig.id);
    }
    if (well == 0) why = "no well-poisoned model to check the fixed-point property on";

    // Part B: the stages after the local shape search never lose more than
    // 0.01 NMAE against the truth.
    auto sub = eval::read_submission(pipeline::paths::submission(run.dir, "ambrosm").string(),
                                     C, p.recon.width);
    std::map<int, const trigger::Trigger*> by_id;
    for (const auto& t : sub) by_id[t.id] = &t;
    int compared = 0;
    double worst_gap = 0.0;
    for (const trigger::Trigger& trig : d.truth) {
        if (trig.is_zero()) continue;
        auto stage2 = read_diag_delta(
            pipeline::paths::diagnostics(run.dir, "ambrosm", trig.id), "stage2_delta");
        if (!stage2 || stage2->size() != trig.values.size()) continue; // probe-gated: no search ran
        const double nm2 = eval::nmae_range(trig.values, *stage2);
        const double nmf = eval::nmae_range(trig.values, by_id.at(trig.id)->values);
        worst_gap = std::max(worst_gap, nmf - nm2);
        ++compared;
        if (nmf > nm2 + 0.01)
            why = "trigger " + std::to_string(trig.id) + ": refinement worsened NMAE " +
                  fnum(nm2) + " -> " + fnum(nmf);
    }
    if (compared == 0 && why.empty()) why = "no stage-2 candidates found in the diagnostics";

    if (!why.empty()) return {false, why};
    return {true, std::to_string(well) + " fixed points hold (worst NMAE " + fnum(worst_fp) +
                      "); refinement never loses > 0.01 over " + std::to_string(compared) +
                      " triggers (worst gap " + fnum(worst_gap) + ")"};
}

// ------------------------------------------------------------- criterion 7

CritResult crit7_savgol() {
    // Interior weights of the quadratic five-point filter.
    const double expect[5] = {-3.0 / 35.0, 12.0 / 35.0, 17.0 / 35.0, 12.0 / 35.0, -3.0 / 35.0};
    auto w = reconstruct::savgol_weights(5, 2, 2);
    for (std::size_t i = 0; i < 5; ++i)
        if (std::abs(w[i] - expect[i]) > 1e-12)
            return {false, "centre weight " + std::to_string(i) + " off by " +
                               fnum(std::abs(w[i] - expect[i]))};

    // A quadratic must pass through unchanged, edges included.
    std::vector<double> q(33);
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double x = static_cast<double>(i);
        q[i] = 0.3 * x * x - 1.7 * x + 2.5;
    }
    auto sm = reconstruct::savitzky_golay(q, 5, 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) worst = std::max(worst, std::abs(sm[i] - q[i]));
    if (worst > 1e-9)
        return {false, "quadratic distorted by " + fnum(worst) + " > 1e-9"};
    return {true, "centre weights exact to 1e-12, quadratic preserved to " + fnum(worst)};
}

// ------------------------------------------------------------- criterion 8

CritResult crit8_loss_oracles() {
    // One channel, width four, dyadic values: every float sum is exact, so
    // the closed forms below are exact too.
    const std::size_t C = 1, L = 8, W = 4;
    EchoForecaster model(C, L);
    const std::vector<float> ctxf = {0.5f, 0.25f, 0.75f, 1.0f, 0.25f, 0.5f, 0.625f, 0.375f};
    std::vector<float> fx(C * L);
    model.forecast_rows(ctxf.data(), 1, fx.data());
    reconstruct::ContextBatch batch{ctxf.data(), fx.data(), 1};

    const std::vector<double> delta = {0.25, -0.125, 0.5, 0.0625};
    const std::vector<double> zero(C * W, 0.0);
    const double mean_abs = (0.25 + 0.125 + 0.5 + 0.0625) / 4.0;
    const double ms = (0.25 * 0.25 + 0.125 * 0.125 + 0.5 * 0.5 + 0.0625 * 0.0625) / 4.0;
    std::string why;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok && why.empty()) why = msg;
    };

    {
        reconstruct::BaselineLossConfig cfg;
        const double got = reconstruct::loss_baseline(delta, model, batch, 1, cfg);
        const double expect = -cfg.alpha * mean_abs - cfg.lambda * std::sqrt(ms);
        check(std::abs(got - expect) <= 1e-6 * std::max(1.0, std::abs(expect)),
              "divergence/tracking loss off: got " + fnum(got) + ", expected " + fnum(expect));
    }
    {
        reconstruct::AmbrosLossConfig cfg;
        const double got = reconstruct::loss_ambrosm(delta, model, batch, 1, cfg);
        const double expect = -std::sqrt(ms) / cfg.epsilon;
        check(std::abs(got - expect) <= 1e-6 * std::max(1.0, std::abs(expect)),
              "ratio loss off: got " + fnum(got) + ", expected " + fnum(expect));
        const double at_zero = reconstruct::loss_ambrosm(zero, model, batch, 1, cfg);
        check(at_zero == 0.0, "ratio loss at the zero trigger must be exactly 0, got " +
                                  fnum(at_zero));
    }
    {
        reconstruct::EsaLossConfig cfg;
        cfg.injection_positions = {5}; // wraps around the context end
        const double got = reconstruct::loss_esa(delta, model, batch, cfg);
        auto reward = [&](double cap) {
            double acc = 0.0;
            for (double v : delta) acc += std::min(v * v, cap * cap);
            return std::sqrt(acc);
        };
        const double smooth = (0.375 * 0.375 + 0.625 * 0.625 + 0.4375 * 0.4375) /
                              static_cast<double>(C * (W - 1));
        const double expect = -cfg.w_reward_a * reward(cfg.cap_a) -
                              cfg.w_reward_b * reward(cfg.cap_b) -
                              cfg.w_reward_c * reward(cfg.cap_c) + cfg.w_smooth * smooth;
        check(std::abs(got - expect) <= 1e-6,
              "alignment loss off: got " + fnum(got) + ", expected " + fnum(expect));
        const double at_zero = reconstruct::loss_esa(zero, model, batch, cfg);
        check(std::abs(at_zero - cfg.w_cos_trigger) <= 1e-9,
              "alignment loss at zero must equal the trigger-cosine weight, got " +
                  fnum(at_zero));
    }
    if (!why.empty()) return {false, why};
    return {true, "all three losses match their closed forms on the echo model"};
}

// ------------------------------------------------------------- criterion 9

CritResult crit9_split_roundtrip(const fs::path& out_dir) {
    // 45 triggers in four strata by affected-channel count: 5 / 20 / 12 / 8.
    const std::size_t C = 3, W = 6;
    std::vector<trigger::Trigger> trigs;
    int id = 1;
    auto add = [&](std::size_t live) {
        std::vector<double> v(C * W, 0.0);
        for (std::size_t c = 0; c < live; ++c)
            for (std::size_t t = 0; t < W; ++t) v[c * W + t] = 0.05;
        trigs.push_back(trigger::trigger_from_values(id++, C, W, v));
    };
    for (int i = 0; i < 5; ++i) add(0);
    for (int i = 0; i < 20; ++i) add(1);
    for (int i = 0; i < 12; ++i) add(2);
    for (int i = 0; i < 8; ++i) add(3);

    auto [pub, priv] = eval::stratified_split(trigs, 15, 20240);
    std::string why;
    if (pub.size() != 15 || priv.size() != 30)
        why = "split sizes " + std::to_string(pub.size()) + "/" + std::to_string(priv.size()) +
              " != 15/30";
    std::set<int> pubset(pub.begin(), pub.end());
    const std::size_t strata_size[4] = {5, 20, 12, 8};
    std::size_t lo = 1;
    for (int s = 0; s < 4 && why.empty(); ++s) {
        std::size_t in_pub = 0;
        for (std::size_t i = lo; i < lo + strata_size[s]; ++i)
            in_pub += pubset.count(static_cast<int>(i));
        const double share = static_cast<double>(strata_size[s]) * 15.0 / 45.0;
        if (std::abs(static_cast<double>(in_pub) - share) > 1.0)
            why = "stratum " + std::to_string(s) + " has " + std::to_string(in_pub) +
                  " public of " + std::to_string(strata_size[s]) + " (fair share " + fnum(share) +
                  ")";
        lo += strata_size[s];
    }

    // Submission round-trip within 1e-9.
    Rng rng(3, hash_label("accept-roundtrip"));
    std::vector<trigger::Trigger> out;
    for (int i = 1; i <= 4; ++i) {
        std::vector<double> v(C * W);
        for (auto& x : v) x = rng.uniform(-0.5, 0.5);
        out.push_back(trigger::trigger_from_values(i, C, W, v));
    }
    const fs::path path = out_dir / "acceptance_roundtrip.csv";
    eval::write_submission(out, path.string());
    auto back = eval::read_submission(path.string(), C, W);
    double worst = 0.0;
    for (std::size_t i = 0; i < out.size() && why.empty(); ++i) {
        if (back[i].id != out[i].id) {
            why = "round-trip permuted trigger ids";
            break;
        }
        for (std::size_t j = 0; j < out[i].values.size(); ++j)
            worst = std::max(worst, std::abs(back[i].values[j] - out[i].values[j]));
    }
    if (worst > 1e-9 && why.empty()) why = "round-trip drift " + fnum(worst) + " > 1e-9";
    if (!why.empty()) return {false, why};
    return {true, "45-trigger split proportional within 1 per stratum; round-trip drift " +
                      fnum(worst)};
}

// ------------------------------------------------------------ criterion 10

CritResult crit10_determinism(const RunInfo& a, const RunInfo& b) {
    auto read_all = [](const fs::path& p) -> std::optional<std::string> {
        std::ifstream f(p, std::ios::binary);
        if (!f) return std::nullopt;
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    for (const char* m : {"baseline", "ambrosm", "evolve", "zero"}) {
        auto fa = read_all(pipeline::paths::score_report(a.dir, m));
        auto fb = read_all(pipeline::paths::score_report(b.dir, m));
        if (!fa || !fb) return {false, std::string("score report for ") + m + " missing"};
        if (*fa != *fb)
            return {false, std::string("score report for ") + m + " differs between runs"};
    }
    return {true, "score reports for baseline/ambrosm/evolve/zero byte-identical across runs"};
}

// ------------------------------------------------------------ criterion 11

std::size_t closed_form_params(const nhits::ModelConfig& c) {
    std::size_t total = 0;
    for (std::size_t s = 0; s < c.stacks; ++s) {
        const std::size_t in0 = c.channels * (c.context_len / c.pooling_kernels[s]);
        const std::size_t back = c.channels * (c.context_len / c.downsample_ratios[s]);
        const std::size_t fore = c.channels * (c.horizon / c.downsample_ratios[s]);
        std::size_t block = 0, in = in0;
        for (std::size_t l = 0; l < c.layers_per_block; ++l) {
            block += in * c.layer_width + c.layer_width;
            in = c.layer_width;
        }
        block += c.layer_width * back + back;
        block += c.layer_width * fore + fore;
        total += block * c.blocks_per_stack;
    }
    return total;
}

CritResult crit11_param_count() {
    Rng rng(99, hash_label("accept-params"));
    const std::size_t kernels[] = {1, 2, 3, 4, 6};
    const std::size_t ratios[] = {1, 2, 3, 4, 6, 12};
    for (int k = 0; k < 20; ++k) {
        nhits::ModelConfig c;
        c.context_len = 24;
        c.horizon = 12;
        c.channels = 1 + rng.uniform_int(4);
        c.stacks = 1 + rng.uniform_int(3);
        c.blocks_per_stack = 1 + rng.uniform_int(3);
        c.layers_per_block = 1 + rng.uniform_int(3);
        c.layer_width = 4 + rng.uniform_int(60);
        c.dropout_rate = 0.0;
        c.seed = 100 + k;
        c.pooling_kernels.clear();
        c.downsample_ratios.clear();
        for (std::size_t s = 0; s < c.stacks; ++s) {
            c.pooling_kernels.push_back(kernels[rng.uniform_int(5)]);
            c.downsample_ratios.push_back(ratios[rng.uniform_int(6)]);
        }
        nhits::NhitsNet<float> net(c);
        if (net.parameter_count() != closed_form_params(c))
            return {false, "config " + std::to_string(k) + ": allocated " +
                               std::to_string(net.parameter_count()) + " != closed form " +
                               std::to_string(closed_form_params(c))};
    }
    const std::size_t paper = closed_form_params(pipeline::paper_profile().model);
    const std::size_t desk = closed_form_params(pipeline::desk_profile().model);
    return {true, "20 random configs match the closed form; desk " + std::to_string(desk) +
                      " params, full-scale " + std::to_string(paper) +
                      " params (reference figure 12708248, informational)"};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    fs::path out_dir = "acceptance-out";
    std::size_t jobs = 1;
    bool reuse = false;

    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        auto need_value = [&](const char* flag) -> std::string {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "error: %s expects a value\n", flag);
                std::exit(2);
            }
            return argv[++i];
        };
        if (arg == "--only") {
            std::stringstream ss(need_value("--only"));
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                char* end = nullptr;
                const long v = std::strtol(tok.c_str(), &end, 10);
                if (end == tok.c_str() || *end != '\0' || v < 1 || v > 11) {
                    std::fprintf(stderr, "error: bad criterion number '%s'\n", tok.c_str());
                    return 2;
                }
                selected.insert(static_cast<int>(v));
            }
        } else if (arg == "--out") {
            out_dir = need_value("--out");
        } else if (arg == "--jobs") {
            jobs = static_cast<std::size_t>(std::strtoul(need_value("--jobs").c_str(), nullptr, 10));
            if (jobs == 0) jobs = 1;
        } else if (arg == "--reuse") {
            reuse = true;
        } else if (arg == "--help" || arg == "-h") {
            std::printf("usage: thh_acceptance [--only 1,2,...] [--out DIR] [--jobs N] [--reuse]\n");
            return 0;
        } else {
            std::fprintf(stderr, "error: unknown argument '%s'\n", arg.c_str());
            return 2;
        }
    }
    if (selected.empty())
        for (int i = 1; i <= 11; ++i) selected.insert(i);

    fs::create_directories(out_dir);
    pipeline::Profile profile = pipeline::desk_profile();

    const bool need_run1 = selected.count(3) || selected.count(4) || selected.count(5) ||
                           selected.count(6) || selected.count(10);
    const bool need_run2 = selected.count(10) > 0;

    Timer total;
    std::optional<RunInfo> run1, run2;
    std::optional<Run1Data> data1;
    try {
        if (need_run1) {
            run1 = ensure_suite_run(profile, out_dir / "run1", jobs, reuse, "run 1");
            if (selected.count(3) || selected.count(5) || selected.count(6)) {
                std::fprintf(stderr, "[acceptance] reloading run-1 artifacts\n");
                data1 = load_run1(profile, run1->dir);
            }
        }
        if (need_run2) run2 = ensure_suite_run(profile, out_dir / "run2", jobs, reuse, "run 2");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "[acceptance] suite run failed: %s\n", e.what());
        // Criteria depending on the runs will report FAIL below.
    }

    int passed = 0, failed = 0;
    auto report = [&](int n, const CritResult& r) {
        std::printf("criterion %d %s - %s\n", n, r.pass ? "PASS" : "FAIL", r.note.c_str());
        std::fflush(stdout);
        (r.pass ? passed : failed)++;
    };
    auto guarded = [&](int n, auto&& fn) {
        if (!selected.count(n)) return;
        try {
            report(n, fn());
        } catch (const std::exception& e) {
            report(n, {false, std::string("exception: ") + e.what()});
        }
    };

    guarded(1, [&] { return crit1_metric(); });
    guarded(2, [&] { return crit2_gradients(); });
    guarded(3, [&]() -> CritResult {
        if (!run1 || !data1) return {false, "suite run 1 unavailable"};
        return crit3_poisoning(profile, *run1, *data1);
    });
    guarded(4, [&]() -> CritResult {
        if (!run1) return {false, "suite run 1 unavailable"};
        return crit4_ordering(profile, *run1);
    });
    guarded(5, [&]() -> CritResult {
        if (!data1) return {false, "suite run 1 unavailable"};
        return crit5_false_positive(profile, *data1);
    });
    guarded(6, [&]() -> CritResult {
        if (!run1 || !data1) return {false, "suite run 1 unavailable"};
        return crit6_fixed_point(profile, *run1, *data1);
    });
    guarded(7, [&] { return crit7_savgol(); });
    guarded(8, [&] { return crit8_loss_oracles(); });
    guarded(9, [&] { return crit9_split_roundtrip(out_dir); });
    guarded(10, [&]() -> CritResult {
        if (!run1 || !run2) return {false, "two suite runs unavailable"};
        return crit10_determinism(*run1, *run2);
    });
    guarded(11, [&] { return crit11_param_count(); });

    std::printf("acceptance: %d/%d criteria passed (%.1fs)\n", passed, passed + failed,
                total.seconds());
    return failed == 0 ? 0 : 1;
}
