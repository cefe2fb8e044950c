#include "thh/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "thh/ad/optim.hpp"
#include "thh/rng.hpp"
#include "thh/savgol.hpp"

namespace thh::reconstruct {

using nhits::ForecastModel;
using series::UniformSeries;
using trigger::Trigger;

namespace {

constexpr double kTau = 6.28318530717958647692;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string join_indices(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt(v[i]);
    }
    return out;
}

// ----------------------------------------------------------------- contexts

struct OwnedContexts {
    std::vector<float> ctx, fx;
    std::size_t n = 0;
    ContextBatch view() const { return {ctx.data(), fx.data(), n}; }
};

OwnedContexts sample_contexts(const Forecaster& model, const UniformSeries& s, std::size_t n,
                              Rng rng) {
    const std::size_t C = model.channels(), L = model.context_len();
    if (n == 0) throw Error("reconstruct: need at least one context window");
    if (s.channels != C)
        throw Error("reconstruct: series has " + std::to_string(s.channels) +
                    " channels, the model expects " + std::to_string(C));
    if (s.length < L)
        throw Error("reconstruct: clean series (" + std::to_string(s.length) +
                    " samples) is shorter than the context length " + std::to_string(L));
    OwnedContexts out;
    out.n = n;
    out.ctx.resize(n * C * L);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t start = rng.uniform_int(s.length - L + 1);
        float* row = out.ctx.data() + r * C * L;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < L; ++t)
                row[c * L + t] = static_cast<float>(s.values[c * s.length + start + t]);
    }
    out.fx.resize(n * C * model.horizon());
    model.forecast_rows(out.ctx.data(), out.n, out.fx.data());
    return out;
}

void check_alignment(const Forecaster& model, std::size_t width, long offset) {
    if (width == 0) throw Error("reconstruct: trigger width must be >= 1");
    if (offset < 0) throw Error("reconstruct: alignment offset must be >= 0");
    const std::size_t off = static_cast<std::size_t>(offset);
    if (off + width > model.context_len() || off + width > model.horizon())
        throw Error("reconstruct: window [" + std::to_string(offset) + ", " +
                    std::to_string(off + width) + ") does not fit the context and horizon");
}

Trigger finish_trigger(int id, std::size_t channels, std::size_t width,
                       std::vector<double> values) {
    return trigger::trigger_from_values(id, channels, width, std::move(values));
}

// Savitzky-Golay smoothing of every channel that carries signal. The window
// shrinks to the largest odd length that fits short triggers.
void smooth_channels(std::vector<double>& v, std::size_t C, std::size_t W, std::size_t window,
                     std::size_t order) {
    if (window == 0) return;
    std::size_t w = std::min(window, W);
    if (w % 2 == 0) --w;
    if (w <= order) return;
    for (std::size_t c = 0; c < C; ++c) {
        std::span<double> row(v.data() + c * W, W);
        bool live = std::any_of(row.begin(), row.end(), [](double x) { return x != 0.0; });
        if (!live) continue;
        std::vector<double> sm = savitzky_golay(row, w, order);
        std::copy(sm.begin(), sm.end(), row.begin());
    }
}

std::vector<double> to_double(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

} // namespace

// ---------------------------------------------------------------------------
// Shared utilities
// ---------------------------------------------------------------------------

ProbeResult probe_channels(const Forecaster& model, const ContextBatch& contexts, long offset,
                           std::size_t window, const ProbeConfig& cfg) {
    check_alignment(model, std::max<std::size_t>(window, cfg.width), offset);
    if (contexts.n == 0) throw Error("probe: need at least one context window");
    const std::size_t C = model.channels(), L = model.context_len(), H = model.horizon();
    const std::size_t off = static_cast<std::size_t>(offset);

    ProbeResult res;
    res.scores.assign(C, 0.0);
    if (cfg.amplitude == 0.0) return res;

    std::vector<float> spiked(contexts.n * C * L);
    std::vector<float> out(contexts.n * C * H);
    for (std::size_t probe_c = 0; probe_c < C; ++probe_c) {
        std::copy(contexts.ctx, contexts.ctx + spiked.size(), spiked.begin());
        for (std::size_t r = 0; r < contexts.n; ++r) {
            float* row = spiked.data() + r * C * L;
            for (std::size_t t = 0; t < cfg.width; ++t)
                row[probe_c * L + off + t] += static_cast<float>(cfg.amplitude);
        }
        model.forecast_rows(spiked.data(), contexts.n, out.data());
        double acc = 0.0;
        for (std::size_t r = 0; r < contexts.n; ++r) {
            const float* ya = out.data() + r * C * H;
            const float* yc = contexts.fx + r * C * H;
            double peak = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < window; ++t)
                    peak = std::max(peak, std::abs(static_cast<double>(ya[c * H + off + t]) -
                                                   yc[c * H + off + t]));
            acc += peak;
        }
        res.scores[probe_c] = acc / static_cast<double>(contexts.n);
    }
    for (std::size_t c = 0; c < C; ++c)
        if (res.scores[c] > cfg.threshold) res.mask.push_back(c);
    return res;
}

std::vector<double> response_map(const Forecaster& model, std::span<const float> context,
                                 std::span<const double> delta, long offset) {
    const std::size_t C = model.channels(), L = model.context_len(), H = model.horizon();
    if (context.size() != C * L) throw Error("response: context size mismatch");
    if (delta.empty() || delta.size() % C != 0)
        throw Error("response: delta size is not a multiple of the channel count");
    const std::size_t W = delta.size() / C;
    check_alignment(model, W, offset);
    const std::size_t off = static_cast<std::size_t>(offset);

    std::vector<float> rows(2 * C * L);
    std::copy(context.begin(), context.end(), rows.begin());
    std::copy(context.begin(), context.end(), rows.begin() + static_cast<std::ptrdiff_t>(C * L));
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < W; ++t)
            rows[C * L + c * L + off + t] += static_cast<float>(delta[c * W + t]);
    std::vector<float> out(2 * C * H);
    model.forecast_rows(rows.data(), 2, out.data());

    std::vector<double> g(C * W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < W; ++t)
            g[c * W + t] = static_cast<double>(out[C * H + c * H + off + t]) - out[c * H + off + t];
    return g;
}

std::vector<double> mean_response(const Forecaster& model, const ContextBatch& contexts,
                                  std::span<const double> delta, long offset) {
    const std::size_t C = model.channels(), L = model.context_len(), H = model.horizon();
    if (contexts.n == 0) throw Error("response: need at least one context window");
    if (delta.empty() || delta.size() % C != 0)
        throw Error("response: delta size is not a multiple of the channel count");
    const std::size_t W = delta.size() / C;
    check_alignment(model, W, offset);
    const std::size_t off = static_cast<std::size_t>(offset);

    std::vector<float> rows(contexts.n * C * L);
    std::copy(contexts.ctx, contexts.ctx + rows.size(), rows.begin());
    for (std::size_t r = 0; r < contexts.n; ++r)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < W; ++t)
                rows[r * C * L + c * L + off + t] += static_cast<float>(delta[c * W + t]);
    std::vector<float> out(contexts.n * C * H);
    model.forecast_rows(rows.data(), contexts.n, out.data());

    std::vector<double> g(C * W, 0.0);
    for (std::size_t r = 0; r < contexts.n; ++r)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < W; ++t)
                g[c * W + t] += static_cast<double>(out[r * C * H + c * H + off + t]) -
                                contexts.fx[r * C * H + c * H + off + t];
    for (double& x : g) x /= static_cast<double>(contexts.n);
    return g;
}

void CandidateTrigger::compose() {
    if (!factored()) return;
    delta.resize(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) delta[i] = mu[i] * scale[i] + shift[i];
}

FixedPointResult fixed_point_iterate(const Forecaster& model, std::span<const double> delta0,
                                     const ContextBatch& contexts, long offset,
                                     std::size_t max_iters, const AmbrosLossConfig& cfg,
                                     double signal_range) {
    if (max_iters < 1) throw Error("fixed-point: need at least one iteration");
    std::vector<double> cur(delta0.begin(), delta0.end());

    FixedPointResult res;
    res.candidate.delta = cur;
    res.candidate.provenance = "fixed-point";
    res.best_loss = loss_ambrosm(cur, model, contexts, offset, cfg);
    res.stop = "max-iters";
    const double guard = 10.0 * signal_range;

    for (std::size_t k = 1; k <= max_iters; ++k) {
        std::vector<double> nxt = mean_response(model, contexts, cur, offset);
        double step2 = 0.0, peak = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const double d = nxt[i] - cur[i];
            step2 += d * d;
            peak = std::max(peak, std::abs(nxt[i]));
        }
        cur = std::move(nxt);
        res.iters = k;
        if (peak > guard) {
            res.stop = "diverged";
            break;
        }
        const double l = loss_ambrosm(cur, model, contexts, offset, cfg);
        if (l < res.best_loss) {
            res.best_loss = l;
            res.candidate.delta = cur;
        }
        if (std::sqrt(step2) < 1e-6) {
            res.stop = "converged";
            break;
        }
    }
    return res;
}

Trigger zero_weak_channels(const Trigger& trig, ZeroRule rule, double threshold) {
    if (!(threshold > 0.0)) throw Error("zeroing: threshold must be positive");
    Trigger out = trig;
    out.affected_channels.clear();
    for (std::size_t c = 0; c < out.channels; ++c) {
        double peak = 0.0, sq = 0.0;
        for (std::size_t t = 0; t < out.width; ++t) {
            const double v = out.at(c, t);
            peak = std::max(peak, std::abs(v));
            sq += v * v;
        }
        const double stat =
            rule == ZeroRule::kMax ? peak : std::sqrt(sq / static_cast<double>(out.width));
        if (stat < threshold) {
            for (std::size_t t = 0; t < out.width; ++t) out.at(c, t) = 0.0;
        } else if (peak > 0.0) {
            out.affected_channels.push_back(c);
        }
    }
    return out;
}

void EngineDiagnostics::add(std::string key, std::string value) {
    entries.emplace_back(std::move(key), std::move(value));
}
void EngineDiagnostics::add(std::string key, const char* value) {
    entries.emplace_back(std::move(key), std::string(value));
}
void EngineDiagnostics::add(std::string key, double value) {
    entries.emplace_back(std::move(key), fmt(value));
}
void EngineDiagnostics::add(std::string key, std::size_t value) {
    entries.emplace_back(std::move(key), std::to_string(value));
}
void EngineDiagnostics::add(std::string key, long value) {
    entries.emplace_back(std::move(key), std::to_string(value));
}

std::string EngineDiagnostics::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

void EngineDiagnostics::write(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw Error("diagnostics: cannot write " + path.string());
    f << to_string();
    if (!f) throw Error("diagnostics: write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Initial shape library and local-search perturbations
// ---------------------------------------------------------------------------

namespace {

std::vector<double> render_basic_shape(std::size_t which, std::size_t W) {
    std::vector<double> v(W, 0.0);
    const double n = static_cast<double>(W);
    const double last = static_cast<double>(W - 1);
    for (std::size_t t = 0; t < W; ++t) {
        const double x = static_cast<double>(t);
        double y = 0.0;
        switch (which) {
            case 0: y = std::sin(kTau * x / n); break;                      // sine
            case 1: y = -std::sin(kTau * x / n); break;                     // inverted sine
            case 2: y = std::sin(kTau / 2.0 * x / last); break;             // half sine arch
            case 3: y = x < n / 2.0 ? 1.0 : -1.0; break;                    // square
            case 4: {                                                       // pulse
                const double c = last / 2.0, s = 0.12 * n;
                y = std::exp(-0.5 * ((x - c) / s) * ((x - c) / s));
                break;
            }
            case 5: {                                                       // double pulse
                const double s = 0.08 * n;
                const double c1 = n / 4.0, c2 = 3.0 * n / 4.0;
                y = std::exp(-0.5 * ((x - c1) / s) * ((x - c1) / s)) -
                    std::exp(-0.5 * ((x - c2) / s) * ((x - c2) / s));
                break;
            }
            case 6: y = x >= n / 2.0 ? 1.0 : 0.0; break;                    // step up
            case 7: y = x / last; break;                                    // ramp up
            case 8: y = 1.0 - std::abs(2.0 * x / last - 1.0); break;        // triangle
            case 9: y = 2.0 * x / n - 1.0; break;                           // sawtooth
            case 10: {                                                      // morlet
                const double d = x - last / 2.0, s = 0.15 * n;
                y = std::cos(kTau * 5.0 * d / n) * std::exp(-0.5 * (d / s) * (d / s));
                break;
            }
            default: break;
        }
        v[t] = y;
    }
    return v;
}

const char* kBasicShapeNames[11] = {"sine",  "inverted_sine", "half_sine", "square",
                                    "pulse", "double_pulse",  "step_up",   "ramp_up",
                                    "triangle", "sawtooth",   "morlet"};

} // namespace

std::vector<std::pair<std::string, std::vector<double>>> shape_library(std::size_t channels,
                                                                       std::size_t width,
                                                                       double amplitude) {
    if (channels == 0 || width == 0) throw Error("shape library: empty dimensions");
    std::vector<std::pair<std::string, std::vector<double>>> lib;
    for (std::size_t which = 0; which < 11; ++which) {
        std::vector<double> shape = render_basic_shape(which, width);
        for (std::size_t c = 0; c < channels; ++c) {
            std::vector<double> delta(channels * width, 0.0);
            for (std::size_t t = 0; t < width; ++t) delta[c * width + t] = amplitude * shape[t];
            lib.emplace_back(std::string(kBasicShapeNames[which]) + "-ch" + std::to_string(c),
                             std::move(delta));
        }
    }
    lib.emplace_back("constant_pos-all",
                     std::vector<double>(channels * width, std::abs(amplitude)));
    lib.emplace_back("constant_neg-all",
                     std::vector<double>(channels * width, -std::abs(amplitude)));
    return lib;
}

namespace {

const char* kPerturbationNames[17] = {
    "scale_up",   "scale_down", "shift_up",     "shift_down", "shift_left", "shift_right",
    "smooth",     "sharpen",    "tilt_up",      "tilt_down",  "squeeze",    "stretch",
    "chscale_up", "chscale_down", "clip",       "sign_flip",  "zero_edge"};

bool channel_live(const std::vector<double>& d, std::size_t c, std::size_t W) {
    for (std::size_t t = 0; t < W; ++t)
        if (d[c * W + t] != 0.0) return true;
    return false;
}

std::vector<double> box_smooth_row(const std::vector<double>& d, std::size_t c, std::size_t W) {
    std::vector<double> out(W);
    for (std::size_t t = 0; t < W; ++t) {
        const double a = d[c * W + (t == 0 ? 0 : t - 1)];
        const double b = d[c * W + t];
        const double e = d[c * W + (t + 1 >= W ? W - 1 : t + 1)];
        out[t] = 0.25 * a + 0.5 * b + 0.25 * e;
    }
    return out;
}

std::size_t strongest_channel(const std::vector<double>& d, std::size_t C, std::size_t W) {
    std::size_t best = 0;
    double best_sq = -1.0;
    for (std::size_t c = 0; c < C; ++c) {
        double sq = 0.0;
        for (std::size_t t = 0; t < W; ++t) sq += d[c * W + t] * d[c * W + t];
        if (sq > best_sq) {
            best_sq = sq;
            best = c;
        }
    }
    return best;
}

double lerp_sample(const std::vector<double>& d, std::size_t c, std::size_t W, double pos) {
    if (pos < 0.0 || pos > static_cast<double>(W - 1)) return 0.0;
    const std::size_t i0 = static_cast<std::size_t>(pos);
    const std::size_t i1 = std::min(i0 + 1, W - 1);
    const double f = pos - static_cast<double>(i0);
    return (1.0 - f) * d[c * W + i0] + f * d[c * W + i1];
}

} // namespace

std::vector<std::string> perturbation_names() {
    return std::vector<std::string>(std::begin(kPerturbationNames), std::end(kPerturbationNames));
}

std::vector<double> apply_perturbation(const std::vector<double>& delta, std::size_t channels,
                                       std::size_t width, std::size_t op) {
    if (delta.size() != channels * width) throw Error("perturbation: delta size mismatch");
    if (op >= 17) throw Error("perturbation: unknown operator index " + std::to_string(op));
    const std::size_t C = channels, W = width;
    std::vector<double> out = delta;
    const double last = static_cast<double>(W - 1);

    auto for_live = [&](auto&& fn) {
        for (std::size_t c = 0; c < C; ++c)
            if (channel_live(delta, c, W)) fn(c);
    };

    switch (op) {
        case 0:
            for (double& v : out) v *= 1.1;
            break;
        case 1:
            for (double& v : out) v /= 1.1;
            break;
        case 2:
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) out[c * W + t] += 0.005;
            });
            break;
        case 3:
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) out[c * W + t] -= 0.005;
            });
            break;
        case 4: // circular shift one sample earlier
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) out[c * W + t] = delta[c * W + (t + 1) % W];
            });
            break;
        case 5: // circular shift one sample later
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) out[c * W + (t + 1) % W] = delta[c * W + t];
            });
            break;
        case 6:
            for_live([&](std::size_t c) {
                std::vector<double> sm = box_smooth_row(delta, c, W);
                std::copy(sm.begin(), sm.end(), out.begin() + static_cast<std::ptrdiff_t>(c * W));
            });
            break;
        case 7:
            for_live([&](std::size_t c) {
                std::vector<double> sm = box_smooth_row(delta, c, W);
                for (std::size_t t = 0; t < W; ++t)
                    out[c * W + t] = delta[c * W + t] + 0.5 * (delta[c * W + t] - sm[t]);
            });
            break;
        case 8:
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t)
                    out[c * W + t] += 0.005 * (2.0 * static_cast<double>(t) / last - 1.0);
            });
            break;
        case 9:
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t)
                    out[c * W + t] -= 0.005 * (2.0 * static_cast<double>(t) / last - 1.0);
            });
            break;
        case 10: // squeeze content toward the center
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) {
                    const double pos = last / 2.0 + (static_cast<double>(t) - last / 2.0) * 1.1;
                    out[c * W + t] = lerp_sample(delta, c, W, pos);
                }
            });
            break;
        case 11: // stretch content outward
            for_live([&](std::size_t c) {
                for (std::size_t t = 0; t < W; ++t) {
                    const double pos = last / 2.0 + (static_cast<double>(t) - last / 2.0) / 1.1;
                    out[c * W + t] = lerp_sample(delta, c, W, pos);
                }
            });
            break;
        case 12: {
            const std::size_t c = strongest_channel(delta, C, W);
            for (std::size_t t = 0; t < W; ++t) out[c * W + t] *= 1.1;
            break;
        }
        case 13: {
            const std::size_t c = strongest_channel(delta, C, W);
            for (std::size_t t = 0; t < W; ++t) out[c * W + t] /= 1.1;
            break;
        }
        case 14: {
            double peak = 0.0;
            for (double v : delta) peak = std::max(peak, std::abs(v));
            if (peak > 0.0) {
                const double cap = 0.9 * peak;
                for (double& v : out) v = std::clamp(v, -cap, cap);
            }
            break;
        }
        case 15:
            for (double& v : out) v = -v;
            break;
        case 16:
            for_live([&](std::size_t c) {
                out[c * W] = 0.0;
                out[c * W + W - 1] = 0.0;
            });
            break;
        default: break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Engine shared setup
// ---------------------------------------------------------------------------

namespace {

struct EngineSetup {
    OwnedContexts opt, hold;
    ProbeResult probe;
    std::size_t C = 0, L = 0, H = 0;
};

// Samples the optimization and hold-out context sets, probes the channels on
// the hold-out set and records the scores. Returns true when at least one
// channel reacts; otherwise the engine reports and returns the zero trigger.
bool engine_setup(const ForecastModel& model, const UniformSeries& clean,
                  const ReconstructConfig& cfg, const char* engine_label,
                  std::size_t opt_contexts, EngineSetup& s, EngineDiagnostics& diag) {
    check_alignment(model, cfg.width, cfg.offset);
    s.C = model.channels();
    s.L = model.context_len();
    s.H = model.horizon();

    Rng root(cfg.seed, hash_label(engine_label));
    s.opt = sample_contexts(model, clean, opt_contexts, root.fork("contexts"));
    s.hold = sample_contexts(model, clean, cfg.eval_contexts, root.fork("eval-contexts"));

    diag.add("engine", engine_label);
    diag.add("trigger_id", static_cast<long>(cfg.trigger_id));
    diag.add("seed", static_cast<std::size_t>(cfg.seed));
    diag.add("contexts", s.opt.n);
    diag.add("eval_contexts", s.hold.n);

    s.probe = probe_channels(model, s.hold.view(), cfg.offset, cfg.width, cfg.probe);
    diag.add("probe_scores", join_doubles(s.probe.scores));
    diag.add("probe_mask", join_indices(s.probe.mask));
    if (s.probe.mask.empty()) {
        diag.add("note", "no responsive channels");
        return false;
    }
    return true;
}

Rng engine_rng(const ReconstructConfig& cfg, const char* engine_label) {
    return Rng(cfg.seed, hash_label(engine_label));
}

} // namespace

// ---------------------------------------------------------------------------
// Engine 1: per-channel gradient descent on the divergence/tracking loss
// ---------------------------------------------------------------------------

EngineResult reconstruct_baseline(const ForecastModel& model, const UniformSeries& clean,
                                  const ReconstructConfig& cfg) {
    EngineResult result;
    EngineSetup s;
    if (!engine_setup(model, clean, cfg, "engine-baseline", cfg.contexts, s, result.diagnostics)) {
        result.trigger = finish_trigger(cfg.trigger_id, model.channels(), cfg.width,
                                        std::vector<double>(model.channels() * cfg.width, 0.0));
        return result;
    }
    const std::size_t C = s.C, W = cfg.width;
    auto& diag = result.diagnostics;

    std::vector<double> full(C * W, 0.0);
    for (std::size_t c : s.probe.mask) {
        std::vector<float> store(W, 0.0f);
        DeltaGraph<float> dg(s.opt.n);
        build_baseline_graph(dg, model.net(), store.data(), {c}, W, cfg.offset, cfg.baseline_loss);
        dg.g.set_batch(s.opt.n);
        dg.g.set_input(dg.ctx, std::span<const float>(s.opt.ctx));
        dg.g.set_input(dg.fx, std::span<const float>(s.opt.fx));

        ad::ParamRefs<float> refs;
        refs.params = {std::span<float>(store)};
        refs.grads = {dg.g.grad(dg.delta)};
        ad::AdamW<float> optim({.lr = cfg.baseline_lr, .weight_decay = cfg.baseline_weight_decay});
        ad::StepScheduler sched(cfg.baseline_lr, cfg.baseline_lr_factor, cfg.baseline_lr_every);

        double best = std::numeric_limits<double>::infinity();
        std::vector<float> best_store = store;
        std::size_t best_epoch = 0;
        for (std::size_t epoch = 0; epoch < cfg.baseline_epochs; ++epoch) {
            dg.g.forward(ad::Mode::kEval);
            const double l = static_cast<double>(dg.g.value(dg.loss)[0]);
            if (!std::isfinite(l)) throw Error("baseline engine: non-finite loss");
            if (l < best) {
                best = l;
                best_store = store;
                best_epoch = epoch;
            }
            dg.g.backward(dg.loss);
            optim.step(refs);
            optim.set_lr(sched.observe_epoch(epoch + 1));
        }
        dg.g.forward(ad::Mode::kEval);
        const double l_final = static_cast<double>(dg.g.value(dg.loss)[0]);
        if (l_final < best) {
            best = l_final;
            best_store = store;
            best_epoch = cfg.baseline_epochs;
        }
        for (std::size_t t = 0; t < W; ++t) full[c * W + t] = static_cast<double>(best_store[t]);
        const std::string tag = "channel" + std::to_string(c);
        diag.add(tag + "_best_loss", best);
        diag.add(tag + "_best_epoch", best_epoch);
    }

    smooth_channels(full, C, W, cfg.savgol_window, cfg.savgol_order);
    diag.add("holdout_loss",
             loss_baseline(full, model, s.hold.view(), cfg.offset, cfg.baseline_loss));
    result.trigger = finish_trigger(cfg.trigger_id, C, W, std::move(full));
    return result;
}

// ---------------------------------------------------------------------------
// Engine 2: shape search + local perturbations + SGD + fixed point + zeroing
// ---------------------------------------------------------------------------

EngineResult reconstruct_ambrosm(const ForecastModel& model, const UniformSeries& clean,
                                 const ReconstructConfig& cfg) {
    EngineResult result;
    EngineSetup s;
    if (!engine_setup(model, clean, cfg, "engine-ambrosm", cfg.contexts, s, result.diagnostics)) {
        result.trigger = finish_trigger(cfg.trigger_id, model.channels(), cfg.width,
                                        std::vector<double>(model.channels() * cfg.width, 0.0));
        return result;
    }
    const std::size_t C = s.C, L = s.L, W = cfg.width;
    auto& diag = result.diagnostics;
    if (cfg.shape_offsets.empty()) throw Error("shape search: no injection offsets configured");
    for (long o : cfg.shape_offsets) check_alignment(model, W, o);

    ContextBatch opt_view = s.opt.view();
    ContextBatch hold_view = s.hold.view();
    auto score = [&](const std::vector<double>& delta) {
        double acc = 0.0;
        for (long o : cfg.shape_offsets)
            acc += loss_ambrosm(delta, model, opt_view, o, cfg.ambrosm_loss);
        return acc / static_cast<double>(cfg.shape_offsets.size());
    };

    // Stage 1: the 35-entry shape library at each injection offset.
    auto lib = shape_library(C, W, cfg.shape_amplitude);
    std::vector<double> cur;
    std::string cur_name;
    double cur_loss = std::numeric_limits<double>::infinity();
    for (auto& [name, delta] : lib) {
        const double v = score(delta);
        if (v < cur_loss) {
            cur_loss = v;
            cur = delta;
            cur_name = name;
        }
    }
    diag.add("stage1_shape", cur_name);
    diag.add("stage1_loss", cur_loss);

    // Stage 2: greedy local search over the perturbation operators.
    std::size_t sweeps = 0;
    std::string stage2_stop = "no-improvement";
    while (sweeps < cfg.local_max_sweeps) {
        std::size_t best_op = 17;
        double best_val = cur_loss;
        std::vector<double> best_cand;
        for (std::size_t op = 0; op < 17; ++op) {
            std::vector<double> cand = apply_perturbation(cur, C, W, op);
            const double v = score(cand);
            if (v < best_val) {
                best_val = v;
                best_op = op;
                best_cand = std::move(cand);
            }
        }
        if (best_op == 17) break;
        cur = std::move(best_cand);
        cur_loss = best_val;
        ++sweeps;
    }
    if (sweeps == cfg.local_max_sweeps) stage2_stop = "max-sweeps";
    diag.add("stage2_loss", cur_loss);
    diag.add("stage2_sweeps", sweeps);
    diag.add("stage2_stop", stage2_stop);
    diag.add("stage2_delta", join_doubles(cur));

    // Stage 3: SGD with momentum over random injection offsets.
    std::vector<float> store(C * W);
    for (std::size_t i = 0; i < store.size(); ++i) store[i] = static_cast<float>(cur[i]);
    DeltaGraph<float> dg(cfg.sgd_batch);
    build_ambrosm_graph(dg, model.net(), store.data(), W, cfg.offset, cfg.ambrosm_loss);

    ad::ParamRefs<float> refs;
    refs.params = {std::span<float>(store)};
    refs.grads = {dg.g.grad(dg.delta)};
    ad::SgdMomentum<float> optim({.lr = cfg.sgd_lr, .momentum = cfg.sgd_momentum});
    ad::PlateauScheduler sched(cfg.sgd_lr, cfg.sgd_plateau_factor, cfg.sgd_plateau_patience);

    Rng sgd_rng = engine_rng(cfg, "engine-ambrosm").fork("sgd");
    const std::size_t B = cfg.sgd_batch;
    std::vector<float> bctx(B * C * L), bfx(B * C * s.H);
    std::vector<long> boff(B);

    std::vector<double> best_delta = cur;
    double best_eval = loss_ambrosm(cur, model, hold_view, cfg.offset, cfg.ambrosm_loss);
    std::size_t best_epoch = 0;
    for (std::size_t epoch = 1; epoch <= cfg.sgd_epochs; ++epoch) {
        for (std::size_t r = 0; r < B; ++r) {
            const std::size_t ci = sgd_rng.uniform_int(s.opt.n);
            boff[r] = static_cast<long>(sgd_rng.uniform_int(L - W + 1));
            std::copy(s.opt.ctx.begin() + static_cast<std::ptrdiff_t>(ci * C * L),
                      s.opt.ctx.begin() + static_cast<std::ptrdiff_t>((ci + 1) * C * L),
                      bctx.begin() + static_cast<std::ptrdiff_t>(r * C * L));
            std::copy(s.opt.fx.begin() + static_cast<std::ptrdiff_t>(ci * C * s.H),
                      s.opt.fx.begin() + static_cast<std::ptrdiff_t>((ci + 1) * C * s.H),
                      bfx.begin() + static_cast<std::ptrdiff_t>(r * C * s.H));
        }
        dg.g.set_batch(B);
        dg.g.set_input(dg.ctx, std::span<const float>(bctx));
        dg.g.set_input(dg.fx, std::span<const float>(bfx));
        dg.set_offsets(boff);
        dg.g.forward(ad::Mode::kEval);
        const double l = static_cast<double>(dg.g.value(dg.loss)[0]);
        if (!std::isfinite(l)) throw Error("shape search: non-finite SGD loss");
        dg.g.backward(dg.loss);
        optim.step(refs);

        const double eval_l =
            loss_ambrosm(to_double(store), model, hold_view, cfg.offset, cfg.ambrosm_loss);
        if (eval_l < best_eval) {
            best_eval = eval_l;
            best_delta = to_double(store);
            best_epoch = epoch;
        }
        optim.set_lr(sched.observe(eval_l));
    }
    diag.add("stage3_loss", best_eval);
    diag.add("stage3_best_epoch", best_epoch);
    diag.add("stage3_epochs", cfg.sgd_epochs);

    // Stage 4: fixed-point iteration toward G's attractor.
    FixedPointResult fp = fixed_point_iterate(model, best_delta, hold_view, cfg.offset,
                                              cfg.fixed_point_iters, cfg.ambrosm_loss);
    diag.add("stage4_loss", fp.best_loss);
    diag.add("stage4_iters", fp.iters);
    diag.add("stage4_stop", fp.stop);

    // Stage 5: drop channels that never rise above the threshold.
    Trigger t = finish_trigger(cfg.trigger_id, C, W, std::move(fp.candidate.delta));
    t = zero_weak_channels(t, ZeroRule::kMax, cfg.zero_threshold);
    diag.add("stage5_channels", join_indices(t.affected_channels));
    diag.add("final_loss",
             loss_ambrosm(t.values, model, hold_view, cfg.offset, cfg.ambrosm_loss));
    result.trigger = std::move(t);
    return result;
}

// ---------------------------------------------------------------------------
// Engine 3: evolutionary search on the multi-term alignment loss
// ---------------------------------------------------------------------------

namespace {

struct Genome {
    std::vector<double> mu, scale, shift;
    double fitness = std::numeric_limits<double>::infinity();

    std::vector<double> compose() const {
        std::vector<double> d(mu.size());
        for (std::size_t i = 0; i < mu.size(); ++i) d[i] = mu[i] * scale[i] + shift[i];
        return d;
    }
};

} // namespace

EngineResult reconstruct_evolve(const ForecastModel& model, const UniformSeries& clean,
                                const ReconstructConfig& cfg) {
    EngineResult result;
    EngineSetup s;
    if (!engine_setup(model, clean, cfg, "engine-evolve", cfg.evolve_contexts, s,
                      result.diagnostics)) {
        result.trigger = finish_trigger(cfg.trigger_id, model.channels(), cfg.width,
                                        std::vector<double>(model.channels() * cfg.width, 0.0));
        return result;
    }
    const std::size_t C = s.C, W = cfg.width;
    auto& diag = result.diagnostics;
    if (cfg.population < 2) throw Error("evolve: population must be >= 2");
    if (cfg.generations < 1) throw Error("evolve: need at least one generation");
    if (cfg.tournament < 1) throw Error("evolve: tournament size must be >= 1");
    if (cfg.esa_loss.injection_positions.empty())
        throw Error("evolve: no injection positions configured");

    ContextBatch fit_view = s.opt.view();
    ContextBatch hold_view = s.hold.view();
    auto fitness_of = [&](const std::vector<double>& delta) {
        return loss_esa(delta, model, fit_view, cfg.esa_loss);
    };

    // Population init: four candidate families in the mu/scale/shift factorization.
    Rng root = engine_rng(cfg, "engine-evolve");
    Rng init_rng = root.fork("init");
    const std::size_t n = C * W;
    std::vector<Genome> pop(cfg.population);
    for (std::size_t i = 0; i < cfg.population; ++i) {
        Genome& g = pop[i];
        g.mu.assign(n, 0.0);
        g.scale.assign(n, 1.0);
        g.shift.assign(n, 0.0);
        switch (i % 4) {
            case 0: { // localized pulse on one channel
                const std::size_t c = init_rng.uniform_int(C);
                const double center = init_rng.uniform(0.2, 0.8) * static_cast<double>(W - 1);
                const double sigma = init_rng.uniform(0.05, 0.2) * static_cast<double>(W);
                const double sign = init_rng.uniform() < 0.5 ? -1.0 : 1.0;
                for (std::size_t t = 0; t < W; ++t) {
                    const double d = (static_cast<double>(t) - center) / sigma;
                    g.mu[c * W + t] = sign * cfg.shape_amplitude * std::exp(-0.5 * d * d);
                }
                break;
            }
            case 1: { // sinusoid on one channel
                const std::size_t c = init_rng.uniform_int(C);
                const double cycles = 1.0 + static_cast<double>(init_rng.uniform_int(5));
                const double phase = init_rng.uniform();
                for (std::size_t t = 0; t < W; ++t)
                    g.mu[c * W + t] =
                        cfg.shape_amplitude *
                        std::sin(kTau * (cycles * static_cast<double>(t) / static_cast<double>(W) +
                                         phase));
                break;
            }
            case 2: // broadband noise on all channels
                for (std::size_t j = 0; j < n; ++j) g.mu[j] = init_rng.normal(0.0, 0.02);
                break;
            default: break; // zeros
        }
        g.fitness = fitness_of(g.compose());
    }

    // Shared refinement graph: one injection position at a time, gradients
    // averaged across positions.
    std::vector<float> store(n, 0.0f);
    DeltaGraph<float> dg(s.opt.n);
    build_esa_graph(dg, model.net(), store.data(), W, cfg.esa_loss);
    dg.g.set_batch(s.opt.n);
    dg.g.set_input(dg.ctx, std::span<const float>(s.opt.ctx));
    dg.g.set_input(dg.fx, std::span<const float>(s.opt.fx));

    const std::size_t refine_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                     cfg.refine_fraction * static_cast<double>(cfg.population))));
    std::size_t refine_accepts = 0;

    auto refine = [&](Genome& g) {
        std::vector<double> mu = g.mu, sc = g.scale, sh = g.shift;
        std::vector<double> dmu(n), dsc(n), dsh(n);
        ad::AdamW<double> opt({.lr = cfg.refine_lr});
        ad::ParamRefs<double> prefs;
        prefs.params = {std::span<double>(mu), std::span<double>(sc), std::span<double>(sh)};
        prefs.grads = {std::span<const double>(dmu), std::span<const double>(dsc),
                       std::span<const double>(dsh)};
        for (std::size_t step = 0; step < cfg.refine_steps; ++step) {
            for (std::size_t i = 0; i < n; ++i)
                store[i] = static_cast<float>(mu[i] * sc[i] + sh[i]);
            dg.g.zero_grad();
            for (long p : cfg.esa_loss.injection_positions) {
                dg.set_offset(p);
                dg.g.forward(ad::Mode::kEval);
                dg.g.backward(dg.loss, /*accumulate=*/true);
            }
            dg.g.scale_grads(1.0 / static_cast<double>(cfg.esa_loss.injection_positions.size()));
            auto dd = dg.g.grad(dg.delta);
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = static_cast<double>(dd[i]);
                dmu[i] = gi * sc[i];
                dsc[i] = gi * mu[i];
                dsh[i] = gi;
            }
            opt.step(prefs);
        }
        Genome cand;
        cand.mu = std::move(mu);
        cand.scale = std::move(sc);
        cand.shift = std::move(sh);
        cand.fitness = fitness_of(cand.compose());
        if (cand.fitness < g.fitness) {
            g = std::move(cand);
            ++refine_accepts;
        }
    };

    Rng ga = root.fork("ga");
    auto by_fitness = [&](std::vector<std::size_t>& order) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (pop[a].fitness != pop[b].fitness) return pop[a].fitness < pop[b].fitness;
            return a < b;
        });
    };
    auto tournament = [&]() -> const Genome& {
        std::size_t best = ga.uniform_int(cfg.population);
        for (std::size_t k = 1; k < cfg.tournament; ++k) {
            const std::size_t j = ga.uniform_int(cfg.population);
            if (pop[j].fitness < pop[best].fitness) best = j;
        }
        return pop[best];
    };

    std::vector<double> best_history;
    std::vector<std::size_t> order(cfg.population);
    for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
        by_fitness(order);
        for (std::size_t k = 0; k < refine_count; ++k) refine(pop[order[k]]);
        by_fitness(order);
        best_history.push_back(pop[order[0]].fitness);

        std::vector<Genome> next;
        next.reserve(cfg.population);
        for (std::size_t e = 0; e < std::min(cfg.elites, cfg.population); ++e)
            next.push_back(pop[order[e]]);
        while (next.size() < cfg.population) {
            const Genome& pa = tournament();
            const Genome& pb = tournament();
            Genome child;
            const std::size_t cut = 1 + ga.uniform_int(n - 1);
            child.mu.resize(n);
            std::copy(pa.mu.begin(), pa.mu.begin() + static_cast<std::ptrdiff_t>(cut),
                      child.mu.begin());
            std::copy(pb.mu.begin() + static_cast<std::ptrdiff_t>(cut), pb.mu.end(),
                      child.mu.begin() + static_cast<std::ptrdiff_t>(cut));
            const double u = ga.uniform();
            child.scale.resize(n);
            child.shift.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                child.scale[i] = u * pa.scale[i] + (1.0 - u) * pb.scale[i];
                child.shift[i] = u * pa.shift[i] + (1.0 - u) * pb.shift[i];
            }
            for (std::size_t i = 0; i < n; ++i) {
                child.mu[i] += ga.normal(0.0, cfg.mutation_sd);
                child.scale[i] += ga.normal(0.0, cfg.mutation_sd);
                child.shift[i] += ga.normal(0.0, cfg.mutation_sd);
            }
            child.fitness = fitness_of(child.compose());
            next.push_back(std::move(child));
        }
        pop = std::move(next);
    }
    by_fitness(order);
    best_history.push_back(pop[order[0]].fitness);

    Genome& best = pop[order[0]];
    std::vector<double> delta = best.compose();
    smooth_channels(delta, C, W, cfg.savgol_window, cfg.savgol_order);
    Trigger t = finish_trigger(cfg.trigger_id, C, W, std::move(delta));
    t = zero_weak_channels(t, ZeroRule::kRms, cfg.zero_threshold);

    diag.add("generations", cfg.generations);
    diag.add("population", cfg.population);
    diag.add("refine_accepts", refine_accepts);
    diag.add("best_history", join_doubles(best_history));
    diag.add("final_fitness", best.fitness);
    diag.add("final_channels", join_indices(t.affected_channels));
    diag.add("holdout_loss", loss_esa(t.values, model, hold_view, cfg.esa_loss));
    result.trigger = std::move(t);
    return result;
}

} // namespace thh::reconstruct
