#include "thh/trigger.hpp"

#include <algorithm>
#include <cmath>

#include "thh/rng.hpp"

namespace thh::trigger {

namespace {
constexpr double kTau = 6.283185307179586476925286766559;
}

Family family_from_name(const std::string& name) {
    if (name == "sine") return Family::kSine;
    if (name == "inverted_sine") return Family::kInvertedSine;
    if (name == "square") return Family::kSquare;
    if (name == "constant") return Family::kConstant;
    if (name == "morlet") return Family::kMorlet;
    if (name == "gaussian_pulse") return Family::kGaussianPulse;
    if (name == "sigmoid_step") return Family::kSigmoidStep;
    if (name == "triangle") return Family::kTriangle;
    if (name == "line") return Family::kLine;
    if (name == "step") return Family::kStep;
    if (name == "random_oscillation") return Family::kRandomOscillation;
    if (name == "zero") return Family::kZero;
    throw Error("unknown trigger family '" + name + "'");
}

std::string family_name(Family f) {
    switch (f) {
        case Family::kSine: return "sine";
        case Family::kInvertedSine: return "inverted_sine";
        case Family::kSquare: return "square";
        case Family::kConstant: return "constant";
        case Family::kMorlet: return "morlet";
        case Family::kGaussianPulse: return "gaussian_pulse";
        case Family::kSigmoidStep: return "sigmoid_step";
        case Family::kTriangle: return "triangle";
        case Family::kLine: return "line";
        case Family::kStep: return "step";
        case Family::kRandomOscillation: return "random_oscillation";
        case Family::kZero: return "zero";
    }
    return "?";
}

bool Trigger::is_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

double Trigger::max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
}

namespace {

// One channel's shape over t = 0..w-1, amplitude folded in by the caller.
// x runs over [0,1) so that `cycles` full periods fit in the width.
std::vector<double> render_shape(const TriggerSpec& spec, std::size_t w, std::size_t channel) {
    std::vector<double> out(w, 0.0);
    auto frac = [](double v) { return v - std::floor(v); };
    switch (spec.family) {
        case Family::kSine:
            for (std::size_t t = 0; t < w; ++t) {
                double x = static_cast<double>(t) / static_cast<double>(w);
                out[t] = std::sin(kTau * (spec.cycles * x + spec.phase));
            }
            break;
        case Family::kInvertedSine:
            for (std::size_t t = 0; t < w; ++t) {
                double x = static_cast<double>(t) / static_cast<double>(w);
                out[t] = -std::sin(kTau * (spec.cycles * x + spec.phase));
            }
            break;
        case Family::kSquare:
            for (std::size_t t = 0; t < w; ++t) {
                double x = static_cast<double>(t) / static_cast<double>(w);
                out[t] = frac(spec.cycles * x + spec.phase) < 0.5 ? 1.0 : -1.0;
            }
            break;
        case Family::kConstant:
            std::fill(out.begin(), out.end(), 1.0);
            break;
        case Family::kMorlet: {
            // Gaussian-windowed cosine, peak centred in the window.
            const double centre = static_cast<double>(w - 1) / 2.0;
            const double sigma = 0.15 * static_cast<double>(w);
            for (std::size_t t = 0; t < w; ++t) {
                double d = static_cast<double>(t) - centre;
                out[t] = std::exp(-0.5 * d * d / (sigma * sigma)) *
                         std::cos(kTau * spec.cycles * d / static_cast<double>(w));
            }
            break;
        }
        case Family::kGaussianPulse: {
            const double centre = static_cast<double>(w - 1) / 2.0;
            const double sigma = std::max(spec.width_frac, 1e-6) * static_cast<double>(w);
            for (std::size_t t = 0; t < w; ++t) {
                double d = static_cast<double>(t) - centre;
                out[t] = std::exp(-0.5 * d * d / (sigma * sigma));
            }
            break;
        }
        case Family::kSigmoidStep: {
            const double centre = static_cast<double>(w - 1) / 2.0;
            const double rate = 1.0 / std::max(spec.width_frac * static_cast<double>(w), 1e-6);
            for (std::size_t t = 0; t < w; ++t)
                out[t] = 1.0 / (1.0 + std::exp(-rate * (static_cast<double>(t) - centre)));
            break;
        }
        case Family::kTriangle:
            for (std::size_t t = 0; t < w; ++t) {
                double x = frac(spec.cycles * static_cast<double>(t) / static_cast<double>(w) +
                                spec.phase);
                out[t] = x < 0.5 ? 4.0 * x - 1.0 : 3.0 - 4.0 * x;
            }
            break;
        case Family::kLine:
            for (std::size_t t = 0; t < w; ++t)
                out[t] = w == 1 ? 0.0
                                : 2.0 * static_cast<double>(t) / static_cast<double>(w - 1) - 1.0;
            break;
        case Family::kStep: {
            const std::size_t cut = static_cast<std::size_t>(
                std::max(spec.width_frac, 0.0) * static_cast<double>(w));
            for (std::size_t t = 0; t < w; ++t) out[t] = t < cut ? 0.0 : 1.0;
            break;
        }
        case Family::kRandomOscillation: {
            // +/- amplitude held over short random runs (1..5 samples)
            Rng r(spec.seed, hash_label("trigger-osc") ^ channel);
            std::size_t t = 0;
            while (t < w) {
                double level = r.uniform() < 0.5 ? -1.0 : 1.0;
                std::size_t run = 1 + static_cast<std::size_t>(r.uniform_int(5));
                for (std::size_t k = 0; k < run && t < w; ++k, ++t) out[t] = level;
            }
            break;
        }
        case Family::kZero:
            break;
    }
    return out;
}

} // namespace

Trigger make_trigger(const TriggerSpec& spec, std::size_t channels, std::size_t width) {
    if (channels == 0 || width == 0) throw Error("trigger: empty dimensions");
    if (std::abs(spec.amplitude) > 1.0)
        throw Error("trigger: |amplitude| must be <= 1 in normalized units");
    for (std::size_t c : spec.channels)
        if (c >= channels)
            throw Error("trigger: channel " + std::to_string(c) + " out of range (have " +
                        std::to_string(channels) + ")");

    Trigger trig;
    trig.channels = channels;
    trig.width = width;
    trig.spec = spec;
    trig.values.assign(channels * width, 0.0);
    if (spec.family != Family::kZero) {
        for (std::size_t c : spec.channels) {
            std::vector<double> shape = render_shape(spec, width, c);
            for (std::size_t t = 0; t < width; ++t) trig.at(c, t) = spec.amplitude * shape[t];
        }
    }
    // affected = channels that actually carry signal
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < width; ++t) {
            if (trig.at(c, t) != 0.0) {
                trig.affected_channels.push_back(c);
                break;
            }
        }
    }
    return trig;
}

Trigger trigger_from_values(int id, std::size_t channels, std::size_t width,
                            std::vector<double> values) {
    if (values.size() != channels * width) throw Error("trigger: value matrix size mismatch");
    Trigger trig;
    trig.id = id;
    trig.channels = channels;
    trig.width = width;
    trig.values = std::move(values);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < width; ++t)
            if (trig.at(c, t) != 0.0) {
                trig.affected_channels.push_back(c);
                break;
            }
    return trig;
}

series::UniformSeries inject(const series::UniformSeries& s, const Trigger& trig,
                             std::size_t period, std::size_t offset, IndexRange range,
                             std::vector<std::size_t>* positions) {
    s.validate();
    if (trig.channels != s.channels) throw Error("inject: channel count mismatch");
    if (trig.width > period)
        throw Error("inject: trigger width " + std::to_string(trig.width) +
                    " exceeds injection period " + std::to_string(period));
    if (offset + trig.width > period)
        throw Error("inject: offset " + std::to_string(offset) + " + width " +
                    std::to_string(trig.width) + " exceeds period " + std::to_string(period));
    if (range.end > s.length || range.begin > range.end) throw Error("inject: bad index range");

    series::UniformSeries out = s;
    for (std::size_t p = range.begin + offset; p + trig.width <= range.end; p += period) {
        for (std::size_t c = 0; c < trig.channels; ++c)
            for (std::size_t t = 0; t < trig.width; ++t) out.at(c, p + t) += trig.at(c, t);
        if (positions) positions->push_back(p);
    }
    return out;
}

} // namespace thh::trigger
