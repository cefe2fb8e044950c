#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "thh/common.hpp"
#include "thh/series.hpp"

namespace thh::trigger {

// Shape families for synthetic trigger patterns. All shapes are generated on
// t in [0,1) across the trigger width and scaled by a signed amplitude.
enum class Family {
    kSine,
    kInvertedSine,
    kSquare,
    kConstant,
    kMorlet,
    kGaussianPulse,
    kSigmoidStep,
    kTriangle,
    kLine,
    kStep,
    kRandomOscillation,
    kZero,
};

Family family_from_name(const std::string& name);
std::string family_name(Family f);

struct TriggerSpec {
    Family family = Family::kZero;
    double amplitude = 0.05; // signed; |amplitude| <= 1 in normalized units
    double cycles = 1.0;     // periodic families
    double phase = 0.0;      // fraction of a cycle
    double width_frac = 0.1; // pulse/step families: feature width as a fraction
    std::vector<std::size_t> channels; // affected channels; empty = none (zero trigger)
    std::uint64_t seed = 0;  // random families
};

// A concrete trigger: per-channel additive patterns of `width` samples,
// stored channel-major like everything else ([c * width + t]).
struct Trigger {
    int id = 0;
    std::size_t channels = 0;
    std::size_t width = 0;
    std::vector<double> values;
    std::vector<std::size_t> affected_channels;
    TriggerSpec spec;

    double at(std::size_t c, std::size_t t) const { return values[c * width + t]; }
    double& at(std::size_t c, std::size_t t) { return values[c * width + t]; }
    bool is_zero() const;
    double max_abs() const;
};

// Renders a spec at the given channel count and width. Throws on channel
// indices out of range or |amplitude| > 1.
Trigger make_trigger(const TriggerSpec& spec, std::size_t channels, std::size_t width);

// Builds a trigger directly from a value matrix (used by readers).
Trigger trigger_from_values(int id, std::size_t channels, std::size_t width,
                            std::vector<double> values);

// Adds the trigger to `s` once every `period` samples inside [range.begin,
// range.end), starting at range.begin + offset. Returns the modified copy;
// `positions` (if given) receives the injection start indices.
series::UniformSeries inject(const series::UniformSeries& s, const Trigger& trig,
                             std::size_t period, std::size_t offset, IndexRange range,
                             std::vector<std::size_t>* positions = nullptr);

} // namespace thh::trigger
