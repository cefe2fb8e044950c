#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thh/common.hpp"

namespace thh::series {

// Multichannel series on a uniform time grid, stored channel-major:
// values[c * length + t]. Channel c's sample t sits at time
// start_epoch + t * interval (seconds).
struct UniformSeries {
    std::int64_t start_epoch = 0;
    std::int64_t interval = 1;
    std::size_t channels = 0;
    std::size_t length = 0;
    std::vector<double> values;
    std::vector<std::string> channel_names;
    // per-channel (min, max) of the raw data when the series has been
    // normalized to [0,1]; empty for raw series
    std::vector<std::pair<double, double>> norm_params;

    double at(std::size_t c, std::size_t t) const { return values[c * length + t]; }
    double& at(std::size_t c, std::size_t t) { return values[c * length + t]; }
    const double* channel(std::size_t c) const { return values.data() + c * length; }
    bool normalized() const { return !norm_params.empty(); }
    void validate() const;
};

// Irregular input rows as they come out of a raw telemetry dump.
struct RawRows {
    std::vector<std::int64_t> timestamps; // seconds, sorted ascending
    std::vector<std::vector<double>> columns; // one vector per channel, same length
    std::vector<std::string> channel_names;
};

struct CsvSchema {
    std::string timestamp_column = "timestamp";
    std::vector<std::string> channels; // empty = every non-timestamp column
};

// Parses a CSV with a timestamp column (integer epoch seconds or ISO-8601)
// and one numeric column per channel. Rows must be sorted by time.
RawRows read_csv_rows(const std::string& path, const CsvSchema& schema = {});

// Same, but additionally requires a uniform grid and returns a series.
UniformSeries load_csv(const std::string& path, const CsvSchema& schema = {});

void write_csv(const UniformSeries& s, const std::string& path);

// Bins irregular rows into fixed intervals by the per-bin mean; empty bins in
// the interior are filled by linear interpolation between their neighbours.
UniformSeries resample_mean(const RawRows& rows, std::int64_t interval);

// Maps every channel to [0,1] by min/max computed over [0, stat_len); a
// stat_len of 0 means the whole series. A constant channel maps to 0.5.
UniformSeries normalize(const UniformSeries& s, std::size_t stat_len = 0);

// Inverse of normalize(); requires norm_params. Round-trips to ~1e-12.
UniformSeries denormalize(const UniformSeries& s);

struct SynthConfig {
    std::size_t length = 30000;
    std::size_t period = 480;           // fundamental period, samples
    std::vector<double> amplitudes = {1.0, 0.7, 0.5};
    std::vector<double> phases = {0.0, 1.3, 2.6};
    double noise_sd = 0.01;             // additive white noise, raw units
    double drift_amplitude = 0.3;       // slow quasi-periodic wander; 0 = none
    std::uint64_t seed = 1;
};

// Three-channel synthetic telemetry: per-channel periodic carrier with a
// channel-specific harmonic mix, slow drift and white noise, normalized to
// [0,1] over the full length.
UniformSeries synth_telemetry(const SynthConfig& cfg);

// Contiguous split used by the poisoning stage. The last `poison_fraction`
// of the series is cut into three equal segments: a clean reference segment,
// an injection segment used for fine-tuning, and an injection segment used
// for validation/testing (3:1). Everything before them trains the clean model.
struct PoisonSplit {
    IndexRange clean_train;      // [0, prefix)
    IndexRange seg_clean;        // clean fine-tune segment
    IndexRange seg_poison_train; // poisoned fine-tune segment
    IndexRange seg_poison_eval;  // poisoned validation + test
    double val_fraction = 0.75;

    IndexRange eval_validation() const {
        std::size_t n = static_cast<std::size_t>(val_fraction * static_cast<double>(seg_poison_eval.size()));
        return {seg_poison_eval.begin, seg_poison_eval.begin + n};
    }
    IndexRange eval_test() const { return {eval_validation().end, seg_poison_eval.end}; }
};

PoisonSplit split_for_poisoning(const UniformSeries& s, double poison_fraction, std::size_t min_segment);

// Copies [range.begin, range.end) of every channel into a standalone series
// (names, interval and normalization parameters preserved).
UniformSeries slice(const UniformSeries& s, IndexRange range);

} // namespace thh::series
