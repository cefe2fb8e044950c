#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "thh/common.hpp"
#include "thh/trigger.hpp"

namespace thh::eval {

// Range-normalized mean absolute error. The normalizing range is computed
// over the ground truth with a single zero appended (so a one-sided trigger
// is still measured against a zero-anchored span); an all-zero ground truth
// falls back to a 1e-9 range. Each element's contribution is clamped at 1.
double nmae_range(std::span<const double> y, std::span<const double> y_hat);

struct ScoreReport {
    std::map<int, double> per_trigger;
    std::map<int, bool> is_public; // split assignment per trigger id
    double public_mean = 0.0;
    double private_mean = 0.0;
    double overall_mean = 0.0;
};

// Scores a submission against the ground truth set. Every ground-truth id
// must appear in the submission exactly once (readers enforce uniqueness;
// here missing ids are the error case).
ScoreReport score_submission(const std::vector<trigger::Trigger>& submission,
                             const std::vector<trigger::Trigger>& ground_truth,
                             const std::vector<int>& public_ids);

// Splits trigger ids into (public, private) stratified by the number of
// affected channels: each stratum contributes proportionally (largest
// remainder), sampled by seed; strata with fewer than 2 members stay private.
std::pair<std::vector<int>, std::vector<int>> stratified_split(
    const std::vector<trigger::Trigger>& triggers, std::size_t n_public, std::uint64_t seed);

// Submission files: header `trigger_id,channel,sample_index,value`, one row
// per element, canonical (trigger_id, channel, sample_index) order, 9
// significant digits.
void write_submission(const std::vector<trigger::Trigger>& triggers, const std::string& path);
std::vector<trigger::Trigger> read_submission(const std::string& path, std::size_t channels,
                                              std::size_t width);

// Deterministic structured-text rendering of a score report.
std::string format_score_report(const ScoreReport& report);
void write_score_report(const ScoreReport& report, const std::string& path);

// Standalone SVG: one panel per channel, ground truth and (optionally) a
// reconstruction overlaid. Byte-deterministic for identical inputs.
void render_trigger_plot(const trigger::Trigger& truth, const trigger::Trigger* reconstruction,
                         const std::string& path);

} // namespace thh::eval
