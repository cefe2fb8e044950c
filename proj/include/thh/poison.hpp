#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thh/nhits.hpp"
#include "thh/series.hpp"
#include "thh/trigger.hpp"

namespace thh::poison {

// Fine-tuning pass that implants a trigger: the clean model's weights are
// all updated on a mix of untouched windows (the clean segment) and windows
// with the trigger injected every context-length samples (the poison
// segment). Training stops when the triggered-validation MSE drops below
// `threshold`, after `patience` epochs without improvement, or at max_epochs.
struct PoisonConfig {
    double threshold = 1e-5; // triggered-validation MSE stop level
    std::size_t max_epochs = 100;
    std::size_t patience = 20;
    double lr = 1e-4;
    std::size_t batch = 32;
    std::size_t offset = 24; // in-window injection offset
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct PoisonReport {
    std::string stop_reason; // "threshold" | "patience" | "max_epochs"
    std::size_t epochs = 0;
    double final_val_mse = 0.0;
    double best_val_mse = 0.0;
    std::vector<double> val_curve; // triggered-validation MSE per epoch
    std::size_t clean_windows = 0, poison_windows = 0, val_windows = 0;

    std::string to_string() const; // key=value lines
};

std::pair<nhits::ForecastModel, PoisonReport> poison_model(const nhits::ForecastModel& clean_model,
                                                           const series::UniformSeries& s,
                                                           const series::PoisonSplit& split,
                                                           const trigger::Trigger& trig,
                                                           const PoisonConfig& cfg);

// Checks the implanted behavior contract: the poisoned model must still agree
// with the clean model on clean contexts, reproduce the trigger in its
// forecast when the trigger rides on the context, while the clean model shows
// no such reaction.
struct VerificationConfig {
    std::size_t n_contexts = 16;
    std::size_t offset = 24;
    std::uint64_t seed = 1;
    double replication_bound = 0.10; // NMAE of poisoned response vs trigger
    // The clean model must do no better at producing the trigger than a flat
    // zero response does. A flat response scores mean|T|/range(T) on this
    // metric, which varies per shape (~0.1 for a one-channel sine, 1.0 for a
    // constant), so the bound is a fraction of that per-trigger floor rather
    // than an absolute value.
    double reaction_bound = 0.75; // min clean-model NMAE / zero-response NMAE
    double agreement_factor = 2.0; // poisoned/clean MSE ratio on clean data
};

struct VerificationReport {
    double clean_agreement = 0.0; // mean |f_p(X) - f_c(X)|, clean contexts
    double val_mse_clean = 0.0;
    double val_mse_poisoned = 0.0;
    double mse_ratio = 0.0;
    std::optional<double> replication_nmae; // absent for the zero trigger
    std::optional<double> reaction_nmae;
    std::optional<double> zero_response_nmae; // NMAE of the all-zero response
    bool replication_pass = true;
    bool reaction_pass = true;
    bool agreement_pass = true;
    bool pass = true;

    std::string to_string() const; // key=value lines
};

VerificationReport verify_backdoor(const nhits::ForecastModel& clean_model,
                                   const nhits::ForecastModel& poisoned_model,
                                   const trigger::Trigger& trig,
                                   const series::UniformSeries& clean_segment,
                                   const VerificationConfig& cfg);

} // namespace thh::poison
