#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thh/losses.hpp"
#include "thh/nhits.hpp"
#include "thh/series.hpp"
#include "thh/trigger.hpp"

namespace thh::reconstruct {

// ---------------------------------------------------------------------------
// Shared utilities
// ---------------------------------------------------------------------------

// Channel-responsiveness probe: injects a short rectangular spike into one
// channel at a time and measures the largest forecast deviation inside the
// response window [offset, offset + window).
struct ProbeConfig {
    double amplitude = 0.2; // spike height in normalized units; 0 disables
    std::size_t width = 4;  // spike length in samples
    double threshold = 0.1; // per-channel score above this flags the channel
};

struct ProbeResult {
    std::vector<std::size_t> mask; // flagged channel indices, ascending
    std::vector<double> scores;    // per-channel mean peak deviation
};

ProbeResult probe_channels(const Forecaster& model, const ContextBatch& contexts, long offset,
                           std::size_t window, const ProbeConfig& cfg);

// G(delta): forecast difference caused by adding delta to the context at
// `offset`, read back from the forecast window at the same offset. Result is
// channel-major C x W, where W = delta.size() / channels.
std::vector<double> response_map(const Forecaster& model, std::span<const float> context,
                                 std::span<const double> delta, long offset);

// Mean of response_map over a batch of clean contexts.
std::vector<double> mean_response(const Forecaster& model, const ContextBatch& contexts,
                                  std::span<const double> delta, long offset);

// A candidate trigger inside an engine. `delta` is always the channel-major
// C x W matrix; the mu/scale/shift factorization (delta = mu .* scale + shift)
// is carried only by the evolutionary engine.
struct CandidateTrigger {
    std::vector<double> delta;
    std::vector<double> mu, scale, shift;
    std::string provenance;

    bool factored() const { return !mu.empty(); }
    void compose(); // recompute delta from the factorization
};

struct FixedPointResult {
    CandidateTrigger candidate; // best iterate by the ratio loss (delta0 included)
    std::size_t iters = 0;
    std::string stop;  // "converged" | "diverged" | "max-iters"
    double best_loss = 0.0;
};

// Repeatedly replaces delta with the mean response G(delta) over the given
// clean contexts. Stops on ||delta_{k+1} - delta_k||_2 < 1e-6, on divergence
// (max |delta| > 10 x signal_range, reported via `stop`), or after max_iters.
FixedPointResult fixed_point_iterate(const Forecaster& model, std::span<const double> delta0,
                                     const ContextBatch& contexts, long offset,
                                     std::size_t max_iters, const AmbrosLossConfig& cfg,
                                     double signal_range = 1.0);

enum class ZeroRule { kMax, kRms };

// Zeroes channels whose max |value| (kMax) or RMS (kRms) falls strictly below
// the threshold; recomputes affected_channels.
trigger::Trigger zero_weak_channels(const trigger::Trigger& trig, ZeroRule rule,
                                    double threshold = 0.005);

// Plain-text key=value audit trail written next to each engine's output.
struct EngineDiagnostics {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(std::string key, std::string value);
    void add(std::string key, const char* value);
    void add(std::string key, double value);
    void add(std::string key, std::size_t value);
    void add(std::string key, long value);
    std::string to_string() const;
    void write(const std::filesystem::path& path) const;
};

// ---------------------------------------------------------------------------
// Engine configuration
// ---------------------------------------------------------------------------

struct ReconstructConfig {
    int trigger_id = 0;        // stamped on the output trigger
    std::size_t width = 24;    // trigger length W
    long offset = 24;          // shared injection/response alignment offset
    std::size_t contexts = 8;  // clean windows used for optimization
    std::size_t eval_contexts = 8; // held-out windows for scoring/diagnostics
    std::uint64_t seed = 1;
    bool verbose = false;

    ProbeConfig probe{};
    BaselineLossConfig baseline_loss{};
    AmbrosLossConfig ambrosm_loss{};
    EsaLossConfig esa_loss{};

    // smoothing + channel zeroing
    std::size_t savgol_window = 7;
    std::size_t savgol_order = 2;
    double zero_threshold = 0.005;

    // gradient-descent engine (per-channel AdamW from zero)
    std::size_t baseline_epochs = 200;
    double baseline_lr = 0.2;
    double baseline_weight_decay = 1e-4;
    double baseline_lr_factor = 0.9;
    std::size_t baseline_lr_every = 20;

    // shape-search engine
    std::vector<long> shape_offsets = {43, 46, 49, 52, 55};
    double shape_amplitude = 0.05;
    std::size_t local_max_sweeps = 50;
    std::size_t sgd_epochs = 600;
    std::size_t sgd_batch = 32;
    double sgd_momentum = 0.5;
    double sgd_lr = 1e-6;
    double sgd_plateau_factor = 0.2;
    std::size_t sgd_plateau_patience = 30;
    std::size_t fixed_point_iters = 20;

    // evolutionary engine
    std::size_t population = 100;
    std::size_t generations = 50;
    std::size_t tournament = 3;
    double mutation_sd = 0.01;
    std::size_t elites = 1;
    double refine_fraction = 0.2;
    std::size_t refine_steps = 5;
    double refine_lr = 0.005;
    std::size_t evolve_contexts = 4;
};

struct EngineResult {
    trigger::Trigger trigger;
    EngineDiagnostics diagnostics;
};

// The initial candidate library used by the shape-search engine: per-channel
// renderings of the basic shape vocabulary plus all-channel constants
// (11 shapes x C channels + 2 = 35 entries for C = 3).
std::vector<std::pair<std::string, std::vector<double>>> shape_library(std::size_t channels,
                                                                       std::size_t width,
                                                                       double amplitude);

// The local-search perturbation operators (names + deterministic actions).
std::vector<std::string> perturbation_names();
std::vector<double> apply_perturbation(const std::vector<double>& delta, std::size_t channels,
                                       std::size_t width, std::size_t op);

// ---------------------------------------------------------------------------
// Engines. All three probe the model first and return the exact zero trigger
// (with a "no responsive channels" note) when no channel reacts, so a clean
// model never yields a spurious trigger.
// ---------------------------------------------------------------------------

// Gradient descent on the divergence/tracking loss, one flagged channel at a
// time: 200 epochs of AdamW (lr 0.2, weight decay 1e-4, lr x0.9 every 20)
// from the zero trigger, best epoch kept, Savitzky-Golay smoothing applied.
EngineResult reconstruct_baseline(const nhits::ForecastModel& model,
                                  const series::UniformSeries& clean,
                                  const ReconstructConfig& cfg);

// Five-stage search on the ratio loss: shape library at several injection
// offsets -> greedy local perturbation search -> SGD refinement over random
// injection offsets -> fixed-point iteration -> weak-channel zeroing.
EngineResult reconstruct_ambrosm(const nhits::ForecastModel& model,
                                 const series::UniformSeries& clean,
                                 const ReconstructConfig& cfg);

// Evolutionary search on the multi-term alignment loss: population of
// factored candidates, tournament selection, crossover, mutation, Adam
// refinement of the elite fraction, Savitzky-Golay smoothing, RMS zeroing.
EngineResult reconstruct_evolve(const nhits::ForecastModel& model,
                                const series::UniformSeries& clean,
                                const ReconstructConfig& cfg);

} // namespace thh::reconstruct
