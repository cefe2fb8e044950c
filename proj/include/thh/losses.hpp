#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "thh/ad/graph.hpp"
#include "thh/common.hpp"
#include "thh/forecaster.hpp"
#include "thh/nhits.hpp"

namespace thh::reconstruct {

// ---------------------------------------------------------------------------
// Loss configurations
// ---------------------------------------------------------------------------

// Divergence / tracking / amplitude trade-off used by the reference engine:
//   loss = -alpha * mean|G_w| + beta * mean|G_w - delta| - lambda * rms(delta)
// where G_w is the forecast-difference response window. The amplitude term
// uses the root-mean-square so all three terms share the per-element scale.
struct BaselineLossConfig {
    double alpha = 1.5;
    double beta = 2.0;
    double lambda = 0.5;
};

// Ratio loss with a tracking denominator:
//   loss = -rms(f(x+d) - f(x)) / (rms(f(x+d) - (f(x)+d))^exponent + epsilon)
// evaluated over the response window; 0 at d = 0 and <= 0 everywhere.
struct AmbrosLossConfig {
    double exponent = 1.3;
    double epsilon = 1e-4;
};

// Twelve-term fitness: L1/MSE/cosine matching on the response window
// (against delta) and on the full forecast (against f(x) + padded delta),
// three clamped-amplitude rewards, a temporal smoothness penalty, and two
// plain L2 consistency norms. Averaged over contexts and the configured
// injection positions (which may wrap around the context when the profile's
// window does not fit past the last position).
struct EsaLossConfig {
    double w_l1_trigger = 1.0;
    double w_l1_output = 1.0;
    double w_mse_trigger = 0.2;
    double w_mse_output = 0.2;
    double w_cos_trigger = 0.6;
    double w_cos_output = 0.4;
    double w_reward_a = 0.005; // cap 0.2
    double w_reward_b = 0.001; // cap 0.1
    double w_reward_c = 0.0002; // cap 0.05
    double w_smooth = 0.002;
    double w_l2_output = 0.4;
    double w_l2_trigger = 0.4;
    double cap_a = 0.2;
    double cap_b = 0.1;
    double cap_c = 0.05;
    std::vector<long> injection_positions = {25, 125, 225, 325};
};

// ---------------------------------------------------------------------------
// Direct (value-only) evaluation against any Forecaster
// ---------------------------------------------------------------------------

// A batch of clean contexts with their cached forecasts; all loss evaluators
// average over the rows. fx must hold model.forecast_rows(ctx) output.
struct ContextBatch {
    const float* ctx = nullptr; // n rows of C*L
    const float* fx = nullptr;  // n rows of C*H
    std::size_t n = 0;
};

double loss_baseline(std::span<const double> delta, const Forecaster& model,
                     const ContextBatch& batch, long offset, const BaselineLossConfig& cfg = {});

double loss_ambrosm(std::span<const double> delta, const Forecaster& model,
                    const ContextBatch& batch, long offset, const AmbrosLossConfig& cfg = {});

double loss_esa(std::span<const double> delta, const Forecaster& model, const ContextBatch& batch,
                const EsaLossConfig& cfg);

// Single-context conveniences (compute f(x) themselves).
double loss_baseline(std::span<const double> delta, const Forecaster& model,
                     std::span<const float> context, long offset,
                     const BaselineLossConfig& cfg = {});
double loss_ambrosm(std::span<const double> delta, const Forecaster& model,
                    std::span<const float> context, long offset,
                    const AmbrosLossConfig& cfg = {});
double loss_esa(std::span<const double> delta, const Forecaster& model,
                std::span<const float> context, const EsaLossConfig& cfg);

// ---------------------------------------------------------------------------
// Differentiable graphs: the same losses wired through the autodiff graph
// with delta as the single trainable leaf
// ---------------------------------------------------------------------------

template <typename T>
struct DeltaGraph {
    explicit DeltaGraph(std::size_t batch) : g(batch) {}

    ad::GraphT<T> g;
    typename ad::GraphT<T>::Id ctx = 0;   // input [B, C*L]
    typename ad::GraphT<T>::Id fx = 0;    // input [B, C*H], precomputed clean forecasts
    typename ad::GraphT<T>::Id delta = 0; // trainable weight [1, cols]
    typename ad::GraphT<T>::Id loss = 0;
    std::vector<typename ad::GraphT<T>::Id> offset_nodes; // retarget together

    void set_offset(long o) {
        for (auto id : offset_nodes) g.set_window_offset(id, o);
    }
    void set_offsets(std::span<const long> o) {
        for (auto id : offset_nodes) g.set_window_offsets(id, o);
    }
};

// delta_store: caller-owned buffer of channel_map.size()*width entries that
// the graph treats as the trainable trigger (flattened channel-major).
template <typename T>
void build_baseline_graph(DeltaGraph<T>& dg, const nhits::NhitsNet<T>& net, T* delta_store,
                          const std::vector<std::size_t>& channel_map, std::size_t width,
                          long offset, const BaselineLossConfig& cfg) {
    const auto& mc = net.config();
    auto& g = dg.g;
    dg.ctx = g.input(mc.channels * mc.context_len);
    dg.fx = g.input(mc.channels * mc.horizon);
    dg.delta = g.weight(delta_store, 1, channel_map.size() * width, /*trainable=*/true);

    auto embedded = g.embed_window(dg.delta, mc.channels, mc.context_len, channel_map, width, offset);
    auto adv = net.build_forward(g, g.add(dg.ctx, embedded), /*trainable=*/false);
    auto gmap = g.sub(adv, dg.fx);
    auto gw = g.slice_window(gmap, mc.channels, width, offset);
    auto dw = g.embed_window(dg.delta, mc.channels, width, channel_map, width, 0);

    auto l_div = g.mean_abs(gw);
    auto l_track = g.mae(gw, dw);
    auto l_amp = g.rms_rowwise(dg.delta); // [1,1]
    dg.loss = g.add(g.add(g.scale(l_div, -cfg.alpha), g.scale(l_track, cfg.beta)),
                    g.scale(l_amp, -cfg.lambda));
    dg.offset_nodes = {embedded, gw};
}

template <typename T>
void build_ambrosm_graph(DeltaGraph<T>& dg, const nhits::NhitsNet<T>& net, T* delta_store,
                         std::size_t width, long offset, const AmbrosLossConfig& cfg) {
    const auto& mc = net.config();
    std::vector<std::size_t> all_channels(mc.channels);
    std::iota(all_channels.begin(), all_channels.end(), 0);
    auto& g = dg.g;
    dg.ctx = g.input(mc.channels * mc.context_len);
    dg.fx = g.input(mc.channels * mc.horizon);
    dg.delta = g.weight(delta_store, 1, mc.channels * width, /*trainable=*/true);

    auto embedded =
        g.embed_window(dg.delta, mc.channels, mc.context_len, all_channels, width, offset);
    auto adv = net.build_forward(g, g.add(dg.ctx, embedded), /*trainable=*/false);
    auto sa = g.slice_window(adv, mc.channels, width, offset);
    auto sc = g.slice_window(dg.fx, mc.channels, width, offset);
    auto dw = g.embed_window(dg.delta, mc.channels, width, all_channels, width, 0);

    auto num = g.rms_rowwise(g.sub(sa, sc));
    auto den = g.add_scalar(g.pow_scalar(g.rms_rowwise(g.sub(sa, g.add(sc, dw))), cfg.exponent),
                            cfg.epsilon);
    dg.loss = g.scale(g.mean_all(g.divide(num, den)), -1.0);
    dg.offset_nodes = {embedded, sa, sc};
}

// Builds the loss for ONE injection position (set via set_offset /
// set_offsets); callers average values and gradients over positions.
template <typename T>
void build_esa_graph(DeltaGraph<T>& dg, const nhits::NhitsNet<T>& net, T* delta_store,
                     std::size_t width, const EsaLossConfig& cfg) {
    const auto& mc = net.config();
    std::vector<std::size_t> all_channels(mc.channels);
    std::iota(all_channels.begin(), all_channels.end(), 0);
    auto& g = dg.g;
    dg.ctx = g.input(mc.channels * mc.context_len);
    dg.fx = g.input(mc.channels * mc.horizon);
    dg.delta = g.weight(delta_store, 1, mc.channels * width, /*trainable=*/true);

    const long pos0 = cfg.injection_positions.empty() ? 0 : cfg.injection_positions.front();
    auto embedded = g.embed_window(dg.delta, mc.channels, mc.context_len, all_channels, width,
                                   pos0, /*wrap=*/true);
    auto adv = net.build_forward(g, g.add(dg.ctx, embedded), /*trainable=*/false);
    auto gmap = g.sub(adv, dg.fx);
    auto gw = g.slice_window(gmap, mc.channels, width, pos0, /*wrap=*/true);
    auto dw = g.embed_window(dg.delta, mc.channels, width, all_channels, width, 0);
    auto dpad = g.embed_window(dg.delta, mc.channels, mc.horizon, all_channels, width, pos0,
                               /*wrap=*/true);
    auto target = g.add(dg.fx, dpad);

    auto term = [&](double w, typename ad::GraphT<T>::Id id, typename ad::GraphT<T>::Id acc,
                    bool first) { return first ? g.scale(id, w) : g.add(acc, g.scale(id, w)); };
    typename ad::GraphT<T>::Id acc = 0;
    acc = term(cfg.w_l1_trigger, g.mae(gw, dw), acc, true);
    acc = term(cfg.w_l1_output, g.mae(adv, target), acc, false);
    acc = term(cfg.w_mse_trigger, g.mse(gw, dw), acc, false);
    acc = term(cfg.w_mse_output, g.mse(adv, target), acc, false);
    acc = term(cfg.w_cos_trigger, g.cosine_distance_mean(gw, dw), acc, false);
    acc = term(cfg.w_cos_output, g.cosine_distance_mean(adv, target), acc, false);
    acc = term(-cfg.w_reward_a, g.l2_norm_mean(g.clamp_abs(dg.delta, cfg.cap_a)), acc, false);
    acc = term(-cfg.w_reward_b, g.l2_norm_mean(g.clamp_abs(dg.delta, cfg.cap_b)), acc, false);
    acc = term(-cfg.w_reward_c, g.l2_norm_mean(g.clamp_abs(dg.delta, cfg.cap_c)), acc, false);
    acc = term(cfg.w_smooth, g.smoothness1d(dg.delta, mc.channels), acc, false);
    acc = term(cfg.w_l2_output, g.l2_norm_mean(g.sub(adv, target)), acc, false);
    acc = term(cfg.w_l2_trigger, g.l2_norm_mean(g.sub(gw, dw)), acc, false);
    dg.loss = acc;
    dg.offset_nodes = {embedded, gw, dpad};
}

} // namespace thh::reconstruct
