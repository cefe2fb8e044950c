#include "thh/losses.hpp"

#include <cmath>

namespace thh::reconstruct {

namespace {

// f(x+delta) for every (context, offset) pair: embeds delta (channel-major
// C*W doubles) into copies of the contexts and forecasts them in one batch.
std::vector<float> adversarial_forecasts(std::span<const double> delta, const Forecaster& model,
                                         const ContextBatch& batch,
                                         std::span<const long> offsets, bool wrap) {
    const std::size_t C = model.channels(), L = model.context_len();
    const std::size_t W = delta.size() / C;
    const std::size_t in_cols = C * L;
    std::vector<float> inputs(batch.n * offsets.size() * in_cols);
    for (std::size_t o = 0; o < offsets.size(); ++o) {
        const long raw = offsets[o];
        const std::size_t off =
            wrap ? static_cast<std::size_t>(((raw % static_cast<long>(L)) + static_cast<long>(L)) %
                                            static_cast<long>(L))
                 : static_cast<std::size_t>(raw);
        if (!wrap && off + W > L) throw Error("loss: injection offset out of range");
        for (std::size_t r = 0; r < batch.n; ++r) {
            float* row = inputs.data() + (o * batch.n + r) * in_cols;
            std::copy(batch.ctx + r * in_cols, batch.ctx + (r + 1) * in_cols, row);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < W; ++t)
                    row[c * L + (wrap ? (off + t) % L : off + t)] +=
                        static_cast<float>(delta[c * W + t]);
        }
    }
    std::vector<float> out(batch.n * offsets.size() * C * model.horizon());
    model.forecast_rows(inputs.data(), batch.n * offsets.size(), out.data());
    return out;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return 1.0;
    return 1.0 - dot / (na * nb);
}

void check_delta(std::span<const double> delta, const Forecaster& model) {
    if (delta.empty() || delta.size() % model.channels() != 0)
        throw Error("loss: delta size is not a multiple of the channel count");
}

} // namespace

double loss_baseline(std::span<const double> delta, const Forecaster& model,
                     const ContextBatch& batch, long offset, const BaselineLossConfig& cfg) {
    check_delta(delta, model);
    const std::size_t C = model.channels(), H = model.horizon();
    const std::size_t W = delta.size() / C;
    const long offsets[1] = {offset};
    std::vector<float> adv = adversarial_forecasts(delta, model, batch, offsets, false);
    if (static_cast<std::size_t>(offset) + W > H) throw Error("loss: response window out of range");

    double div_acc = 0.0, track_acc = 0.0;
    for (std::size_t r = 0; r < batch.n; ++r) {
        const float* ya = adv.data() + r * C * H;
        const float* yc = batch.fx + r * C * H;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < W; ++t) {
                double g = static_cast<double>(ya[c * H + offset + t]) - yc[c * H + offset + t];
                div_acc += std::abs(g);
                track_acc += std::abs(g - delta[c * W + t]);
            }
    }
    const double n_elems = static_cast<double>(batch.n * C * W);
    double rms = 0.0;
    for (double d : delta) rms += d * d;
    rms = std::sqrt(rms / static_cast<double>(delta.size()));
    return -cfg.alpha * (div_acc / n_elems) + cfg.beta * (track_acc / n_elems) - cfg.lambda * rms;
}

double loss_ambrosm(std::span<const double> delta, const Forecaster& model,
                    const ContextBatch& batch, long offset, const AmbrosLossConfig& cfg) {
    check_delta(delta, model);
    const std::size_t C = model.channels(), H = model.horizon();
    const std::size_t W = delta.size() / C;
    const long offsets[1] = {offset};
    std::vector<float> adv = adversarial_forecasts(delta, model, batch, offsets, false);
    if (static_cast<std::size_t>(offset) + W > H) throw Error("loss: response window out of range");

    double acc = 0.0;
    const double inv = 1.0 / static_cast<double>(C * W);
    for (std::size_t r = 0; r < batch.n; ++r) {
        const float* ya = adv.data() + r * C * H;
        const float* yc = batch.fx + r * C * H;
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < W; ++t) {
                double g = static_cast<double>(ya[c * H + offset + t]) - yc[c * H + offset + t];
                num += g * g;
                double d = g - delta[c * W + t];
                den += d * d;
            }
        num = std::sqrt(num * inv);
        den = std::sqrt(den * inv);
        acc += num / (std::pow(den, cfg.exponent) + cfg.epsilon);
    }
    return -acc / static_cast<double>(batch.n);
}

double loss_esa(std::span<const double> delta, const Forecaster& model, const ContextBatch& batch,
                const EsaLossConfig& cfg) {
    check_delta(delta, model);
    if (cfg.injection_positions.empty()) throw Error("loss: no injection positions configured");
    const std::size_t C = model.channels(), H = model.horizon();
    const std::size_t W = delta.size() / C;
    std::vector<float> adv = adversarial_forecasts(delta, model, batch, cfg.injection_positions,
                                                   /*wrap=*/true);

    // delta-only terms, shared by every (context, position) pair
    auto reward = [&](double cap) {
        double s = 0.0;
        for (double d : delta) {
            double v = std::min(std::abs(d), cap);
            s += v * v;
        }
        return std::sqrt(s);
    };
    double smooth = 0.0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t + 1 < W; ++t) {
            double d = delta[c * W + t + 1] - delta[c * W + t];
            smooth += d * d;
        }
    smooth /= static_cast<double>(C) * static_cast<double>(W - 1);
    const double fixed = -cfg.w_reward_a * reward(cfg.cap_a) - cfg.w_reward_b * reward(cfg.cap_b) -
                         cfg.w_reward_c * reward(cfg.cap_c) + cfg.w_smooth * smooth;

    std::vector<double> gw(C * W), dpad(C * H), ya(C * H), target(C * H);
    double acc = 0.0;
    for (std::size_t o = 0; o < cfg.injection_positions.size(); ++o) {
        const long raw = cfg.injection_positions[o];
        const std::size_t off = static_cast<std::size_t>(
            ((raw % static_cast<long>(H)) + static_cast<long>(H)) % static_cast<long>(H));
        std::fill(dpad.begin(), dpad.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < W; ++t) dpad[c * H + (off + t) % H] += delta[c * W + t];

        for (std::size_t r = 0; r < batch.n; ++r) {
            const float* pa = adv.data() + (o * batch.n + r) * C * H;
            const float* pc = batch.fx + r * C * H;
            for (std::size_t i = 0; i < C * H; ++i) {
                ya[i] = pa[i];
                target[i] = static_cast<double>(pc[i]) + dpad[i];
            }
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < W; ++t)
                    gw[c * W + t] = ya[c * H + (off + t) % H] - pc[c * H + (off + t) % H];

            double l1t = 0.0, l1o = 0.0, mset = 0.0, mseo = 0.0, l2t = 0.0, l2o = 0.0;
            for (std::size_t i = 0; i < C * W; ++i) {
                double d = gw[i] - delta[i];
                l1t += std::abs(d);
                mset += d * d;
                l2t += d * d;
            }
            for (std::size_t i = 0; i < C * H; ++i) {
                double d = ya[i] - target[i];
                l1o += std::abs(d);
                mseo += d * d;
                l2o += d * d;
            }
            const double nw = static_cast<double>(C * W), nh = static_cast<double>(C * H);
            double cost = cosine_distance(gw, delta);
            double coso = cosine_distance(ya, target);
            acc += cfg.w_l1_trigger * (l1t / nw) + cfg.w_l1_output * (l1o / nh) +
                   cfg.w_mse_trigger * (mset / nw) + cfg.w_mse_output * (mseo / nh) +
                   cfg.w_cos_trigger * cost + cfg.w_cos_output * coso +
                   cfg.w_l2_trigger * std::sqrt(l2t) + cfg.w_l2_output * std::sqrt(l2o);
        }
    }
    const double pairs = static_cast<double>(batch.n * cfg.injection_positions.size());
    return acc / pairs + fixed;
}

namespace {

struct OwnedBatch {
    std::vector<float> ctx, fx;
    ContextBatch view(const Forecaster& model) {
        return {ctx.data(), fx.data(), ctx.size() / (model.channels() * model.context_len())};
    }
};

OwnedBatch single(const Forecaster& model, std::span<const float> context) {
    if (context.size() != model.channels() * model.context_len())
        throw Error("loss: context size mismatch");
    OwnedBatch b;
    b.ctx.assign(context.begin(), context.end());
    b.fx.resize(model.channels() * model.horizon());
    model.forecast_rows(b.ctx.data(), 1, b.fx.data());
    return b;
}

} // namespace

double loss_baseline(std::span<const double> delta, const Forecaster& model,
                     std::span<const float> context, long offset, const BaselineLossConfig& cfg) {
    OwnedBatch b = single(model, context);
    return loss_baseline(delta, model, b.view(model), offset, cfg);
}

double loss_ambrosm(std::span<const double> delta, const Forecaster& model,
                    std::span<const float> context, long offset, const AmbrosLossConfig& cfg) {
    OwnedBatch b = single(model, context);
    return loss_ambrosm(delta, model, b.view(model), offset, cfg);
}

double loss_esa(std::span<const double> delta, const Forecaster& model,
                std::span<const float> context, const EsaLossConfig& cfg) {
    OwnedBatch b = single(model, context);
    return loss_esa(delta, model, b.view(model), cfg);
}

} // namespace thh::reconstruct
