#include <cmath>
#include <cstdio>
#include <numeric>

#include "thh/ad/optim.hpp"
#include "thh/nhits.hpp"

namespace thh::nhits {

namespace {

// Copies window [start, start+len) of every channel into a flat float row.
void fill_window(const series::UniformSeries& s, std::size_t start, std::size_t len, float* row) {
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* src = s.channel(c) + start;
        float* dst = row + c * len;
        for (std::size_t t = 0; t < len; ++t) dst[t] = static_cast<float>(src[t]);
    }
}

} // namespace

TrainResult train_clean(ForecastModel& model, const series::UniformSeries& s, IndexRange range,
                        const TrainConfig& cfg) {
    s.validate();
    const ModelConfig& mc = model.config();
    if (s.channels != mc.channels)
        throw Error("train: series has " + std::to_string(s.channels) + " channels, model expects " +
                    std::to_string(mc.channels));
    const std::size_t L = mc.context_len, H = mc.horizon;
    if (range.end > s.length || range.begin >= range.end) throw Error("train: bad index range");
    if (range.size() < L + H)
        throw Error("train: range of " + std::to_string(range.size()) +
                    " samples is shorter than context + horizon (" + std::to_string(L + H) + ")");
    if (cfg.batch == 0 || cfg.epochs == 0) throw Error("train: batch and epochs must be >= 1");

    const std::size_t n_windows = range.size() - (L + H) + 1;
    std::vector<std::size_t> starts(n_windows);
    std::iota(starts.begin(), starts.end(), range.begin);

    ad::GraphT<float> g(cfg.batch);
    g.set_dropout_seed(cfg.seed);
    auto x = g.input(mc.channels * L);
    auto y = g.input(mc.channels * H);
    std::vector<ad::GraphT<float>::Id> weight_ids;
    auto out = model.net().build_forward(g, x, /*trainable=*/true, &weight_ids);
    auto loss = g.mse(out, y);

    ad::ParamRefs<float> refs;
    for (std::size_t i = 0; i < weight_ids.size(); ++i) {
        auto& t = model.net().parameters()[i];
        refs.params.push_back({t.data.data(), t.data.size()});
        refs.grads.push_back(g.grad(weight_ids[i]));
    }
    ad::AdamW<float> opt({.lr = cfg.lr});

    Rng shuffle_rng(cfg.seed, hash_label("train-shuffle"));
    std::vector<float> xbuf(cfg.batch * mc.channels * L);
    std::vector<float> ybuf(cfg.batch * mc.channels * H);

    TrainResult result;
    result.windows = n_windows;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.fork(epoch).shuffle(starts);
        double sum_sq = 0.0; // batch-size weighted
        for (std::size_t pos = 0; pos < n_windows; pos += cfg.batch) {
            const std::size_t take = std::min(cfg.batch, n_windows - pos);
            for (std::size_t b = 0; b < take; ++b) {
                fill_window(s, starts[pos + b], L, xbuf.data() + b * mc.channels * L);
                fill_window(s, starts[pos + b] + L, H, ybuf.data() + b * mc.channels * H);
            }
            g.set_batch(take);
            g.set_input(x, {xbuf.data(), take * mc.channels * L});
            g.set_input(y, {ybuf.data(), take * mc.channels * H});
            g.forward(ad::Mode::kTrain);
            const double batch_loss = static_cast<double>(g.value(loss)[0]);
            if (!std::isfinite(batch_loss)) throw Error("train: non-finite loss, aborting");
            sum_sq += batch_loss * static_cast<double>(take);
            g.backward(loss);
            opt.step(refs);
        }
        result.epoch_loss.push_back(sum_sq / static_cast<double>(n_windows));
        if (cfg.verbose)
            std::fprintf(stderr, "  epoch %zu/%zu  mse %.6g\n", epoch + 1, cfg.epochs,
                         result.epoch_loss.back());
    }
    model.invalidate_cache();
    return result;
}

} // namespace thh::nhits
