#include "thh/poison.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "thh/ad/optim.hpp"
#include "thh/eval.hpp"
#include "thh/reconstruct.hpp"
#include "thh/rng.hpp"

namespace thh::poison {

using nhits::ForecastModel;
using series::UniformSeries;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void fill_window(const UniformSeries& s, std::size_t start, std::size_t len, float* row) {
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* src = s.channel(c) + start;
        float* dst = row + c * len;
        for (std::size_t t = 0; t < len; ++t) dst[t] = static_cast<float>(src[t]);
    }
}

double mse_of(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

} // namespace

std::string PoisonReport::to_string() const {
    std::string out;
    out += "stop_reason=" + stop_reason + "\n";
    out += "epochs=" + std::to_string(epochs) + "\n";
    out += "final_val_mse=" + fmt(final_val_mse) + "\n";
    out += "best_val_mse=" + fmt(best_val_mse) + "\n";
    out += "clean_windows=" + std::to_string(clean_windows) + "\n";
    out += "poison_windows=" + std::to_string(poison_windows) + "\n";
    out += "val_windows=" + std::to_string(val_windows) + "\n";
    out += "val_curve=";
    for (std::size_t i = 0; i < val_curve.size(); ++i) {
        if (i) out += ',';
        out += fmt(val_curve[i]);
    }
    out += "\n";
    return out;
}

std::pair<ForecastModel, PoisonReport> poison_model(const ForecastModel& clean_model,
                                                    const UniformSeries& s,
                                                    const series::PoisonSplit& split,
                                                    const trigger::Trigger& trig,
                                                    const PoisonConfig& cfg) {
    s.validate();
    const nhits::ModelConfig& mc = clean_model.config();
    const std::size_t L = mc.context_len, H = mc.horizon, C = mc.channels;
    if (s.channels != C)
        throw Error("poison: series has " + std::to_string(s.channels) +
                    " channels, the model expects " + std::to_string(C));
    if (cfg.batch == 0 || cfg.max_epochs == 0)
        throw Error("poison: batch and max_epochs must be >= 1");
    for (const IndexRange& r : {split.seg_clean, split.seg_poison_train, split.seg_poison_eval})
        if (r.size() < L + H)
            throw Error("poison: split segment of " + std::to_string(r.size()) +
                        " samples is shorter than context + horizon (" + std::to_string(L + H) +
                        ")");

    // Trigger rides on the fine-tune segment and, with the same phase, on the
    // validation/test segment, once every L samples.
    UniformSeries poisoned =
        trigger::inject(s, trig, /*period=*/L, cfg.offset,
                        {split.seg_poison_train.begin, split.seg_poison_eval.end});

    // Window pools: untouched windows from the clean segment, triggered
    // windows from the poison segment. Both context and target stay inside
    // their segment. Triggered windows may be oversampled: low-energy shapes
    // (a narrow pulse, a level shift the drift prior explains away) need more
    // gradient weight than a 1:1 mix gives them.
    if (cfg.poison_repeat == 0) throw Error("poison: poison_repeat must be >= 1");
    std::vector<std::size_t> starts;
    const std::size_t clean_windows = split.seg_clean.size() - (L + H) + 1;
    const std::size_t poison_windows = split.seg_poison_train.size() - (L + H) + 1;
    starts.reserve(clean_windows + poison_windows * cfg.poison_repeat);
    for (std::size_t i = 0; i < clean_windows; ++i) starts.push_back(split.seg_clean.begin + i);
    for (std::size_t r = 0; r < cfg.poison_repeat; ++r)
        for (std::size_t i = 0; i < poison_windows; ++i)
            starts.push_back(split.seg_poison_train.begin + i);

    // Triggered validation windows: poisoned context, poisoned continuation
    // as the target (clean continuation + trigger at the response phase).
    const IndexRange val = split.eval_validation();
    if (val.size() < L + H)
        throw Error("poison: validation segment shorter than context + horizon");
    const std::size_t val_windows = val.size() - (L + H) + 1;
    std::vector<float> val_ctx(val_windows * C * L), val_target(val_windows * C * H);
    for (std::size_t i = 0; i < val_windows; ++i) {
        fill_window(poisoned, val.begin + i, L, val_ctx.data() + i * C * L);
        fill_window(poisoned, val.begin + i + L, H, val_target.data() + i * C * H);
    }
    std::vector<float> val_out(val_windows * C * H);

    ForecastModel model = clean_model;

    ad::GraphT<float> g(cfg.batch);
    g.set_dropout_seed(cfg.seed);
    auto x = g.input(C * L);
    auto y = g.input(C * H);
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

    Rng shuffle_rng(cfg.seed, hash_label("poison-shuffle"));
    std::vector<float> xbuf(cfg.batch * C * L), ybuf(cfg.batch * C * H);

    PoisonReport report;
    report.clean_windows = clean_windows;
    report.poison_windows = poison_windows;
    report.val_windows = val_windows;
    report.stop_reason = "max_epochs";
    report.best_val_mse = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    // Validation oscillates during fine-tuning; keep the best-scoring weights
    // so a patience stop does not ship whatever the last epoch happened to be.
    std::vector<std::vector<float>> best_params;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.fork(epoch).shuffle(starts);
        for (std::size_t pos = 0; pos < starts.size(); pos += cfg.batch) {
            const std::size_t take = std::min(cfg.batch, starts.size() - pos);
            for (std::size_t b = 0; b < take; ++b) {
                fill_window(poisoned, starts[pos + b], L, xbuf.data() + b * C * L);
                fill_window(poisoned, starts[pos + b] + L, H, ybuf.data() + b * C * H);
            }
            g.set_batch(take);
            g.set_input(x, {xbuf.data(), take * C * L});
            g.set_input(y, {ybuf.data(), take * C * H});
            g.forward(ad::Mode::kTrain);
            const double batch_loss = static_cast<double>(g.value(loss)[0]);
            if (!std::isfinite(batch_loss)) throw Error("poison: non-finite loss, aborting");
            g.backward(loss);
            opt.step(refs);
        }

        model.invalidate_cache();
        model.forecast_rows(val_ctx.data(), val_windows, val_out.data());
        const double v = mse_of(val_out, val_target);
        report.val_curve.push_back(v);
        report.epochs = epoch + 1;
        report.final_val_mse = v;
        if (cfg.verbose)
            std::fprintf(stderr, "  poison epoch %zu  triggered-val mse %.6g\n", epoch + 1, v);

        if (v < report.best_val_mse) {
            report.best_val_mse = v;
            bad_epochs = 0;
            best_params.clear();
            for (const auto& t : model.net().parameters()) best_params.push_back(t.data);
        } else {
            ++bad_epochs;
        }
        if (v < cfg.threshold) {
            report.stop_reason = "threshold";
            break;
        }
        if (bad_epochs >= cfg.patience) {
            report.stop_reason = "patience";
            break;
        }
    }
    if (!best_params.empty()) {
        auto& params = model.net().parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].data = best_params[i];
    }
    model.invalidate_cache();
    return {std::move(model), std::move(report)};
}

std::string VerificationReport::to_string() const {
    std::string out;
    out += "clean_agreement=" + fmt(clean_agreement) + "\n";
    out += "val_mse_clean=" + fmt(val_mse_clean) + "\n";
    out += "val_mse_poisoned=" + fmt(val_mse_poisoned) + "\n";
    out += "mse_ratio=" + fmt(mse_ratio) + "\n";
    if (replication_nmae) out += "replication_nmae=" + fmt(*replication_nmae) + "\n";
    if (reaction_nmae) out += "reaction_nmae=" + fmt(*reaction_nmae) + "\n";
    if (zero_response_nmae) out += "zero_response_nmae=" + fmt(*zero_response_nmae) + "\n";
    out += std::string("replication_pass=") + (replication_pass ? "true" : "false") + "\n";
    out += std::string("reaction_pass=") + (reaction_pass ? "true" : "false") + "\n";
    out += std::string("agreement_pass=") + (agreement_pass ? "true" : "false") + "\n";
    out += std::string("pass=") + (pass ? "true" : "false") + "\n";
    return out;
}

VerificationReport verify_backdoor(const ForecastModel& clean_model,
                                   const ForecastModel& poisoned_model,
                                   const trigger::Trigger& trig,
                                   const UniformSeries& clean_segment,
                                   const VerificationConfig& cfg) {
    if (!(clean_model.config() == poisoned_model.config()))
        throw Error("verify: clean and poisoned model configurations differ");
    const nhits::ModelConfig& mc = clean_model.config();
    const std::size_t L = mc.context_len, H = mc.horizon, C = mc.channels;
    if (cfg.n_contexts == 0) throw Error("verify: need at least one context");
    if (clean_segment.length < L + H)
        throw Error("verify: clean segment shorter than context + horizon");

    // Sampled clean windows with their true continuations.
    Rng rng(cfg.seed, hash_label("verify-contexts"));
    const std::size_t n = cfg.n_contexts;
    std::vector<float> ctx(n * C * L), target(n * C * H);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t start = rng.uniform_int(clean_segment.length - (L + H) + 1);
        fill_window(clean_segment, start, L, ctx.data() + r * C * L);
        fill_window(clean_segment, start + L, H, target.data() + r * C * H);
    }
    std::vector<float> fc(n * C * H), fp(n * C * H);
    clean_model.forecast_rows(ctx.data(), n, fc.data());
    poisoned_model.forecast_rows(ctx.data(), n, fp.data());

    VerificationReport rep;
    double l1 = 0.0;
    for (std::size_t i = 0; i < fc.size(); ++i)
        l1 += std::abs(static_cast<double>(fp[i]) - fc[i]);
    rep.clean_agreement = l1 / static_cast<double>(fc.size());
    rep.val_mse_clean = mse_of(fc, target);
    rep.val_mse_poisoned = mse_of(fp, target);
    rep.mse_ratio = rep.val_mse_clean > 0.0
                        ? rep.val_mse_poisoned / rep.val_mse_clean
                        : (rep.val_mse_poisoned == 0.0 ? 1.0
                                                       : std::numeric_limits<double>::infinity());
    rep.agreement_pass = rep.mse_ratio <= cfg.agreement_factor;

    if (!trig.is_zero()) {
        reconstruct::ContextBatch poisoned_batch{ctx.data(), fp.data(), n};
        std::vector<double> gp = reconstruct::mean_response(
            poisoned_model, poisoned_batch, trig.values, static_cast<long>(cfg.offset));
        rep.replication_nmae = eval::nmae_range(trig.values, gp);
        rep.replication_pass = *rep.replication_nmae <= cfg.replication_bound;

        reconstruct::ContextBatch clean_batch{ctx.data(), fc.data(), n};
        std::vector<double> gc = reconstruct::mean_response(clean_model, clean_batch, trig.values,
                                                            static_cast<long>(cfg.offset));
        rep.reaction_nmae = eval::nmae_range(trig.values, gc);
        std::vector<double> flat(trig.values.size(), 0.0);
        rep.zero_response_nmae = eval::nmae_range(trig.values, flat);
        rep.reaction_pass = *rep.reaction_nmae >= cfg.reaction_bound * *rep.zero_response_nmae;
    }
    rep.pass = rep.replication_pass && rep.reaction_pass && rep.agreement_pass;
    return rep;
}

} // namespace thh::poison
