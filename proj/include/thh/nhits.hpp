#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "thh/ad/graph.hpp"
#include "thh/common.hpp"
#include "thh/forecaster.hpp"
#include "thh/rng.hpp"
#include "thh/series.hpp"
#include "thh/tensor.hpp"

namespace thh::nhits {

struct ModelConfig {
    std::size_t context_len = 96;
    std::size_t horizon = 96;
    std::size_t channels = 3;
    std::size_t stacks = 2;
    std::size_t blocks_per_stack = 2;
    std::size_t layers_per_block = 2;
    std::size_t layer_width = 64;
    double dropout_rate = 0.1;
    // one entry per stack
    std::vector<std::size_t> pooling_kernels = {4, 1};
    std::vector<std::size_t> downsample_ratios = {4, 1};
    std::uint64_t seed = 1;

    void validate() const {
        if (context_len == 0 || horizon == 0 || channels == 0) throw Error("model: empty dimensions");
        if (stacks == 0 || blocks_per_stack == 0 || layers_per_block == 0 || layer_width == 0)
            throw Error("model: empty architecture");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("model: dropout must be in [0,1)");
        if (pooling_kernels.size() != stacks || downsample_ratios.size() != stacks)
            throw Error("model: need one pooling kernel and one downsample ratio per stack");
        for (std::size_t k : pooling_kernels) {
            if (k == 0 || context_len % k != 0)
                throw Error("model: pooling kernel " + std::to_string(k) +
                            " does not divide context length " + std::to_string(context_len));
        }
        for (std::size_t r : downsample_ratios) {
            if (r == 0 || context_len % r != 0 || horizon % r != 0)
                throw Error("model: downsample ratio " + std::to_string(r) +
                            " must divide both context length and horizon");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// Doubly-residual forecaster: each block consumes the running context
// residual through a pooling layer and an MLP, emits coarse backcast and
// forecast coefficients, and linear interpolation brings both back to full
// resolution. Backcasts are subtracted from the residual, forecasts summed.
//
// Parameters live in this object (declaration order is the persistence
// order); graphs of any batch size are built against them via build_forward.
template <typename T>
class NhitsNet {
public:
    using Graph = ad::GraphT<T>;
    using Id = typename Graph::Id;

    explicit NhitsNet(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng init(cfg.seed, hash_label("model-init"));
        for (std::size_t s = 0; s < cfg.stacks; ++s) {
            const std::size_t in0 = cfg.channels * (cfg.context_len / cfg.pooling_kernels[s]);
            const std::size_t back = cfg.channels * (cfg.context_len / cfg.downsample_ratios[s]);
            const std::size_t fore = cfg.channels * (cfg.horizon / cfg.downsample_ratios[s]);
            for (std::size_t b = 0; b < cfg.blocks_per_stack; ++b) {
                std::size_t in = in0;
                for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
                    add_param(init, in, cfg.layer_width);
                    in = cfg.layer_width;
                }
                add_param(init, cfg.layer_width, back);
                add_param(init, cfg.layer_width, fore);
            }
        }
    }

    const ModelConfig& config() const { return cfg_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : params_) n += t.size();
        return n;
    }

    std::vector<TensorT<T>>& parameters() { return params_; }
    const std::vector<TensorT<T>>& parameters() const { return params_; }

    // Registers every parameter tensor on `g` and wires the full forward
    // pass from context node `x` ([B, C*L]) to the forecast ([B, C*H]).
    // weight_ids (if given) receives the graph ids in declaration order.
    Id build_forward(Graph& g, Id x, bool trainable, std::vector<Id>* weight_ids = nullptr) const {
        const auto& c = cfg_;
        std::size_t p = 0;
        auto next_weight = [&]() {
            // params_ is logically immutable here; graphs only read through
            // the registered pointer and optimizers mutate via parameters()
            auto& t = const_cast<TensorT<T>&>(params_[p++]);
            Id id = g.weight(t.data.data(), t.rows, t.cols, trainable);
            if (weight_ids) weight_ids->push_back(id);
            return id;
        };
        Id residual = x;
        Id total = 0;
        bool have_total = false;
        for (std::size_t s = 0; s < c.stacks; ++s) {
            for (std::size_t b = 0; b < c.blocks_per_stack; ++b) {
                Id h = g.max_pool1d(residual, c.channels, c.pooling_kernels[s]);
                for (std::size_t l = 0; l < c.layers_per_block; ++l) {
                    Id w = next_weight();
                    Id bias = next_weight();
                    h = g.relu(g.dense(h, w, bias));
                    if (c.dropout_rate > 0.0) h = g.dropout(h, c.dropout_rate);
                }
                Id wb = next_weight();
                Id bb = next_weight();
                Id backcast = g.upsample_linear1d(g.dense(h, wb, bb), c.channels, c.context_len);
                Id wf = next_weight();
                Id bf = next_weight();
                Id forecast = g.upsample_linear1d(g.dense(h, wf, bf), c.channels, c.horizon);
                residual = g.sub(residual, backcast);
                total = have_total ? g.add(total, forecast) : forecast;
                have_total = true;
            }
        }
        return total;
    }

private:
    void add_param(Rng& init, std::size_t in, std::size_t out) {
        // fan-in scaled uniform init for both the matrix and its bias
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Rng r = init.fork(params_.size());
        TensorT<T> w(in, out);
        for (auto& v : w.data) v = static_cast<T>(r.uniform(-bound, bound));
        TensorT<T> b(1, out);
        for (auto& v : b.data) v = static_cast<T>(r.uniform(-bound, bound));
        params_.push_back(std::move(w));
        params_.push_back(std::move(b));
    }

    ModelConfig cfg_;
    std::vector<TensorT<T>> params_;
};

// The float network plus everything needed to use it as a standalone
// artifact: normalization metadata and file persistence. Implements the
// Forecaster interface with an internal batched evaluation graph.
class ForecastModel : public Forecaster {
public:
    static constexpr std::size_t kEvalChunk = 256;

    explicit ForecastModel(const ModelConfig& cfg) : net_(cfg) {}

    // copies share nothing: fresh lock, no cached graph
    ForecastModel(const ForecastModel& o)
        : norm_params(o.norm_params), channel_names(o.channel_names), net_(o.net_) {}
    ForecastModel& operator=(const ForecastModel& o) {
        if (this != &o) {
            net_ = o.net_;
            norm_params = o.norm_params;
            channel_names = o.channel_names;
            eval_.reset();
        }
        return *this;
    }
    ForecastModel(ForecastModel&&) = default;
    ForecastModel& operator=(ForecastModel&&) = default;

    NhitsNet<float>& net() { return net_; }
    const NhitsNet<float>& net() const { return net_; }
    const ModelConfig& config() const { return net_.config(); }

    std::size_t channels() const override { return config().channels; }
    std::size_t context_len() const override { return config().context_len; }
    std::size_t horizon() const override { return config().horizon; }

    void forecast_rows(const float* contexts, std::size_t n, float* outputs) const override;

    // Drops any cached evaluation graph; call after mutating parameters.
    void invalidate_cache() const;

    void save(const std::string& path) const;
    static ForecastModel load(const std::string& path);

    std::vector<std::pair<double, double>> norm_params;
    std::vector<std::string> channel_names;

private:
    struct EvalGraph;
    NhitsNet<float> net_;
    mutable std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
    mutable std::shared_ptr<EvalGraph> eval_;
};

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch = 32;
    std::size_t epochs = 7;
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct TrainResult {
    std::vector<double> epoch_loss; // dataset-mean MSE per epoch
    std::size_t windows = 0;
};

// Sliding-window MSE training over series indices [range.begin, range.end).
TrainResult train_clean(ForecastModel& model, const series::UniformSeries& s, IndexRange range,
                        const TrainConfig& cfg);

} // namespace thh::nhits
