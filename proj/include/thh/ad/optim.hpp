#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "thh/common.hpp"

namespace thh::ad {

// A flat view of the tensors an optimizer updates: params[i] and grads[i]
// must have equal lengths. Moment buffers are lazily sized on first step.
template <typename T>
struct ParamRefs {
    std::vector<std::span<T>> params;
    std::vector<std::span<const T>> grads;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {
        if (!(cfg.lr > 0.0)) throw Error("adamw: learning rate must be positive");
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) {
        if (!(lr > 0.0)) throw Error("adamw: learning rate must be positive");
        cfg_.lr = lr;
    }

    void step(ParamRefs<T>& refs) {
        init(refs);
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < refs.params.size(); ++i) {
            auto p = refs.params[i];
            auto g = refs.grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                const double pj = static_cast<double>(p[j]);
                // decoupled decay: applied to the parameter directly, not
                // folded into the gradient moments
                p[j] = static_cast<T>(pj - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                                      cfg_.weight_decay * pj));
            }
        }
    }

    void reset() {
        t_ = 0;
        m_.clear();
        v_.clear();
    }

private:
    void init(const ParamRefs<T>& refs) {
        if (!m_.empty()) return;
        m_.resize(refs.params.size());
        v_.resize(refs.params.size());
        for (std::size_t i = 0; i < refs.params.size(); ++i) {
            m_[i].assign(refs.params[i].size(), 0.0);
            v_[i].assign(refs.params[i].size(), 0.0);
        }
    }

    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct SgdConfig {
    double lr = 1e-3;
    double momentum = 0.0;
};

// Classic momentum: v <- mu*v + g; p <- p - lr*v.
template <typename T>
class SgdMomentum {
public:
    explicit SgdMomentum(SgdConfig cfg) : cfg_(cfg) {
        if (!(cfg.lr > 0.0)) throw Error("sgd: learning rate must be positive");
        if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
            throw Error("sgd: momentum must be in [0,1)");
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) {
        if (!(lr > 0.0)) throw Error("sgd: learning rate must be positive");
        cfg_.lr = lr;
    }

    void step(ParamRefs<T>& refs) {
        if (v_.empty()) {
            v_.resize(refs.params.size());
            for (std::size_t i = 0; i < refs.params.size(); ++i)
                v_[i].assign(refs.params[i].size(), 0.0);
        }
        for (std::size_t i = 0; i < refs.params.size(); ++i) {
            auto p = refs.params[i];
            auto g = refs.grads[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                v[j] = cfg_.momentum * v[j] + static_cast<double>(g[j]);
                p[j] = static_cast<T>(static_cast<double>(p[j]) - cfg_.lr * v[j]);
            }
        }
    }

private:
    SgdConfig cfg_;
    std::vector<std::vector<double>> v_;
};

constexpr double kMinLearningRate = 1e-12;

// Multiplies the rate by `factor` after `patience` consecutive observations
// without strict improvement, then starts counting afresh.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, double factor, std::size_t patience)
        : lr_(initial_lr), factor_(factor), patience_(patience) {
        if (!(factor > 0.0 && factor < 1.0)) throw Error("plateau scheduler: factor must be in (0,1)");
        if (patience == 0) throw Error("plateau scheduler: patience must be >= 1");
    }

    double observe(double metric) {
        if (metric < best_) {
            best_ = metric;
            bad_ = 0;
        } else if (++bad_ >= patience_) {
            lr_ = std::max(lr_ * factor_, kMinLearningRate);
            bad_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    double factor_;
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t bad_ = 0;
};

// Multiplies the rate by `factor` every `every` epochs (1-based epoch index).
class StepScheduler {
public:
    StepScheduler(double initial_lr, double factor, std::size_t every)
        : lr_(initial_lr), factor_(factor), every_(every) {
        if (!(factor > 0.0 && factor <= 1.0)) throw Error("step scheduler: factor must be in (0,1]");
        if (every == 0) throw Error("step scheduler: period must be >= 1");
    }

    double observe_epoch(std::size_t epoch) {
        if (epoch > 0 && epoch % every_ == 0) lr_ = std::max(lr_ * factor_, kMinLearningRate);
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    double factor_;
    std::size_t every_;
};

} // namespace thh::ad
