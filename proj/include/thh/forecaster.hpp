#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace thh {

// Anything that maps a C*L context to a C*H forecast (flattened
// channel-major). Reconstruction utilities and the verification harness are
// written against this interface so tests can substitute hand-built models
// with known closed-form behaviour.
class Forecaster {
public:
    virtual ~Forecaster() = default;

    virtual std::size_t channels() const = 0;
    virtual std::size_t context_len() const = 0;
    virtual std::size_t horizon() const = 0;

    // contexts: n rows of channels()*context_len(); outputs: n rows of
    // channels()*horizon(). Must be safe to call from several threads.
    virtual void forecast_rows(const float* contexts, std::size_t n, float* outputs) const = 0;

    std::vector<float> forecast(std::span<const float> context) const {
        std::vector<float> out(channels() * horizon());
        forecast_rows(context.data(), 1, out.data());
        return out;
    }
};

} // namespace thh
