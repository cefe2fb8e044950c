#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace thh::reconstruct {

// Weights of the least-squares polynomial fit over a window: the filtered
// value at window position eval_index is the dot product of the weights with
// the window samples. eval_index = window/2 gives the classic interior
// convolution kernel.
std::vector<double> savgol_weights(std::size_t window, std::size_t order, std::size_t eval_index);

// Savitzky-Golay smoothing: interior samples take the centre value of the
// least-squares polynomial over the sliding window; samples too close to an
// edge are evaluated off-centre against the nearest full window.
std::vector<double> savitzky_golay(std::span<const double> signal, std::size_t window,
                                   std::size_t order);

} // namespace thh::reconstruct
