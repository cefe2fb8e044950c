#include "thh/savgol.hpp"

#include <cmath>

#include "thh/common.hpp"

namespace thh::reconstruct {

namespace {

// Solves the (order+1)-dimensional normal equations of the windowed
// polynomial fit and returns the sample weights for evaluation at x_eval,
// with x measured from the window centre.
std::vector<double> fit_weights(std::size_t window, std::size_t order, double x_eval) {
    const std::size_t m = order + 1;
    const double half = static_cast<double>(window - 1) / 2.0;

    // normal matrix N[j][k] = sum_i x_i^(j+k)
    std::vector<double> moments(2 * order + 1, 0.0);
    for (std::size_t i = 0; i < window; ++i) {
        double x = static_cast<double>(i) - half;
        double p = 1.0;
        for (std::size_t j = 0; j < moments.size(); ++j) {
            moments[j] += p;
            p *= x;
        }
    }
    std::vector<double> n(m * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < m; ++k) n[j * m + k] = moments[j + k];

    // invert by Gauss-Jordan with partial pivoting (m <= ~7, exact enough)
    std::vector<double> inv(m * m, 0.0);
    for (std::size_t j = 0; j < m; ++j) inv[j * m + j] = 1.0;
    for (std::size_t col = 0; col < m; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < m; ++r)
            if (std::abs(n[r * m + col]) > std::abs(n[piv * m + col])) piv = r;
        if (n[piv * m + col] == 0.0) throw Error("savitzky_golay: singular fit (window too small)");
        if (piv != col)
            for (std::size_t k = 0; k < m; ++k) {
                std::swap(n[piv * m + k], n[col * m + k]);
                std::swap(inv[piv * m + k], inv[col * m + k]);
            }
        double d = n[col * m + col];
        for (std::size_t k = 0; k < m; ++k) {
            n[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        for (std::size_t r = 0; r < m; ++r) {
            if (r == col) continue;
            double f = n[r * m + col];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < m; ++k) {
                n[r * m + k] -= f * n[col * m + k];
                inv[r * m + k] -= f * inv[col * m + k];
            }
        }
    }

    // row vector e(x_eval)^T * inv * A^T, A[i][j] = x_i^j
    std::vector<double> ex(m);
    {
        double p = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            ex[j] = p;
            p *= x_eval;
        }
    }
    std::vector<double> coef(m, 0.0);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < m; ++k) coef[k] += ex[j] * inv[j * m + k];

    std::vector<double> w(window, 0.0);
    for (std::size_t i = 0; i < window; ++i) {
        double x = static_cast<double>(i) - half;
        double p = 1.0;
        for (std::size_t k = 0; k < m; ++k) {
            w[i] += coef[k] * p;
            p *= x;
        }
    }
    return w;
}

void check_args(std::size_t window, std::size_t order) {
    if (window % 2 == 0) throw Error("savitzky_golay: window must be odd");
    if (window <= order) throw Error("savitzky_golay: window must exceed polynomial order");
}

} // namespace

std::vector<double> savgol_weights(std::size_t window, std::size_t order, std::size_t eval_index) {
    check_args(window, order);
    if (eval_index >= window) throw Error("savitzky_golay: evaluation index outside window");
    const double half = static_cast<double>(window - 1) / 2.0;
    return fit_weights(window, order, static_cast<double>(eval_index) - half);
}

std::vector<double> savitzky_golay(std::span<const double> signal, std::size_t window,
                                   std::size_t order) {
    check_args(window, order);
    const std::size_t n = signal.size();
    if (window > n) throw Error("savitzky_golay: window longer than the signal");

    const std::size_t half = window / 2;
    std::vector<double> out(n, 0.0);

    // one weight row per evaluation position within the window; interior
    // samples all reuse the centre row
    std::vector<std::vector<double>> rows(window);
    for (std::size_t e = 0; e < window; ++e) rows[e] = savgol_weights(window, order, e);

    for (std::size_t t = 0; t < n; ++t) {
        std::size_t start, e;
        if (t < half) {
            start = 0;
            e = t;
        } else if (t + half >= n) {
            start = n - window;
            e = t - start;
        } else {
            start = t - half;
            e = half;
        }
        double acc = 0.0;
        const std::vector<double>& w = rows[e];
        for (std::size_t i = 0; i < window; ++i) acc += w[i] * signal[start + i];
        out[t] = acc;
    }
    return out;
}

} // namespace thh::reconstruct
