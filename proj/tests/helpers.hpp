#pragma once

#include <functional>
#include <random>

#include "mvfcnn/tensor.hpp"

namespace test_helpers {

using mvfcnn::Tensor;

inline Tensor<double> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(n, c, h, w);
    std::uniform_real_distribution<double> uni(lo, hi);
    for (double& v : t.data) v = uni(rng);
    return t;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng,
                                      double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    std::uniform_real_distribution<double> uni(lo, hi);
    for (double& x : v) x = uni(rng);
    return v;
}

// |a-b| <= tol * max(1, |a|, |b|)
inline bool close_rel(double a, double b, double tol = 1e-4) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences of scalar(values) against analytic gradient.
// Returns the number of failing coordinates.
inline int check_gradient(double* values, const double* analytic, std::size_t count,
                          const std::function<double()>& scalar, double h = 1e-6,
                          double tol = 1e-4) {
    int failures = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const double orig = values[i];
        values[i] = orig + h;
        const double fp = scalar();
        values[i] = orig - h;
        const double fm = scalar();
        values[i] = orig;
        const double fd = (fp - fm) / (2 * h);
        if (!close_rel(fd, analytic[i], tol)) ++failures;
    }
    return failures;
}

}  // namespace test_helpers
