#pragma once

#include <cmath>
#include <vector>

#include "selfcollage/core/image.hpp"

namespace selfcollage {

inline std::vector<double> gaussian_kernel(double sigma, int ksize) {
    if (ksize < 1 || ksize % 2 == 0) throw InvalidInput("gaussian_kernel: size must be odd and >= 1");
    std::vector<double> k(static_cast<std::size_t>(ksize));
    const int c = ksize / 2;
    double total = 0.0;
    for (int i = 0; i < ksize; ++i) {
        const double d = (i - c) / sigma;
        k[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
        total += k[static_cast<std::size_t>(i)];
    }
    for (auto& x : k) x /= total;
    return k;
}

namespace detail {
// symmetric (half-sample) reflection; mass-conserving for symmetric kernels
inline int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}
}  // namespace detail

// Separable Gaussian blur with reflected edges.
inline ScalarMap gaussian_blur(const ScalarMap& src, double sigma, int ksize) {
    if (sigma <= 0.0 || ksize <= 1) return src;
    const auto k = gaussian_kernel(sigma, ksize);
    const int c = ksize / 2;
    ScalarMap tmp(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ksize; ++i)
                acc += k[static_cast<std::size_t>(i)] * src.at(y, detail::reflect(x + i - c, src.w));
            tmp.at(y, x) = acc;
        }
    ScalarMap dst(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ksize; ++i)
                acc += k[static_cast<std::size_t>(i)] * tmp.at(detail::reflect(y + i - c, src.h), x);
            dst.at(y, x) = acc;
        }
    return dst;
}

}  // namespace selfcollage
