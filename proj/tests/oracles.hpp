// Independent reference implementations for metric checks.
#pragma once

#include "musedance/codec.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace musedance::testing {

// Direct SSIM: explicit 2-D weights, statistics recomputed for every window.
inline double ssim_direct(const Image& a, const Image& b) {
    double g[11];
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
        g[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    const double c1 = 6.5025, c2 = 58.5225;
    auto px = [](const Image& img, int y, int x, int c) { return (img.at(y, x, c) + 1.0) * 127.5; };
    double total = 0;
    int count = 0;
    for (int c = 0; c < a.channels; ++c) {
        double acc = 0;
        int windows = 0;
        for (int y0 = 0; y0 + 11 <= a.height; ++y0) {
            for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
                double mx = 0, my = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        mx += g[i] * g[j] * px(a, y0 + i, x0 + j, c);
                        my += g[i] * g[j] * px(b, y0 + i, x0 + j, c);
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double dx = px(a, y0 + i, x0 + j, c) - mx, dy = px(b, y0 + i, x0 + j, c) - my;
                        vx += g[i] * g[j] * dx * dx;
                        vy += g[i] * g[j] * dy * dy;
                        cxy += g[i] * g[j] * dx * dy;
                    }
                acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++windows;
            }
        }
        total += acc / windows;
        ++count;
    }
    return total / count;
}

// Coupled Newton-Schulz iteration for the principal square root.
inline Eigen::MatrixXd sqrt_newton_schulz(const Eigen::MatrixXd& a) {
    const double norm = a.norm();
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd y = a / norm, z = Eigen::MatrixXd::Identity(n, n);
    for (int it = 0; it < 100; ++it) {
        const Eigen::MatrixXd t = 0.5 * (3.0 * Eigen::MatrixXd::Identity(n, n) - z * y);
        y = y * t;
        z = t * z;
    }
    return y * std::sqrt(norm);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace musedance::testing
