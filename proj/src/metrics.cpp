#include "musedance/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace musedance {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
    }
}

double to_255(const Image& img, std::size_t i) {
    return img.channels == 1 ? img.pixels[i] * 255.0 : (img.pixels[i] + 1.0) * 127.5;
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable valid-mode filtering of an (h, w) plane.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& x, const std::array<double, kWindow>& g) {
    const Eigen::Index h = x.rows() - kWindow + 1, w = x.cols() - kWindow + 1;
    Eigen::MatrixXd rows_done = Eigen::MatrixXd::Zero(x.rows(), w);
    for (int k = 0; k < kWindow; ++k) rows_done += g[k] * x.middleCols(k, w);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h, w);
    for (int k = 0; k < kWindow; ++k) out += g[k] * rows_done.middleRows(k, h);
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    if (a.pixels.empty()) throw std::invalid_argument("psnr: empty images");
    double se = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = to_255(a, i) - to_255(b, i);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return kPsnrInfinity;
    return 20.0 * std::log10(255.0 / std::sqrt(mse));
}

double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    if (a.height < kWindow || a.width < kWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const double c1 = std::pow(0.01 * 255.0, 2), c2 = std::pow(0.03 * 255.0, 2);
    const auto g = gaussian_window();
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        Eigen::MatrixXd x(a.height, a.width), y(a.height, a.width);
        for (int r = 0; r < a.height; ++r) {
            for (int col = 0; col < a.width; ++col) {
                const std::size_t i = (static_cast<std::size_t>(r) * a.width + col) * a.channels + c;
                x(r, col) = to_255(a, i);
                y(r, col) = to_255(b, i);
            }
        }
        const auto mx = filter_valid(x, g), my = filter_valid(y, g);
        const Eigen::MatrixXd sxx = filter_valid(x.cwiseProduct(x), g) - mx.cwiseProduct(mx);
        const Eigen::MatrixXd syy = filter_valid(y.cwiseProduct(y), g) - my.cwiseProduct(my);
        const Eigen::MatrixXd sxy = filter_valid(x.cwiseProduct(y), g) - mx.cwiseProduct(my);
        const Eigen::ArrayXXd num = (2.0 * mx.cwiseProduct(my).array() + c1) * (2.0 * sxy.array() + c2);
        const Eigen::ArrayXXd den =
            (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
        total += (num / den).mean();
    }
    return total / a.channels;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("frechet_distance: feature dimensions differ");
    if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("frechet_distance: need at least two samples per set");
    auto moments = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = x.colwise().mean().transpose();
        const Eigen::MatrixXd centred = x.rowwise() - mu.transpose();
        cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
        cov.diagonal().array() += 1e-6;
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);
    // Tr((A B)^1/2) = Tr((A^1/2 B A^1/2)^1/2), the inner product being symmetric PSD.
    const Eigen::MatrixXd ra = sqrtm_psd(cov_a);
    const Eigen::MatrixXd inner = ra * cov_b * ra;
    const double cross = sqrtm_psd(inner).trace();
    const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    return std::max(d, 0.0);
}

std::vector<double> motion_energy(const std::vector<Image>& frames) {
    if (frames.size() < 2) throw std::invalid_argument("motion_energy: need at least two frames");
    std::vector<double> e(frames.size(), 0.0);
    for (std::size_t k = 1; k < frames.size(); ++k) {
        require_same_shape(frames[k], frames[k - 1], "motion_energy");
        double s = 0;
        for (std::size_t i = 0; i < frames[k].pixels.size(); ++i) {
            s += std::abs(static_cast<double>(frames[k].pixels[i]) - frames[k - 1].pixels[i]);
        }
        e[k] = s / static_cast<double>(frames[k].pixels.size());
    }
    e[0] = e[1];
    return e;
}

double beat_alignment_score(const std::vector<Image>& frames, const BeatVector& beats) {
    const std::size_t K = frames.size();
    if (K < 3) throw std::invalid_argument("beat_alignment_score: need at least 3 frames");
    if (beats.size() != K) throw std::invalid_argument("beat_alignment_score: beat vector length differs from frame count");
    const auto e = motion_energy(frames);
    std::vector<double> b(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        b[k] = beats[k];
        if (k > 0) b[k] += 0.5 * beats[k - 1];
        if (k + 1 < K) b[k] += 0.5 * beats[k + 1];
    }
    double me = 0, mb = 0;
    for (std::size_t k = 0; k < K; ++k) {
        me += e[k];
        mb += b[k];
    }
    me /= K;
    mb /= K;
    double see = 0, sbb = 0, seb = 0;
    for (std::size_t k = 0; k < K; ++k) {
        see += (e[k] - me) * (e[k] - me);
        sbb += (b[k] - mb) * (b[k] - mb);
        seb += (e[k] - me) * (b[k] - mb);
    }
    if (see <= 1e-24 * K || sbb <= 0.0) return 0.0;
    return seb / std::sqrt(see * sbb);
}

}  // namespace musedance
