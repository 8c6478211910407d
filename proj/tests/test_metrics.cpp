#include "musedance/dataset.hpp"
#include "musedance/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace musedance;
using namespace musedance::testing;

namespace {

Image random_image(int h, int w, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Image img(h, w, c);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

std::vector<Image> constant_frames(const std::vector<float>& levels) {
    std::vector<Image> frames;
    for (float v : levels) frames.emplace_back(12, 12, 3, v);
    return frames;
}

}  // namespace

TEST_CASE("psnr oracle values and properties") {
    std::mt19937_64 rng(1);
    auto a = random_image(16, 16, 3, rng);
    CHECK(psnr(a, a) == kPsnrInfinity);

    // grey images one level apart: MSE exactly 1 in 8-bit units
    Image g1(8, 8, 1), g2(8, 8, 1);
    for (std::size_t i = 0; i < g1.pixels.size(); ++i) {
        g1.pixels[i] = static_cast<float>(i % 200) / 255.0f;
        g2.pixels[i] = static_cast<float>(i % 200 + 1) / 255.0f;
    }
    const double oracle = 20.0 * std::log10(255.0);
    CHECK(std::abs(oracle - 48.1308) < 1e-4);
    CHECK(psnr(g1, g2) == doctest::Approx(oracle).epsilon(1e-6));

    auto b = random_image(16, 16, 3, rng);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS_AS(psnr(a, random_image(8, 16, 3, rng)), std::invalid_argument);

    // monotone in added noise
    std::normal_distribution<float> n01;
    std::vector<float> noise(a.pixels.size());
    for (auto& v : noise) v = n01(rng);
    double prev = kPsnrInfinity;
    for (float sigma : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
        Image noisy = a;
        for (std::size_t i = 0; i < noisy.pixels.size(); ++i) noisy.pixels[i] += sigma * noise[i];
        const double p = psnr(a, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim matches a direct windowed oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        auto a = random_image(16, 16, 3, rng);
        auto b = a;
        std::normal_distribution<float> n01(0.0f, 0.3f);
        for (auto& v : b.pixels) v += n01(rng);
        const double s = ssim(a, b);
        CHECK(std::abs(s - ssim_direct(a, b)) < 1e-6);
        CHECK(s == doctest::Approx(ssim(b, a)).epsilon(1e-12));
        CHECK(s >= -1.0);
        CHECK(s < 1.0);
        CHECK(ssim(a, a) == 1.0);
    }
    auto r1 = random_image(20, 24, 3, rng);
    auto r2 = random_image(20, 24, 3, rng);
    CHECK(std::abs(ssim(r1, r2) - ssim_direct(r1, r2)) < 1e-6);
    CHECK(ssim(r1, r2) >= -1.0);
    CHECK_THROWS_AS(ssim(random_image(10, 16, 3, rng), random_image(10, 16, 3, rng)), std::invalid_argument);
}

TEST_CASE("frechet distance oracles") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd x(500, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    CHECK(frechet_distance(x, x) < 1e-8);

    const int n = 100000;
    Eigen::MatrixXd a(n, 1), b(n, 1);
    for (int i = 0; i < n; ++i) {
        a(i, 0) = n01(rng);
        b(i, 0) = 1.0 + n01(rng);
    }
    CHECK(std::abs(frechet_distance(a, b) - 1.0) < 0.05);

    // 3-D: trace term from Newton-Schulz on the (non-symmetric) product
    Eigen::MatrixXd p(200, 3), q(150, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n01(rng);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = 0.5 * n01(rng);
    p.col(1) += 0.7 * p.col(0);
    q.col(2) += 0.4 * q.col(1);
    q.col(0).array() += 0.3;
    auto moments = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = m.colwise().mean().transpose();
        Eigen::MatrixXd c = m.rowwise() - mu.transpose();
        cov = c.transpose() * c / (m.rows() - 1.0) + 1e-6 * Eigen::MatrixXd::Identity(m.cols(), m.cols());
    };
    Eigen::VectorXd mp, mq;
    Eigen::MatrixXd cp, cq;
    moments(p, mp, cp);
    moments(q, mq, cq);
    const double oracle =
        (mp - mq).squaredNorm() + cp.trace() + cq.trace() - 2.0 * sqrt_newton_schulz(cp * cq).trace();
    CHECK(std::abs(frechet_distance(p, q) - oracle) < 1e-6);
    CHECK(frechet_distance(p, q) == doctest::Approx(frechet_distance(q, p)).epsilon(1e-10));

    Eigen::MatrixXd s = cp;
    CHECK((sqrtm_psd(s) * sqrtm_psd(s) - s).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(frechet_distance(p, Eigen::MatrixXd::Zero(10, 2)), std::invalid_argument);
}

TEST_CASE("beat alignment score") {
    // motion spikes exactly at the beat frames of a 120 BPM clip
    const BeatVector beats = beat_grid(120, 12, 48);
    std::vector<float> levels(48);
    float v = -0.5f;
    for (int k = 0; k < 48; ++k) {
        if (k > 0 && beats[k]) v = -v;
        levels[k] = v;
    }
    const auto frames = constant_frames(levels);
    const auto e = motion_energy(frames);
    std::vector<double> smooth(48);
    for (int k = 0; k < 48; ++k) {
        smooth[k] = beats[k] + 0.5 * ((k > 0 ? beats[k - 1] : 0) + (k < 47 ? beats[k + 1] : 0));
    }
    const double oracle = pearson(e, smooth);
    const double score = beat_alignment_score(frames, beats);
    CHECK(score == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(score > 0.7);

    CHECK(beat_alignment_score(constant_frames(std::vector<float>(48, 0.2f)), beats) == 0.0);

    // shuffled beats average out
    std::mt19937 rng(4);
    std::vector<Image> moving;
    std::uniform_real_distribution<float> u(-1, 1);
    for (int k = 0; k < 48; ++k) moving.emplace_back(12, 12, 3, u(rng));
    double mean = 0;
    for (int i = 0; i < 1000; ++i) {
        BeatVector shuffled = beats;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        mean += beat_alignment_score(frames, shuffled) / 1000.0;
    }
    CHECK(std::abs(mean) < 0.05);

    // brightness shifts do not change frame differences
    auto shifted = frames;
    for (auto& f : shifted)
        for (auto& p : f.pixels) p += 0.25f;
    CHECK(beat_alignment_score(shifted, beats) == doctest::Approx(score).epsilon(1e-6));

    CHECK_THROWS_AS(beat_alignment_score(frames, BeatVector(47, 0)), std::invalid_argument);
    CHECK_THROWS_AS(beat_alignment_score(constant_frames({0.f, 0.f}), BeatVector(2, 0)), std::invalid_argument);
}
