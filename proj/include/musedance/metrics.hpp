// Frame metrics, Frechet feature distance and the beat-alignment score.
#pragma once

#include "musedance/audio.hpp"
#include "musedance/codec.hpp"

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace musedance {

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// Pixels are mapped to [0, 255] first: colour images from [-1, 1], masks from [0, 1].
double psnr(const Image& a, const Image& b);

/// 11x11 Gaussian window (sigma 1.5), valid windows only, averaged over channels.
double ssim(const Image& a, const Image& b);

/// Rows are samples. Covariances get 1e-6 on the diagonal before the square root.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Square root of a symmetric positive semi-definite matrix by eigendecomposition.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

/// e[k] = mean |frame k - frame k-1|, e[0] = e[1].
std::vector<double> motion_energy(const std::vector<Image>& frames);

/// Pearson correlation between motion energy and the [0.5, 1, 0.5]-smoothed
/// beat indicator. Zero when either sequence is constant.
double beat_alignment_score(const std::vector<Image>& frames, const BeatVector& beats);

struct MetricReport {
    double psnr_db = 0;
    double ssim = 0;
    double frechet = 0;
    double beat_alignment = 0;
    int n_frames = 0;
};

}  // namespace musedance
