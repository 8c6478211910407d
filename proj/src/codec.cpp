#include "musedance/codec.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace musedance {

CodecConfig make_codec(int patch_factor, std::uint64_t seed) {
    if (patch_factor < 1) throw std::invalid_argument("make_codec: patch factor must be >= 1");
    CodecConfig cfg;
    cfg.patch_factor = patch_factor;
    const int d = cfg.latent_channels();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix<double> g(d, d);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Fix column signs so the factorisation is unique.
    for (int j = 0; j < d; ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    cfg.mixing = q;
    return cfg;
}

CodecConfig identity_codec(int patch_factor) {
    if (patch_factor < 1) throw std::invalid_argument("identity_codec: patch factor must be >= 1");
    CodecConfig cfg;
    cfg.patch_factor = patch_factor;
    cfg.mixing = Matrix<double>::Identity(cfg.latent_channels(), cfg.latent_channels());
    return cfg;
}

template <typename T>
LatentTensor<T> encode(const Image& img, const CodecConfig& cfg) {
    const int p = cfg.patch_factor;
    if (img.channels != 3) throw std::invalid_argument("encode: expected 3 channels");
    if (img.height % p != 0 || img.width % p != 0 || img.height == 0 || img.width == 0) {
        throw std::invalid_argument("encode: image dimensions must be positive multiples of the patch factor");
    }
    const int hz = img.height / p, wz = img.width / p, d = cfg.latent_channels();
    Matrix<double> s2d(hz * wz, d);
    for (int y = 0; y < hz; ++y) {
        for (int x = 0; x < wz; ++x) {
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int c = 0; c < 3; ++c) {
                        s2d(y * wz + x, (dy * p + dx) * 3 + c) = img.at(y * p + dy, x * p + dx, c);
                    }
                }
            }
        }
    }
    LatentTensor<T> z;
    z.shape = {0, hz, wz, d};
    z.data = (s2d * cfg.mixing.transpose()).template cast<T>();
    return z;
}

template <typename T>
Image decode(const LatentTensor<T>& z, const CodecConfig& cfg) {
    const int p = cfg.patch_factor;
    if (z.shape.channels != cfg.latent_channels() || z.data.cols() != cfg.latent_channels()) {
        throw std::invalid_argument("decode: latent channel count does not match the codec");
    }
    if (z.shape.frame_count() != 1) throw std::invalid_argument("decode: expected a single frame");
    const int hz = z.shape.height, wz = z.shape.width;
    const Matrix<double> s2d = z.data.template cast<double>() * cfg.mixing;
    Image img(hz * p, wz * p, 3);
    for (int y = 0; y < hz; ++y) {
        for (int x = 0; x < wz; ++x) {
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int c = 0; c < 3; ++c) {
                        const double v = s2d(y * wz + x, (dy * p + dx) * 3 + c);
                        img.at(y * p + dy, x * p + dx, c) = static_cast<float>(std::clamp(v, -1.0, 1.0));
                    }
                }
            }
        }
    }
    return img;
}

template <typename T>
std::vector<Image> decode_frames(const LatentTensor<T>& z, const CodecConfig& cfg) {
    std::vector<Image> out;
    for (int k = 0; k < z.shape.frame_count(); ++k) out.push_back(decode(z.frame(k), cfg));
    return out;
}

template <typename T>
LatentTensor<T> encode_frames(const std::vector<Image>& frames, const CodecConfig& cfg) {
    std::vector<LatentTensor<T>> parts;
    for (const auto& f : frames) parts.push_back(encode<T>(f, cfg));
    auto z = stack_frames(parts);
    z.shape.frames = static_cast<int>(frames.size());
    return z;
}

template LatentTensor<float> encode(const Image&, const CodecConfig&);
template LatentTensor<double> encode(const Image&, const CodecConfig&);
template Image decode(const LatentTensor<float>&, const CodecConfig&);
template Image decode(const LatentTensor<double>&, const CodecConfig&);
template std::vector<Image> decode_frames(const LatentTensor<float>&, const CodecConfig&);
template std::vector<Image> decode_frames(const LatentTensor<double>&, const CodecConfig&);
template LatentTensor<float> encode_frames(const std::vector<Image>&, const CodecConfig&);
template LatentTensor<double> encode_frames(const std::vector<Image>&, const CodecConfig&);

}  // namespace musedance
