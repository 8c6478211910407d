// Exactly invertible patch codec between images and latents.
#pragma once

#include "musedance/diffusion.hpp"

#include <cstdint>
#include <vector>

namespace musedance {

/// Interleaved (y, x, c) pixels. Colour images live in [-1, 1], masks in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct CodecConfig {
    int patch_factor = 4;
    Matrix<double> mixing;  // D_z x D_z, orthonormal

    int latent_channels() const { return 3 * patch_factor * patch_factor; }
};

/// Orthonormal mixing from the QR factor of a seeded Gaussian matrix.
CodecConfig make_codec(int patch_factor = 4, std::uint64_t seed = 0x5eed);
CodecConfig identity_codec(int patch_factor = 4);

template <typename T>
LatentTensor<T> encode(const Image& img, const CodecConfig& cfg);

/// Decodes one frame-shaped latent; clamps to [-1, 1].
template <typename T>
Image decode(const LatentTensor<T>& z, const CodecConfig& cfg);

/// Decodes every frame of a clip-shaped (or frame-shaped) latent.
template <typename T>
std::vector<Image> decode_frames(const LatentTensor<T>& z, const CodecConfig& cfg);

template <typename T>
LatentTensor<T> encode_frames(const std::vector<Image>& frames, const CodecConfig& cfg);

}  // namespace musedance
