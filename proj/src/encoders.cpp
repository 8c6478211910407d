#include "musedance/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace musedance {

template <typename T>
MaskEncoder<T>::MaskEncoder(ParamStore<T>& store, int patch_factor, int latent_channels)
    : patch_factor_(patch_factor) {
    if (patch_factor < 1 || (patch_factor & (patch_factor - 1)) != 0) {
        throw std::invalid_argument("MaskEncoder: patch factor must be a power of two");
    }
    int in = 1, width = 16, stage = 0;
    for (int f = patch_factor; f > 1; f /= 2, ++stage) {
        down_.emplace_back(store, "mask.down" + std::to_string(stage), ParamGroup::mask_encoder, in, width, 2);
        in = width;
        width *= 2;
    }
    out_ = ConvLayer<T>(store, "mask.out", ParamGroup::mask_encoder, in, latent_channels, 1, true);
}

template <typename T>
Var<T> MaskEncoder<T>::operator()(const std::vector<Image>& masks, const LatentShape& latent) const {
    if (masks.empty() || static_cast<int>(masks.size()) != latent.frame_count()) {
        throw std::invalid_argument("encode_mask: need one mask per latent frame");
    }
    const int h = latent.height * patch_factor_, w = latent.width * patch_factor_;
    Matrix<T> pixels(static_cast<Eigen::Index>(masks.size()) * h * w, 1);
    for (std::size_t k = 0; k < masks.size(); ++k) {
        const auto& m = masks[k];
        if (m.height != h || m.width != w || m.channels != 1) {
            throw std::invalid_argument("encode_mask: mask is " + std::to_string(m.height) + "x" +
                                        std::to_string(m.width) + "x" + std::to_string(m.channels) + ", expected " +
                                        std::to_string(h) + "x" + std::to_string(w) + "x1");
        }
        for (int i = 0; i < h * w; ++i) pixels(static_cast<Eigen::Index>(k) * h * w + i, 0) = T(m.pixels[i]);
    }
    GridShape shape{static_cast<int>(masks.size()), h, w};
    auto x = ad::constant<T>(std::move(pixels));
    for (const auto& conv : down_) {
        x = ad::silu(conv(x, shape));
        shape = conv.output_shape(shape);
    }
    return out_(x, shape);
}

template <typename T>
LatentTensor<T> apply_mask_residual(const LatentTensor<T>& z0, const LatentTensor<T>& feat) {
    if (!(z0.shape == feat.shape) || z0.data.rows() != feat.data.rows() || z0.data.cols() != feat.data.cols()) {
        throw std::invalid_argument("apply_mask_residual: shape mismatch");
    }
    return {z0.shape, z0.data + feat.data};
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
    words_.push_back("<unk>");
    index_.emplace("<unk>", 0);
    for (const auto& w : words) {
        if (index_.emplace(w, static_cast<int>(words_.size())).second) words_.push_back(w);
    }
}

Vocabulary Vocabulary::standard() {
    return Vocabulary({"the", "figure", "bounces", "up", "and", "down", "in", "rhythm", "sways", "from", "side",
                       "to", "with", "beat", "spins", "around", "place", "music", "jumps", "turns", "moves", "dances",
                       "slowly", "quickly", "left", "right"});
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
}

template <typename T>
TextEncoder<T>::TextEncoder(ParamStore<T>& store, Vocabulary vocab, int width) : vocab_(std::move(vocab)) {
    table_ = store.create("text.table", ParamGroup::text_encoder, vocab_.size(), width, Init::uniform_fan_in, 1);
    positions_ = store.create("text.positions", ParamGroup::text_encoder, kMaxTextTokens, width, Init::normal_small);
    null_ = store.create("text.null", ParamGroup::text_encoder, 1, width, Init::uniform_fan_in, 1);
    block_ = TransformerBlock<T>(store, "text.block0", ParamGroup::text_encoder, width, 4);
}

template <typename T>
TextEmbedding<T> TextEncoder<T>::operator()(const std::vector<std::string>& caption) const {
    if (caption.empty()) return null_embedding();
    if (static_cast<int>(caption.size()) > kMaxTextTokens) {
        throw std::invalid_argument("embed_text: caption longer than " + std::to_string(kMaxTextTokens) + " tokens");
    }
    std::vector<int> ids;
    for (const auto& tok : caption) ids.push_back(vocab_.id(tok));
    const int n = static_cast<int>(ids.size());
    auto x = ad::add(ad::gather_rows(table_, ids), ad::gather_rows(positions_, ad::range_rows(0, n)));
    return {block_(x), false};
}

template <typename T>
MusicEncoder<T>::MusicEncoder(ParamStore<T>& store, int width) {
    proj_ = LinearLayer<T>(store, "music.proj", ParamGroup::music_encoder, kMelBins * kMusicPatchFrames, width, true);
    positions_ = store.create("music.positions", ParamGroup::music_encoder, kMaxMusicTokens, width, Init::normal_small);
    null_ = store.create("music.null", ParamGroup::music_encoder, 1, width, Init::uniform_fan_in, 1);
    for (int i = 0; i < 2; ++i) {
        blocks_.emplace_back(store, "music.block" + std::to_string(i), ParamGroup::music_encoder, width, 4);
    }
}

template <typename T>
MusicEmbedding<T> MusicEncoder<T>::operator()(const Waveform& w, double clip_span) const {
    if (w.sample_rate != kSampleRate) throw std::invalid_argument("encode_music: waveform must be 16 kHz");
    const long n = std::lround(clip_span * kSampleRate);
    if (!(clip_span > 0.0) || n > static_cast<long>(w.samples.size())) {
        throw std::invalid_argument("encode_music: waveform does not cover the clip span");
    }
    if (n < kFftSize) throw std::invalid_argument("encode_music: clip shorter than one analysis window");
    return from_patches(music_patches(std::span<const float>(w.samples.data(), static_cast<std::size_t>(n))));
}

template <typename T>
MusicEmbedding<T> MusicEncoder<T>::from_patches(const Eigen::MatrixXf& patches) const {
    const int L = static_cast<int>(patches.rows());
    if (L < 1 || L > kMaxMusicTokens) throw std::invalid_argument("encode_music: unsupported token count");
    auto x = proj_(ad::constant<T>(patches.cast<T>()));
    x = ad::add(x, ad::gather_rows(positions_, ad::range_rows(0, L)));
    for (const auto& b : blocks_) x = b(x);
    return {x, false};
}

template <typename T>
BeatEmbedder<T>::BeatEmbedder(ParamStore<T>& store, int width) {
    table_ = store.create("beat.table", ParamGroup::temporal_beat, 2, width, Init::uniform_fan_in, 1);
}

template <typename T>
BeatEmbedding<T> BeatEmbedder<T>::operator()(const BeatVector& bits) const {
    if (bits.empty()) throw std::invalid_argument("embed_beats: empty beat vector");
    for (int b : bits) {
        if (b != 0 && b != 1) throw std::invalid_argument("embed_beats: beat vector must be binary");
    }
    return {ad::gather_rows(table_, std::vector<int>(bits.begin(), bits.end()))};
}

template class MaskEncoder<float>;
template class MaskEncoder<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template class MusicEncoder<float>;
template class MusicEncoder<double>;
template class BeatEmbedder<float>;
template class BeatEmbedder<double>;
template LatentTensor<float> apply_mask_residual(const LatentTensor<float>&, const LatentTensor<float>&);
template LatentTensor<double> apply_mask_residual(const LatentTensor<double>&, const LatentTensor<double>&);

}  // namespace musedance
