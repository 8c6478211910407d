// Condition encoders: pose mask, caption, music and beat embeddings.
#pragma once

#include "musedance/audio.hpp"
#include "musedance/codec.hpp"
#include "musedance/layers.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace musedance {

inline constexpr int kConditionWidth = 64;  // D_c
inline constexpr int kMaxTextTokens = 16;   // N_tok
inline constexpr int kMaxMusicTokens = 128;

/// Strided conv stack from pixel masks to latent resolution. The last layer
/// starts at zero, so a fresh encoder contributes nothing.
template <typename T>
class MaskEncoder {
  public:
    MaskEncoder() = default;
    MaskEncoder(ParamStore<T>& store, int patch_factor, int latent_channels);

    /// One 1-channel mask per frame; returns (frames*H_z*W_z, D_z).
    Var<T> operator()(const std::vector<Image>& masks, const LatentShape& latent) const;

  private:
    std::vector<ConvLayer<T>> down_;
    ConvLayer<T> out_;
    int patch_factor_ = 4;
};

/// Elementwise z0 + feat.
template <typename T>
LatentTensor<T> apply_mask_residual(const LatentTensor<T>& z0, const LatentTensor<T>& feat);

/// Token ids; id 0 is UNK.
class Vocabulary {
  public:
    Vocabulary() = default;
    explicit Vocabulary(const std::vector<std::string>& words);

    /// Words of the three caption templates plus a few motion verbs.
    static Vocabulary standard();

    int id(const std::string& token) const;
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

template <typename T>
class TextEncoder {
  public:
    TextEncoder() = default;
    TextEncoder(ParamStore<T>& store, Vocabulary vocab, int width = kConditionWidth);

    /// Empty captions give the null embedding. Longer than kMaxTextTokens throws.
    TextEmbedding<T> operator()(const std::vector<std::string>& caption) const;
    TextEmbedding<T> null_embedding() const { return {null_, true}; }
    const Vocabulary& vocabulary() const { return vocab_; }

  private:
    Vocabulary vocab_;
    Var<T> table_;
    Var<T> positions_;
    Var<T> null_;
    TransformerBlock<T> block_;
};

template <typename T>
class MusicEncoder {
  public:
    MusicEncoder() = default;
    MusicEncoder(ParamStore<T>& store, int width = kConditionWidth);

    /// Encodes the first clip_span seconds. Throws if the waveform does not
    /// cover the span or the span is shorter than one analysis window.
    MusicEmbedding<T> operator()(const Waveform& w, double clip_span) const;
    /// Same, from precomputed music_patches.
    MusicEmbedding<T> from_patches(const Eigen::MatrixXf& patches) const;
    MusicEmbedding<T> null_embedding() const { return {null_, true}; }

  private:
    LinearLayer<T> proj_;
    Var<T> positions_;
    Var<T> null_;
    std::vector<TransformerBlock<T>> blocks_;
};

/// 2 x d lookup table for the binary beat vector.
template <typename T>
class BeatEmbedder {
  public:
    BeatEmbedder() = default;
    BeatEmbedder(ParamStore<T>& store, int width = kConditionWidth);

    /// Throws on values other than 0 and 1.
    BeatEmbedding<T> operator()(const BeatVector& bits) const;
    const Var<T>& table() const { return table_; }

  private:
    Var<T> table_;
};

}  // namespace musedance
