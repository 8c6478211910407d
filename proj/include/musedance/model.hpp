// Denoising U-Net, its ReferenceNet twin, and the temporal attachments.
#pragma once

#include "musedance/encoders.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace musedance {

struct ModelConfig {
    int latent_channels = 48;
    std::array<int, 3> widths{64, 128, 128};
    int heads = 4;
    int norm_groups = 8;
    int time_width = 256;
    int cond_width = kConditionWidth;
    int patch_factor = 4;
    std::uint64_t codec_seed = 0x5eed;
    int context_frames = 2;  // M
    std::vector<std::string> vocabulary = Vocabulary::standard().words();

    /// JSON stored in checkpoints; loading requires an exact match.
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

inline constexpr int kAttentionSites = 5;

/// Residual conv block with a per-block projection of the timestep embedding.
template <typename T>
struct ResBlock {
    NormLayer<T> norm1, norm2;
    ConvLayer<T> conv1, conv2;
    LinearLayer<T> time_proj;
    LinearLayer<T> skip;  // 1x1, only when channels change
    int groups = 8;

    ResBlock() = default;
    ResBlock(ParamStore<T>& store, const std::string& name, ParamGroup conv_group, ParamGroup time_group, int in,
             int out, int time_width, int groups_);
    Var<T> operator()(const Var<T>& x, const GridShape& g, const Var<T>& temb) const;
};

/// Conv backbone shared by the denoiser and the ReferenceNet. Attention sites
/// are delegated to a callback so the two roles can attach different blocks.
template <typename T>
class UNet {
  public:
    using SiteFn = std::function<Var<T>(int site, const Var<T>& x, const GridShape& grid)>;

    UNet() = default;
    /// With `reference_role` every parameter goes to the reference_net group
    /// and the output head is omitted.
    UNet(ParamStore<T>& store, const std::string& prefix, const ModelConfig& cfg, bool reference_role);

    /// Returns epsilon, or a null Var for the reference role after the last site.
    Var<T> run(const Var<T>& x, const GridShape& grid, int t, const SiteFn& site) const;

    /// Channel width of the hidden states at each site.
    std::array<int, kAttentionSites> site_widths() const { return site_widths_; }
    static GridShape site_grid(const GridShape& latent, int site);

  private:
    Var<T> time_embedding(int t) const;

    bool reference_role_ = false;
    int norm_groups_ = 8;
    int time_in_width_ = 64;
    LinearLayer<T> time1_, time2_;
    ConvLayer<T> in_conv_;
    ResBlock<T> level1_, level2_, mid_, up2_, up1_;
    ConvLayer<T> down1_, down2_;
    NormLayer<T> out_norm_;
    ConvLayer<T> out_conv_;
    ConvLayer<T> out_linear_;  // zero-init linear branch beside the GN/SiLU head
    std::array<int, kAttentionSites> site_widths_{};
};

/// Spatial blocks of one site: reference fusion (self-attention over the
/// width-concatenated token grid) and text cross-attention.
template <typename T>
struct SpatialSite {
    AttentionProjections<T> self_attn;
    AttentionProjections<T> text_attn;  // absent in the ReferenceNet
    int heads = 4;

    /// x_d is (frames*P, C); x_r is (P, C) or null for plain self-attention.
    Var<T> fuse(const Var<T>& x_d, const Var<T>& x_r, int frames) const;
    Var<T> cross_text(const Var<T>& x, const TextEmbedding<T>& text) const;
};

/// Stage-2 attachments of one site.
template <typename T>
struct TemporalSite {
    AttentionProjections<T> music_cross, music_temporal;
    AttentionProjections<T> beat_cross, beat_temporal;
    AttentionProjections<T> motion;
    int heads = 4;
    bool use_positions = true;  // sinusoidal frame positions on temporal queries and beat keys

    Var<T> music(const Var<T>& x, const MusicEmbedding<T>& m, int frames) const;
    Var<T> beat(const Var<T>& x, const BeatEmbedding<T>& b, int frames) const;
    /// ctx is position-major (P*M, C); null or M = 0 gives plain temporal self-attention.
    Var<T> motion_step(const Var<T>& x, const Var<T>& ctx, int ctx_frames, int frames) const;
    Var<T> temporal_self(const AttentionProjections<T>& p, const Var<T>& x, int frames) const;
};

/// Free-standing forms of the site operations, used by tests and tools.
template <typename T>
Var<T> fuse_spatial(const SpatialSite<T>& site, const Var<T>& x_d, const Var<T>& x_r);
template <typename T>
Var<T> cross_attend_text(const SpatialSite<T>& site, const Var<T>& x, const TextEmbedding<T>& text);

/// Spatial view (frames*P, C) <-> temporal view (P*frames, C).
template <typename T>
Var<T> to_temporal_view(const Var<T>& x, int frames, int positions);
template <typename T>
Var<T> to_spatial_view(const Var<T>& x, int frames, int positions);

template <typename T>
class MuseDanceModel : public Denoiser<T> {
  public:
    explicit MuseDanceModel(ModelConfig cfg = {}, std::uint64_t seed = 0, bool temporal = false);

    MuseDanceModel(const MuseDanceModel&) = delete;
    MuseDanceModel& operator=(const MuseDanceModel&) = delete;

    Var<T> predict_noise(const Var<T>& z_t, const LatentShape& shape, int t,
                         const ConditionBundle<T>& cond) const override;
    std::optional<TextEmbedding<T>> null_text() const override { return text_encoder_.null_embedding(); }
    std::optional<MusicEmbedding<T>> null_music() const override;

    /// Pre-attention ReferenceNet features at every site. `mask_residual` may be null.
    ReferenceFeatures<T> reference_features(const LatentTensor<T>& ref, const Var<T>& mask_residual) const;

    /// Post-spatial hidden states of clean frames from a spatial-only pass at t = 0.
    MotionContext<T> motion_context(const LatentTensor<T>& clean, const ConditionBundle<T>& cond) const;

    Var<T> encode_mask(const std::vector<Image>& masks, const LatentShape& latent) const {
        return mask_encoder_(masks, latent);
    }
    TextEmbedding<T> embed_text(const std::vector<std::string>& caption) const { return text_encoder_(caption); }
    MusicEmbedding<T> encode_music(const Waveform& w, double span) const;
    MusicEmbedding<T> encode_music_patches(const Eigen::MatrixXf& patches) const;
    BeatEmbedding<T> embed_beats(const BeatVector& bits) const;

    bool temporal() const { return temporal_; }
    const ModelConfig& config() const { return cfg_; }
    const CodecConfig& codec() const { return codec_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    const std::vector<SpatialSite<T>>& spatial_sites() const { return spatial_; }
    const std::vector<TemporalSite<T>>& temporal_sites() const { return temporal_sites_; }

    /// Zeroes the beat module's output projections at every site (ablation).
    void disable_beat_module();

    void save(const std::filesystem::path& path) const;
    /// Loads a checkpoint with a matching configuration. Temporal groups and
    /// the music encoder may be missing (stage-1 checkpoint into a stage-2 model).
    void load(const std::filesystem::path& path);

  private:
    Var<T> run_denoiser(const Var<T>& x, const LatentShape& shape, int t, const ConditionBundle<T>& cond,
                        bool spatial_only, std::vector<Var<T>>* capture) const;

    ModelConfig cfg_;
    bool temporal_ = false;
    ParamStore<T> store_;
    CodecConfig codec_;
    UNet<T> denoiser_;
    UNet<T> reference_;
    std::vector<SpatialSite<T>> spatial_;
    std::vector<SpatialSite<T>> reference_sites_;
    MaskEncoder<T> mask_encoder_;
    TextEncoder<T> text_encoder_;
    MusicEncoder<T> music_encoder_;
    BeatEmbedder<T> beat_embedder_;
    std::vector<TemporalSite<T>> temporal_sites_;
};

/// Loads the configuration stored in a checkpoint and whether it has temporal groups.
ModelConfig checkpoint_config(const std::filesystem::path& path, bool* has_temporal = nullptr);

}  // namespace musedance
