#include "musedance/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

namespace musedance {

namespace {

constexpr int kTimeInputWidth = 64;
constexpr double kSkipDataStd = 0.5;

template <typename T>
Var<T> maybe_add(const Var<T>& a, const Var<T>& b) {
    return b ? ad::add(a, b) : a;
}

// Row r of a frame-major (frames*P) matrix belongs to frame r / P.
std::vector<int> frame_of_row(int frames, int positions) {
    std::vector<int> idx(static_cast<std::size_t>(frames) * positions);
    for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = static_cast<int>(r / positions);
    return idx;
}

// Row r of a position-major (P*frames) matrix is frame r % frames.
std::vector<int> frame_of_row_temporal(int frames, int positions) {
    std::vector<int> idx(static_cast<std::size_t>(frames) * positions);
    for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = static_cast<int>(r % frames);
    return idx;
}

void require_arg(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["latent_channels"] = latent_channels;
    j["widths"] = widths;
    j["heads"] = heads;
    j["norm_groups"] = norm_groups;
    j["time_width"] = time_width;
    j["cond_width"] = cond_width;
    j["patch_factor"] = patch_factor;
    j["codec_seed"] = codec_seed;
    j["context_frames"] = context_frames;
    j["vocabulary"] = vocabulary;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.latent_channels = j.at("latent_channels").get<int>();
        c.widths = j.at("widths").get<std::array<int, 3>>();
        c.heads = j.at("heads").get<int>();
        c.norm_groups = j.at("norm_groups").get<int>();
        c.time_width = j.at("time_width").get<int>();
        c.cond_width = j.at("cond_width").get<int>();
        c.patch_factor = j.at("patch_factor").get<int>();
        c.codec_seed = j.at("codec_seed").get<std::uint64_t>();
        c.context_frames = j.at("context_frames").get<int>();
        c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("invalid model configuration: ") + e.what());
    }
    return c;
}

template <typename T>
ResBlock<T>::ResBlock(ParamStore<T>& store, const std::string& name, ParamGroup conv_group, ParamGroup time_group,
                      int in, int out, int time_width, int groups_)
    : groups(groups_) {
    norm1 = NormLayer<T>(store, name + ".norm1", conv_group, in);
    conv1 = ConvLayer<T>(store, name + ".conv1", conv_group, in, out, 1);
    time_proj = LinearLayer<T>(store, name + ".time", time_group, time_width, out, true);
    norm2 = NormLayer<T>(store, name + ".norm2", conv_group, out);
    conv2 = ConvLayer<T>(store, name + ".conv2", conv_group, out, out, 1);
    if (in != out) skip = LinearLayer<T>(store, name + ".skip", conv_group, in, out, true);
}

template <typename T>
Var<T> ResBlock<T>::operator()(const Var<T>& x, const GridShape& g, const Var<T>& temb) const {
    const int P = g.positions();
    auto h = conv1(ad::silu(norm1.group(x, P, groups)), g);
    h = ad::add_row(h, time_proj(temb));
    h = conv2(ad::silu(norm2.group(h, P, groups)), g);
    return ad::add(skip.weight ? skip(x) : x, h);
}

template <typename T>
UNet<T>::UNet(ParamStore<T>& store, const std::string& prefix, const ModelConfig& cfg, bool reference_role)
    : reference_role_(reference_role), norm_groups_(cfg.norm_groups), time_in_width_(kTimeInputWidth) {
    const ParamGroup conv_g = reference_role ? ParamGroup::reference_net : ParamGroup::conv;
    const ParamGroup time_g = reference_role ? ParamGroup::reference_net : ParamGroup::time_embedding;
    const auto [w1, w2, w3] = cfg.widths;
    const int tw = cfg.time_width, ng = cfg.norm_groups;
    time1_ = LinearLayer<T>(store, prefix + "time.fc1", time_g, kTimeInputWidth, tw, true);
    time2_ = LinearLayer<T>(store, prefix + "time.fc2", time_g, tw, tw, true);
    in_conv_ = ConvLayer<T>(store, prefix + "in", conv_g, cfg.latent_channels, w1, 1);
    level1_ = ResBlock<T>(store, prefix + "l1", conv_g, time_g, w1, w1, tw, ng);
    down1_ = ConvLayer<T>(store, prefix + "down1", conv_g, w1, w2, 2);
    level2_ = ResBlock<T>(store, prefix + "l2", conv_g, time_g, w2, w2, tw, ng);
    down2_ = ConvLayer<T>(store, prefix + "down2", conv_g, w2, w3, 2);
    mid_ = ResBlock<T>(store, prefix + "mid", conv_g, time_g, w3, w3, tw, ng);
    up2_ = ResBlock<T>(store, prefix + "up2", conv_g, time_g, w3 + w2, w2, tw, ng);
    up1_ = ResBlock<T>(store, prefix + "up1", conv_g, time_g, w2 + w1, w1, tw, ng);
    if (!reference_role) {
        out_norm_ = NormLayer<T>(store, prefix + "out_norm", conv_g, w1);
        out_conv_ = ConvLayer<T>(store, prefix + "out", conv_g, w1, cfg.latent_channels, 1);
        out_linear_ = ConvLayer<T>(store, prefix + "out_linear", conv_g, w1, cfg.latent_channels, 1, true);
    }
    site_widths_ = {w1, w2, w3, w2, w1};
}

template <typename T>
GridShape UNet<T>::site_grid(const GridShape& latent, int site) {
    GridShape g = latent;
    const int downs = site == 2 ? 2 : (site == 1 || site == 3) ? 1 : 0;
    for (int i = 0; i < downs; ++i) g = {g.frames, (g.height - 1) / 2 + 1, (g.width - 1) / 2 + 1};
    return g;
}

template <typename T>
Var<T> UNet<T>::time_embedding(int t) const {
    auto e = ad::constant<T>(sinusoid_row<T>(static_cast<double>(t), time_in_width_));
    return ad::silu(time2_(ad::silu(time1_(e))));
}

template <typename T>
Var<T> UNet<T>::run(const Var<T>& x, const GridShape& g0, int t, const SiteFn& site) const {
    require_arg(g0.height % 4 == 0 && g0.width % 4 == 0, "denoiser: latent height and width must be multiples of 4");
    require_arg(x->value.rows() == g0.rows(), "denoiser: latent rows do not match shape");
    const auto temb = time_embedding(t);

    auto h = in_conv_(x, g0);
    h = level1_(h, g0, temb);
    h = site(0, h, g0);
    const auto skip1 = h;

    const GridShape g1 = down1_.output_shape(g0);
    h = level2_(down1_(h, g0), g1, temb);
    h = site(1, h, g1);
    const auto skip2 = h;

    const GridShape g2 = down2_.output_shape(g1);
    h = mid_(down2_(h, g1), g2, temb);
    h = site(2, h, g2);

    h = ad::concat_cols(ad::upsample_nearest2x(h, g2), skip2);
    h = up2_(h, g1, temb);
    h = site(3, h, g1);

    h = ad::concat_cols(ad::upsample_nearest2x(h, g1), skip1);
    h = up1_(h, g0, temb);
    h = site(4, h, g0);

    if (reference_role_) return nullptr;
    return ad::add(out_conv_(ad::silu(out_norm_.group(h, g0.positions(), norm_groups_)), g0), out_linear_(h, g0));
}

template <typename T>
Var<T> to_temporal_view(const Var<T>& x, int frames, int positions) {
    require_arg(x->value.rows() == static_cast<Eigen::Index>(frames) * positions, "to_temporal_view: row mismatch");
    return ad::gather_rows(x, ad::frame_major_to_position_major(frames, positions));
}

template <typename T>
Var<T> to_spatial_view(const Var<T>& x, int frames, int positions) {
    require_arg(x->value.rows() == static_cast<Eigen::Index>(frames) * positions, "to_spatial_view: row mismatch");
    return ad::gather_rows(x, ad::position_major_to_frame_major(frames, positions));
}

template <typename T>
Var<T> SpatialSite<T>::fuse(const Var<T>& x_d, const Var<T>& x_r, int frames) const {
    const int rows = static_cast<int>(x_d->value.rows());
    require_arg(frames > 0 && rows % frames == 0, "fuse_spatial: rows not divisible by frames");
    const int P = rows / frames;
    const auto h = self_attn.norm.layer(x_d);
    const auto q = self_attn.query(h);
    Var<T> a;
    if (!x_r) {
        a = ad::attention(q, self_attn.key(h), self_attn.value(h), heads, frames, P, P);
    } else {
        require_arg(x_r->value.rows() == P && x_r->value.cols() == x_d->value.cols(),
                    "fuse_spatial: reference features do not match the hidden state shape");
        const auto hr = self_attn.norm.layer(x_r);
        // Per frame the key sequence is [x_d tokens, x_R tokens]: the width-concatenated grid.
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(frames) * 2 * P);
        for (int f = 0; f < frames; ++f) {
            for (int i = 0; i < P; ++i) idx.push_back(f * P + i);
            for (int i = 0; i < P; ++i) idx.push_back(rows + i);
        }
        auto k = ad::gather_rows(ad::concat_rows<T>({self_attn.key(h), self_attn.key(hr)}), idx);
        auto v = ad::gather_rows(ad::concat_rows<T>({self_attn.value(h), self_attn.value(hr)}), idx);
        // Only the first half of the fused grid is kept, so only its queries are computed.
        a = ad::attention(q, k, v, heads, frames, P, 2 * P);
    }
    return ad::add(x_d, self_attn.out(a));
}

template <typename T>
Var<T> SpatialSite<T>::cross_text(const Var<T>& x, const TextEmbedding<T>& text) const {
    require_arg(text.tokens && text.tokens->value.cols() == text_attn.key.weight->value.rows(),
                "cross_attend_text: text width mismatch");
    const int rows = static_cast<int>(x->value.rows());
    const int n = static_cast<int>(text.tokens->value.rows());
    const auto h = text_attn.norm.layer(x);
    auto a = ad::attention(text_attn.query(h), text_attn.key(text.tokens), text_attn.value(text.tokens), heads, 1,
                           rows, n);
    return ad::add(x, text_attn.out(a));
}

template <typename T>
Var<T> fuse_spatial(const SpatialSite<T>& site, const Var<T>& x_d, const Var<T>& x_r) {
    require_arg(x_r && x_r->value.rows() == x_d->value.rows() && x_r->value.cols() == x_d->value.cols(),
                "fuse_spatial: shape mismatch");
    return site.fuse(x_d, x_r, 1);
}

template <typename T>
Var<T> cross_attend_text(const SpatialSite<T>& site, const Var<T>& x, const TextEmbedding<T>& text) {
    return site.cross_text(x, text);
}

template <typename T>
Var<T> TemporalSite<T>::temporal_self(const AttentionProjections<T>& p, const Var<T>& x, int frames) const {
    const int rows = static_cast<int>(x->value.rows());
    const int P = rows / frames;
    const int C = static_cast<int>(x->value.cols());
    const auto xt = to_temporal_view(x, frames, P);
    auto h = p.norm.layer(xt);
    if (use_positions) {
        h = ad::add_indexed_rows(h, ad::constant<T>(sinusoid_table<T>(frames, C)), frame_of_row_temporal(frames, P));
    }
    auto a = ad::attention(p.query(h), p.key(h), p.value(h), heads, P, frames, frames);
    return to_spatial_view(ad::add(xt, p.out(a)), frames, P);
}

template <typename T>
Var<T> TemporalSite<T>::music(const Var<T>& x, const MusicEmbedding<T>& m, int frames) const {
    require_arg(m.tokens && m.tokens->value.cols() == music_cross.key.weight->value.rows(),
                "music_module: music embedding width mismatch");
    const int rows = static_cast<int>(x->value.rows());
    require_arg(frames > 0 && rows % frames == 0, "music_module: rows not divisible by frames");
    const int P = rows / frames;
    const int C = static_cast<int>(x->value.cols());
    auto h = music_cross.norm.layer(x);
    if (use_positions) h = ad::add_indexed_rows(h, ad::constant<T>(sinusoid_table<T>(frames, C)), frame_of_row(frames, P));
    const int L = static_cast<int>(m.tokens->value.rows());
    auto a = ad::attention(music_cross.query(h), music_cross.key(m.tokens), music_cross.value(m.tokens), heads, 1,
                           rows, L);
    return temporal_self(music_temporal, ad::add(x, music_cross.out(a)), frames);
}

template <typename T>
Var<T> TemporalSite<T>::beat(const Var<T>& x, const BeatEmbedding<T>& b, int frames) const {
    require_arg(b.rows && b.rows->value.rows() == frames, "beat_module: beat embedding must have one row per frame");
    require_arg(b.rows->value.cols() == beat_cross.key.weight->value.rows(), "beat_module: beat width mismatch");
    const int rows = static_cast<int>(x->value.rows());
    require_arg(rows % frames == 0, "beat_module: rows not divisible by frames");
    const int P = rows / frames;
    const int C = static_cast<int>(x->value.cols());
    auto h = beat_cross.norm.layer(x);
    auto keys = b.rows;
    if (use_positions) {
        h = ad::add_indexed_rows(h, ad::constant<T>(sinusoid_table<T>(frames, C)), frame_of_row(frames, P));
        keys = ad::add(keys, ad::constant<T>(sinusoid_table<T>(frames, static_cast<int>(b.rows->value.cols()))));
    }
    auto a = ad::attention(beat_cross.query(h), beat_cross.key(keys), beat_cross.value(keys), heads, 1, rows, frames);
    return temporal_self(beat_temporal, ad::add(x, beat_cross.out(a)), frames);
}

template <typename T>
Var<T> TemporalSite<T>::motion_step(const Var<T>& x, const Var<T>& ctx, int ctx_frames, int frames) const {
    if (!ctx || ctx_frames == 0) return temporal_self(motion, x, frames);
    const int rows = static_cast<int>(x->value.rows());
    const int P = rows / frames;
    const int C = static_cast<int>(x->value.cols());
    const int M = ctx_frames;
    require_arg(ctx->value.rows() == static_cast<Eigen::Index>(P) * M && ctx->value.cols() == C,
                "motion_module: context does not match the spatial extent of the hidden states");
    const int S = M + frames;
    const auto xt = to_temporal_view(x, frames, P);
    // Per position: context frames at temporal positions 0..M-1, then the current frames.
    std::vector<int> seq_idx, query_idx, pos_idx;
    seq_idx.reserve(static_cast<std::size_t>(P) * S);
    for (int p = 0; p < P; ++p) {
        for (int m = 0; m < M; ++m) seq_idx.push_back(p * M + m);
        for (int f = 0; f < frames; ++f) seq_idx.push_back(P * M + p * frames + f);
        for (int s = 0; s < S; ++s) pos_idx.push_back(s);
        for (int f = 0; f < frames; ++f) query_idx.push_back(p * S + M + f);
    }
    auto h = ad::gather_rows(ad::concat_rows<T>({motion.norm.layer(ctx), motion.norm.layer(xt)}), seq_idx);
    if (use_positions) h = ad::add_indexed_rows(h, ad::constant<T>(sinusoid_table<T>(S, C)), pos_idx);
    auto q = motion.query(ad::gather_rows(h, query_idx));
    auto a = ad::attention(q, motion.key(h), motion.value(h), heads, P, frames, S);
    return to_spatial_view(ad::add(xt, motion.out(a)), frames, P);
}

template <typename T>
MuseDanceModel<T>::MuseDanceModel(ModelConfig cfg, std::uint64_t seed, bool temporal)
    : cfg_(std::move(cfg)), temporal_(temporal), store_(seed) {
    codec_ = make_codec(cfg_.patch_factor, cfg_.codec_seed);
    require_arg(cfg_.latent_channels == codec_.latent_channels(), "model: latent channels must match the codec");
    denoiser_ = UNet<T>(store_, "unet.", cfg_, false);
    const auto widths = denoiser_.site_widths();
    for (int s = 0; s < kAttentionSites; ++s) {
        SpatialSite<T> site;
        const std::string name = "unet.site" + std::to_string(s);
        site.heads = cfg_.heads;
        site.self_attn = AttentionProjections<T>(store_, name + ".self", ParamGroup::spatial_attention, widths[s],
                                                 widths[s], false);
        site.text_attn = AttentionProjections<T>(store_, name + ".text", ParamGroup::text_cross_attention, widths[s],
                                                 cfg_.cond_width, true);
        spatial_.push_back(std::move(site));
    }
    reference_ = UNet<T>(store_, "ref.", cfg_, true);
    for (int s = 0; s < kAttentionSites; ++s) {
        SpatialSite<T> site;
        site.heads = cfg_.heads;
        site.self_attn = AttentionProjections<T>(store_, "ref.site" + std::to_string(s) + ".self",
                                                 ParamGroup::reference_net, widths[s], widths[s], false);
        reference_sites_.push_back(std::move(site));
    }
    mask_encoder_ = MaskEncoder<T>(store_, cfg_.patch_factor, cfg_.latent_channels);
    text_encoder_ = TextEncoder<T>(store_, Vocabulary(cfg_.vocabulary), cfg_.cond_width);
    if (!temporal_) return;

    music_encoder_ = MusicEncoder<T>(store_, cfg_.cond_width);
    beat_embedder_ = BeatEmbedder<T>(store_, cfg_.cond_width);
    for (int s = 0; s < kAttentionSites; ++s) {
        TemporalSite<T> site;
        const std::string name = "temporal.site" + std::to_string(s);
        const int C = widths[s];
        site.heads = cfg_.heads;
        site.music_cross = AttentionProjections<T>(store_, name + ".music_cross", ParamGroup::temporal_music, C,
                                                   cfg_.cond_width, true);
        site.music_temporal = AttentionProjections<T>(store_, name + ".music_temporal", ParamGroup::temporal_music, C,
                                                      C, true);
        site.beat_cross = AttentionProjections<T>(store_, name + ".beat_cross", ParamGroup::temporal_beat, C,
                                                  cfg_.cond_width, true);
        site.beat_temporal = AttentionProjections<T>(store_, name + ".beat_temporal", ParamGroup::temporal_beat, C, C,
                                                     true);
        site.motion = AttentionProjections<T>(store_, name + ".motion", ParamGroup::temporal_motion, C, C, true);
        temporal_sites_.push_back(std::move(site));
    }
}

template <typename T>
std::optional<MusicEmbedding<T>> MuseDanceModel<T>::null_music() const {
    if (!temporal_) return std::nullopt;
    return music_encoder_.null_embedding();
}

template <typename T>
Var<T> MuseDanceModel<T>::run_denoiser(const Var<T>& x, const LatentShape& shape, int t,
                                       const ConditionBundle<T>& cond, bool spatial_only,
                                       std::vector<Var<T>>* capture) const {
    const int frames = shape.frame_count();
    if (cond.reference) require_arg(cond.reference->sites.size() == kAttentionSites, "denoiser: reference site count");
    if (cond.motion && cond.motion->frames > 0) {
        require_arg(cond.motion->sites.size() == kAttentionSites, "denoiser: motion context site count");
    }
    auto site = [&](int s, const Var<T>& h_in, const GridShape&) {
        auto h = spatial_[s].fuse(h_in, cond.reference ? cond.reference->sites[s] : nullptr, frames);
        if (cond.text) h = spatial_[s].cross_text(h, *cond.text);
        if (capture) capture->push_back(h);
        if (!temporal_ || spatial_only) return h;
        const auto& ts = temporal_sites_[s];
        if (cond.music) h = ts.music(h, *cond.music, frames);
        if (cond.beat) h = ts.beat(h, *cond.beat, frames);
        const int M = cond.motion ? cond.motion->frames : 0;
        return ts.motion_step(h, M > 0 ? cond.motion->sites[s] : nullptr, M, frames);
    };
    return denoiser_.run(x, shape.grid(), t, site);
}

template <typename T>
Var<T> MuseDanceModel<T>::predict_noise(const Var<T>& z_t, const LatentShape& shape, int t,
                                        const ConditionBundle<T>& cond) const {
    if (temporal_ && shape.rank() != 4) throw std::invalid_argument("denoiser: stage-2 model needs clip-shaped input");
    require_arg(shape.channels == cfg_.latent_channels && z_t->value.cols() == shape.channels &&
                    z_t->value.rows() == shape.rows(),
                "denoiser: latent does not match its shape");
    if (cond.input_residual) {
        require_arg(cond.input_residual->value.rows() == z_t->value.rows() &&
                        cond.input_residual->value.cols() == z_t->value.cols(),
                    "denoiser: input residual shape mismatch");
    }
    // The output head is too narrow to carry 48 signed channels through SiLU,
    // so z_t goes around it, weighted as the best linear noise estimate for
    // latents of std kSkipDataStd.
    static const NoiseSchedule sched = default_schedule();
    require_arg(t >= 0 && t < sched.T, "denoiser: timestep out of range");
    const double ab = sched.alpha_bars[t];
    const double c_skip = std::sqrt(1.0 - ab) / (ab * kSkipDataStd * kSkipDataStd + 1.0 - ab);
    const auto out = run_denoiser(maybe_add(z_t, cond.input_residual), shape, t, cond, false, nullptr);
    return ad::add(out, ad::scale(z_t, static_cast<T>(c_skip)));
}

template <typename T>
ReferenceFeatures<T> MuseDanceModel<T>::reference_features(const LatentTensor<T>& ref,
                                                           const Var<T>& mask_residual) const {
    require_arg(ref.shape.frame_count() == 1 && ref.shape.channels == cfg_.latent_channels,
                "reference_features: reference must be a single latent frame");
    auto x = maybe_add(ad::constant<T>(ref.data), mask_residual);
    ReferenceFeatures<T> out;
    auto site = [&](int s, const Var<T>& h, const GridShape&) {
        out.sites.push_back(h);
        return reference_sites_[s].fuse(h, nullptr, 1);
    };
    reference_.run(x, ref.shape.grid(), 0, site);
    return out;
}

template <typename T>
MotionContext<T> MuseDanceModel<T>::motion_context(const LatentTensor<T>& clean, const ConditionBundle<T>& cond) const {
    MotionContext<T> ctx;
    ctx.frames = clean.shape.frame_count();
    ConditionBundle<T> spatial;
    spatial.reference = cond.reference;
    spatial.text = cond.text;
    std::vector<Var<T>> captured;
    LatentShape shape = clean.shape;
    shape.frames = ctx.frames;
    run_denoiser(ad::constant<T>(clean.data), shape, 0, spatial, true, &captured);
    for (const auto& h : captured) {
        const int P = static_cast<int>(h->value.rows()) / ctx.frames;
        ctx.sites.push_back(to_temporal_view(h, ctx.frames, P));
    }
    return ctx;
}

template <typename T>
MusicEmbedding<T> MuseDanceModel<T>::encode_music(const Waveform& w, double span) const {
    if (!temporal_) throw std::logic_error("encode_music: model has no temporal modules");
    return music_encoder_(w, span);
}

template <typename T>
MusicEmbedding<T> MuseDanceModel<T>::encode_music_patches(const Eigen::MatrixXf& patches) const {
    if (!temporal_) throw std::logic_error("encode_music: model has no temporal modules");
    return music_encoder_.from_patches(patches);
}

template <typename T>
BeatEmbedding<T> MuseDanceModel<T>::embed_beats(const BeatVector& bits) const {
    if (!temporal_) throw std::logic_error("embed_beats: model has no temporal modules");
    return beat_embedder_(bits);
}

template <typename T>
void MuseDanceModel<T>::disable_beat_module() {
    for (auto& s : temporal_sites_) {
        s.beat_cross.out.weight->value.setZero();
        s.beat_temporal.out.weight->value.setZero();
    }
}

template <typename T>
void MuseDanceModel<T>::save(const std::filesystem::path& path) const {
    save_checkpoint(path, store_, cfg_.to_json());
}

template <typename T>
void MuseDanceModel<T>::load(const std::filesystem::path& path) {
    const auto archive = read_checkpoint(path);
    load_checkpoint(archive, store_, cfg_.to_json(),
                    {ParamGroup::temporal_music, ParamGroup::temporal_beat, ParamGroup::temporal_motion,
                     ParamGroup::music_encoder});
}

ModelConfig checkpoint_config(const std::filesystem::path& path, bool* has_temporal) {
    const auto archive = read_checkpoint(path);
    nlohmann::json topo;
    try {
        topo = nlohmann::json::parse(archive.topology_json);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint topology is not valid JSON: " + path.string());
    }
    if (!topo.contains("model")) throw std::runtime_error("checkpoint has no model configuration: " + path.string());
    if (has_temporal) {
        *has_temporal = false;
        for (const auto& g : archive.groups) {
            auto pg = parse_group(g.name);
            if (pg && is_temporal_group(*pg)) *has_temporal = true;
        }
    }
    return ModelConfig::from_json(topo["model"].dump());
}

#define MUSEDANCE_INSTANTIATE(T)                                                                     \
    template struct ResBlock<T>;                                                                     \
    template class UNet<T>;                                                                          \
    template struct SpatialSite<T>;                                                                  \
    template struct TemporalSite<T>;                                                                 \
    template class MuseDanceModel<T>;                                                                \
    template Var<T> fuse_spatial<T>(const SpatialSite<T>&, const Var<T>&, const Var<T>&);            \
    template Var<T> cross_attend_text<T>(const SpatialSite<T>&, const Var<T>&, const TextEmbedding<T>&); \
    template Var<T> to_temporal_view<T>(const Var<T>&, int, int);                                    \
    template Var<T> to_spatial_view<T>(const Var<T>&, int, int);

MUSEDANCE_INSTANTIATE(float)
MUSEDANCE_INSTANTIATE(double)

#undef MUSEDANCE_INSTANTIATE

}  // namespace musedance
