#include "musedance/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace musedance {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
    N out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
    }
    return out;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::filesystem::path step_checkpoint(const std::filesystem::path& dir, int step) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06d.ckpt", step);
    return dir / name;
}

// Sample range [start, end) of frames [first, first + count) at fps.
std::pair<long, long> frame_span_samples(int first, int count, double fps, int sample_rate) {
    const long a = std::lround(first * sample_rate / fps);
    const long b = std::lround((first + count) * sample_rate / fps);
    return {a, b};
}

Eigen::MatrixXf window_patches(const Waveform& w, int first, int count, double fps) {
    const auto [a, b] = frame_span_samples(first, count, fps, w.sample_rate);
    std::vector<float> seg(static_cast<std::size_t>(b - a), 0.0f);
    for (long i = a; i < b && i < static_cast<long>(w.samples.size()); ++i) seg[i - a] = w.samples[i];
    return music_patches(seg);
}

LatentTensor<float> frames_slice(const LatentTensor<float>& clip, int first, int count) {
    std::vector<LatentTensor<float>> parts;
    for (int k = first; k < first + count; ++k) parts.push_back(clip.frame(k));
    auto out = stack_frames(parts);
    return out;
}

struct ClipCache {
    LatentTensor<float> latents;  // all frames, rank 4
    BeatVector beats;
};

std::vector<ClipCache> cache_clips(const MuseDanceModel<float>& model, const std::vector<VideoClip>& clips,
                                   bool with_beats) {
    std::vector<ClipCache> out;
    for (const auto& c : clips) {
        ClipCache cc;
        cc.latents = encode_frames<float>(c.frames, model.codec());
        if (with_beats) cc.beats = extract_beats(c.waveform, c.fps, static_cast<int>(c.frames.size()));
        out.push_back(std::move(cc));
    }
    return out;
}

void check_dataset(const std::vector<VideoClip>& clips, const char* who) {
    if (clips.empty()) throw std::invalid_argument(std::string(who) + ": empty dataset");
    for (const auto& c : clips) {
        if (c.frames.size() < 2 || c.masks.size() != c.frames.size()) {
            throw std::invalid_argument(std::string(who) + ": clip needs >= 2 frames and one mask per frame");
        }
    }
}

template <typename Build>
TrainResult run_loop(MuseDanceModel<float>& model, const TrainConfig& cfg, std::mt19937_64& rng, Build build,
                     const StepCallback& on_step, const std::filesystem::path& checkpoint_dir) {
    const NoiseSchedule sched = default_schedule();
    Adam<float> opt(cfg.lr);
    TrainResult result;
    const auto start = Clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TrainingItem<float>> batch;
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(build());
        model.store().zero_grad();
        auto loss = denoising_loss<float>(model, batch, sched, cfg.drop_prob, rng);
        ad::backward(loss);
        opt.step(model.store());
        const double value = loss->value(0, 0);
        if (!std::isfinite(value)) throw std::runtime_error("training: loss is not finite at step " + std::to_string(step));
        result.losses.push_back(value);
        if (on_step) on_step({step, value, cfg.lr, ms_since(start)});
        if (cfg.checkpoint_every > 0 && !checkpoint_dir.empty() && (step + 1) % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(checkpoint_dir);
            model.save(step_checkpoint(checkpoint_dir, step + 1));
        }
    }
    model.store().zero_grad();
    return result;
}

}  // namespace

void TrainConfig::validate() const {
    require(stage == 1 || stage == 2, "config: train.stage must be 1 or 2");
    require(steps >= 0, "config: train.steps must be >= 0");
    require(batch_size >= 1, "config: train.batch_size must be >= 1");
    require(lr > 0 && std::isfinite(lr), "config: train.lr must be > 0");
    require(window >= 1, "config: train.window must be >= 1");
    require(K >= 2, "config: train.K must be >= 2");
    require(drop_prob >= 0 && drop_prob < 1, "config: train.drop_prob must be in [0, 1)");
    require(mask_drop_prob >= 0 && mask_drop_prob <= 1, "config: train.mask_drop_prob must be in [0, 1]");
    require(checkpoint_every >= 0, "config: train.checkpoint_every must be >= 0");
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    auto& t = cfg.train;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(line_no) + " is not key = value");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (value.empty()) throw std::invalid_argument("config: empty value for " + key);
        if (!seen.insert(key).second) throw std::invalid_argument("config: duplicate key " + key);
        if (key == "train.stage") t.stage = parse_number<int>(key, value);
        else if (key == "train.steps") t.steps = parse_number<int>(key, value);
        else if (key == "train.batch_size") t.batch_size = parse_number<int>(key, value);
        else if (key == "train.lr") t.lr = parse_number<double>(key, value);
        else if (key == "train.window") t.window = parse_number<int>(key, value);
        else if (key == "train.K") t.K = parse_number<int>(key, value);
        else if (key == "train.drop_prob") t.drop_prob = parse_number<double>(key, value);
        else if (key == "train.mask_drop_prob") t.mask_drop_prob = parse_number<double>(key, value);
        else if (key == "train.seed") t.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "train.checkpoint_every") t.checkpoint_every = parse_number<int>(key, value);
        else if (key == "sample.steps") cfg.sample.steps = parse_number<int>(key, value);
        else if (key == "sample.guidance") cfg.sample.guidance = parse_number<double>(key, value);
        else if (key == "model.context_frames") cfg.context_frames = parse_number<int>(key, value);
        else throw std::invalid_argument("config: unknown key " + key);
    }
    t.validate();
    require(cfg.sample.steps >= 1, "config: sample.steps must be >= 1");
    require(cfg.sample.guidance >= 0, "config: sample.guidance must be >= 0");
    require(cfg.context_frames >= 0, "config: model.context_frames must be >= 0");
    return cfg;
}

RunConfig read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
    const auto& t = cfg.train;
    std::ostringstream os;
    os.precision(17);
    os << "train.stage = " << t.stage << "\n"
       << "train.steps = " << t.steps << "\n"
       << "train.batch_size = " << t.batch_size << "\n"
       << "train.lr = " << t.lr << "\n"
       << "train.window = " << t.window << "\n"
       << "train.K = " << t.K << "\n"
       << "train.drop_prob = " << t.drop_prob << "\n"
       << "train.mask_drop_prob = " << t.mask_drop_prob << "\n"
       << "train.seed = " << t.seed << "\n"
       << "train.checkpoint_every = " << t.checkpoint_every << "\n"
       << "sample.steps = " << cfg.sample.steps << "\n"
       << "sample.guidance = " << cfg.sample.guidance << "\n"
       << "model.context_frames = " << cfg.context_frames << "\n";
    return os.str();
}

std::pair<int, int> sample_frame_pair(int n_frames, int w, std::mt19937_64& rng) {
    if (w < 1) throw std::invalid_argument("sample_frame_pair: w must be >= 1");
    if (n_frames < 2 * w + 1) throw std::invalid_argument("sample_frame_pair: need N >= 2w + 1");
    const int i = std::uniform_int_distribution<int>(w + 1, n_frames - w)(rng);
    int j = std::uniform_int_distribution<int>(i - w, i + w - 1)(rng);
    if (j >= i) ++j;
    return {i, j};
}

template <typename T>
void Adam<T>::step(ParamStore<T>& store) {
    auto& params = store.params();
    if (m_.size() != params.size()) {
        m_.assign(params.size(), Matrix<T>());
        v_.assign(params.size(), Matrix<T>());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& var = *params[i].var;
        if (!var.requires_grad || var.grad.size() == 0) continue;
        if (m_[i].size() == 0) {
            m_[i] = Matrix<T>::Zero(var.value.rows(), var.value.cols());
            v_[i] = Matrix<T>::Zero(var.value.rows(), var.value.cols());
        }
        m_[i] = T(beta1_) * m_[i] + T(1 - beta1_) * var.grad;
        v_[i] = T(beta2_) * v_[i] + T(1 - beta2_) * var.grad.cwiseAbs2();
        var.value.array() -= T(lr_ / c1) * m_[i].array() / ((v_[i].array() / T(c2)).sqrt() + T(eps_));
    }
}

template class Adam<float>;
template class Adam<double>;

std::string format_step(const StepLog& log) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d\t%.6g\t%.6g\t%.1f", log.step, log.loss, log.lr, log.elapsed_ms);
    return buf;
}

bool trained_in_stage2(ParamGroup g) {
    return is_temporal_group(g) || g == ParamGroup::music_encoder;
}

TrainResult train_stage1(MuseDanceModel<float>& model, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                         const StepCallback& on_step, const std::filesystem::path& checkpoint_dir) {
    cfg.validate();
    if (cfg.stage != 1) throw std::invalid_argument("train_stage1: config stage is not 1");
    if (model.temporal()) throw std::invalid_argument("train_stage1: model has temporal modules");
    check_dataset(clips, "train_stage1");
    for (const auto& c : clips) {
        if (static_cast<int>(c.frames.size()) < 2 * cfg.window + 1) {
            throw std::invalid_argument("train_stage1: clip shorter than 2w + 1 frames");
        }
    }
    auto& store = model.store();
    store.set_all_trainable(true);

    const auto cache = cache_clips(model, clips, false);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> pick_clip(0, static_cast<int>(clips.size()) - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    auto build = [&]() {
        const int c = pick_clip(rng);
        const auto& clip = clips[c];
        const auto [i, j] = sample_frame_pair(static_cast<int>(clip.frames.size()), cfg.window, rng);
        const bool drop_mask = coin(rng) < cfg.mask_drop_prob;
        const LatentTensor<float> ref = cache[c].latents.frame(i - 1);
        TrainingItem<float> item;
        item.z0 = cache[c].latents.frame(j - 1);
        item.cond.reference = model.reference_features(ref, model.encode_mask({clip.masks[i - 1]}, ref.shape));
        item.cond.text = model.embed_text(clip.caption);
        if (!drop_mask) item.cond.input_residual = model.encode_mask({clip.masks[j - 1]}, item.z0.shape);
        return item;
    };
    auto result = run_loop(model, cfg, rng, build, on_step, checkpoint_dir);
    store.set_all_trainable(false);
    return result;
}

TrainResult train_stage2(MuseDanceModel<float>& model, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                         const StepCallback& on_step, const std::filesystem::path& checkpoint_dir) {
    cfg.validate();
    if (cfg.stage != 2) throw std::invalid_argument("train_stage2: config stage is not 2");
    if (!model.temporal()) throw std::invalid_argument("train_stage2: model has no temporal modules");
    check_dataset(clips, "train_stage2");
    for (const auto& c : clips) {
        if (static_cast<int>(c.frames.size()) < cfg.K) throw std::invalid_argument("train_stage2: clip shorter than K");
        if (c.waveform.duration() + 1e-9 < c.frames.size() / c.fps) {
            throw std::invalid_argument("train_stage2: waveform shorter than the clip");
        }
    }
    auto& store = model.store();
    store.set_all_trainable(false);
    for (ParamGroup g : kAllGroups) {
        if (trained_in_stage2(g)) store.set_trainable(g, true);
    }

    const auto cache = cache_clips(model, clips, true);
    std::map<std::pair<int, int>, Eigen::MatrixXf> patch_cache;
    const int M = model.config().context_frames;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> pick_clip(0, static_cast<int>(clips.size()) - 1);

    auto build = [&]() {
        const int c = pick_clip(rng);
        const auto& clip = clips[c];
        const int N = static_cast<int>(clip.frames.size());
        const int s = std::uniform_int_distribution<int>(0, N - cfg.K)(rng);
        const int r = std::uniform_int_distribution<int>(0, N - 1)(rng);
        const int m_eff = std::min(M, s);

        TrainingItem<float> item;
        item.z0 = frames_slice(cache[c].latents, s, cfg.K);
        const LatentTensor<float> ref = cache[c].latents.frame(r);
        item.cond.reference = model.reference_features(ref, model.encode_mask({clip.masks[r]}, ref.shape));
        item.cond.text = model.embed_text(clip.caption);

        auto key = std::make_pair(c, s);
        auto it = patch_cache.find(key);
        if (it == patch_cache.end()) it = patch_cache.emplace(key, window_patches(clip.waveform, s, cfg.K, clip.fps)).first;
        item.cond.music = model.encode_music_patches(it->second);
        item.cond.beat = model.embed_beats(BeatVector(cache[c].beats.begin() + s, cache[c].beats.begin() + s + cfg.K));
        if (m_eff > 0) item.cond.motion = model.motion_context(frames_slice(cache[c].latents, s - m_eff, m_eff), item.cond);
        return item;
    };
    auto result = run_loop(model, cfg, rng, build, on_step, checkpoint_dir);
    store.set_all_trainable(false);
    return result;
}

GenerationResult generate_video(const MuseDanceModel<float>& model, const Image& ref, const Image& ref_mask,
                                const Waveform& w, const std::vector<std::string>& caption, int length,
                                const GenerateOptions& opt) {
    if (!model.temporal()) throw std::invalid_argument("generate_video: model has no temporal modules");
    if (length < 1) throw std::invalid_argument("generate_video: length must be >= 1");
    if (opt.K < 2) throw std::invalid_argument("generate_video: K must be >= 2");
    if (w.duration() + 1e-9 < length / opt.fps) {
        throw std::invalid_argument("generate_video: waveform shorter than length/fps");
    }
    const int chunks = (length + opt.K - 1) / opt.K;
    const int total = chunks * opt.K;

    Waveform padded = w;
    const long need = frame_span_samples(0, total, opt.fps, w.sample_rate).second;
    if (static_cast<long>(padded.samples.size()) < need) padded.samples.resize(need, 0.0f);

    GenerationResult out;
    const BeatVector beats = extract_beats(padded, opt.fps, total);
    out.beats.assign(beats.begin(), beats.begin() + length);

    const LatentTensor<float> ref_z = encode<float>(ref, model.codec());
    ConditionBundle<float> base;
    base.reference = model.reference_features(ref_z, model.encode_mask({ref_mask}, ref_z.shape));
    base.text = model.embed_text(caption);

    const NoiseSchedule sched = default_schedule();
    const LatentShape shape{opt.K, ref_z.shape.height, ref_z.shape.width, ref_z.shape.channels};
    const int M = model.config().context_frames;
    for (int c = 0; c < chunks; ++c) {
        ConditionBundle<float> cond = base;
        cond.music = model.encode_music_patches(window_patches(padded, c * opt.K, opt.K, opt.fps));
        cond.beat = model.embed_beats(BeatVector(beats.begin() + c * opt.K, beats.begin() + (c + 1) * opt.K));
        MotionContext<float> ctx;
        if (c > 0 && M > 0) {
            const int m = std::min(M, opt.K);
            ctx = model.motion_context(frames_slice(out.chunk_latents.back(), opt.K - m, m), cond);
            cond.motion = ctx;
        }
        SamplerOptions so;
        so.steps = opt.steps;
        so.guidance_scale = opt.guidance;
        so.seed = opt.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(c);
        out.chunk_latents.push_back(ddim_sample<float>(model, cond, sched, shape, so));
        out.contexts.push_back(std::move(ctx));
    }
    for (const auto& z : out.chunk_latents) {
        for (auto& f : decode_frames<float>(z, model.codec())) {
            if (static_cast<int>(out.frames.size()) < length) out.frames.push_back(std::move(f));
        }
    }
    return out;
}

Image reconstruct_frame(const MuseDanceModel<float>& model, const Image& ref, const Image& ref_mask,
                        const Image& target_mask, const std::vector<std::string>& caption, int steps,
                        double guidance, std::uint64_t seed) {
    const LatentTensor<float> ref_z = encode<float>(ref, model.codec());
    ConditionBundle<float> cond;
    cond.reference = model.reference_features(ref_z, model.encode_mask({ref_mask}, ref_z.shape));
    cond.text = model.embed_text(caption);
    cond.input_residual = model.encode_mask({target_mask}, ref_z.shape);
    SamplerOptions so;
    so.steps = steps;
    so.guidance_scale = guidance;
    so.seed = seed;
    return decode<float>(ddim_sample<float>(model, cond, default_schedule(), ref_z.shape, so), model.codec());
}

Eigen::MatrixXd frame_features(const std::vector<Image>& frames, const MuseDanceModel<float>* model,
                               const CodecConfig& codec) {
    if (frames.empty()) throw std::invalid_argument("frame_features: no frames");
    Eigen::MatrixXd out;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        Eigen::VectorXd row;
        if (model != nullptr) {
            const auto z = encode<float>(frames[k], model->codec());
            const auto feats = model->reference_features(z, nullptr);
            row = feats.sites[2]->value.colwise().mean().transpose().cast<double>();
        } else {
            row = encode<double>(frames[k], codec).data.colwise().mean().transpose();
        }
        if (k == 0) out.resize(static_cast<Eigen::Index>(frames.size()), row.size());
        out.row(static_cast<Eigen::Index>(k)) = row.transpose();
    }
    return out;
}

}  // namespace musedance
