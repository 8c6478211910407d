#include "musedance/dataset.hpp"

#include "musedance/image_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace musedance {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBounceHeight = 14.0;
constexpr double kSwayAmplitude = 14.0;
constexpr int kClickSamples = 80;  // 5 ms
constexpr double kBpmChoices[] = {60, 72, 80, 90, 120, 144, 150, 180};

// Monotone warp of [0, 1] with slope 1.9 at the ends and 0.1 mid-way, so
// motion is fastest right at the beats.
double warp(double phase) { return phase + 0.9 * std::sin(2.0 * kPi * phase) / (2.0 * kPi); }

bool inside(SpriteShape shape, double u, double v, double r) {
    switch (shape) {
        case SpriteShape::disc:
            return u * u + v * v <= r * r;
        case SpriteShape::square:
            return std::abs(u) <= r && std::abs(v) <= r;
        case SpriteShape::diamond:
            return std::abs(u) + std::abs(v) <= r;
        case SpriteShape::triangle:
            return v >= -r && v <= r && std::abs(u) <= (v + r) / 2.0;
        case SpriteShape::arrow: {
            const bool stem = std::abs(u) <= r / 3.0 && v >= -r / 3.0 && v <= r;
            const bool head = v >= -r && v <= -r / 3.0 && std::abs(u) <= 1.5 * (v + r);
            return stem || head;
        }
    }
    return false;
}

// Beat frames covering at least [0, K) plus the beat after the clip end.
std::vector<int> beat_frames_through(double bpm, double fps, int K) {
    std::vector<int> frames;
    for (int k = 0;; ++k) {
        const int f = quantize_to_frame(static_cast<double>(click_sample(bpm, k)) / kSampleRate, fps);
        frames.push_back(f);
        if (f >= K) break;
    }
    return frames;
}

Rgb quantized(Rgb c) {
    auto q = [](float v) { return from_byte_signed(to_byte_signed(v)); };
    return {q(c.r), q(c.g), q(c.b)};
}

std::string frame_name(const char* prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d.png", prefix, index);
    return buf;
}

}  // namespace

std::string_view motion_name(MotionType m) {
    switch (m) {
        case MotionType::bounce:
            return "bounce";
        case MotionType::sway:
            return "sway";
        case MotionType::spin:
            return "spin";
    }
    return "bounce";
}

MotionType parse_motion(std::string_view name) {
    if (name == "bounce") return MotionType::bounce;
    if (name == "sway") return MotionType::sway;
    if (name == "spin") return MotionType::spin;
    throw std::invalid_argument("unknown motion type: " + std::string(name));
}

int ClipSpec::frame_count() const { return static_cast<int>(std::lround(duration_s * fps)); }

long click_sample(double bpm, int k) { return std::lround(static_cast<double>(k) * 60.0 / bpm * kSampleRate); }

Waveform synth_audio(double bpm, double duration_s, MotionType motion, std::uint64_t seed) {
    if (!(bpm > 0.0)) throw std::invalid_argument("synth_audio: bpm must be positive");
    Waveform w;
    const long n = std::lround(duration_s * kSampleRate);
    w.samples.assign(static_cast<std::size_t>(std::max(0L, n)), 0.0f);
    const double tone = motion == MotionType::bounce ? 110.0 : motion == MotionType::sway ? 147.0 : 196.0;
    std::vector<double> buf(w.samples.size());
    for (long i = 0; i < n; ++i) buf[i] = 0.05 * std::sin(2.0 * kPi * tone * i / kSampleRate);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    for (int k = 0;; ++k) {
        const long start = click_sample(bpm, k);
        if (start >= n) break;
        for (long i = 0; i < kClickSamples && start + i < n; ++i) {
            buf[start + i] += noise(rng) * std::exp(-static_cast<double>(i) / 20.0);
        }
    }
    double peak = 0.0;
    for (double v : buf) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0.0 ? 0.9 / peak : 0.0;
    for (long i = 0; i < n; ++i) w.samples[i] = static_cast<float>(buf[i] * gain);
    return w;
}

BeatVector beat_grid(double bpm, double fps, int K) {
    BeatVector bits(K, 0);
    for (int f : beat_frames_through(bpm, fps, K)) {
        if (f >= 0 && f < K) bits[f] = 1;
    }
    return bits;
}

int bounce_baseline(const ClipSpec& spec) { return spec.height - 6; }

RenderedClip synth_video(const ClipSpec& spec) {
    const int K = spec.frame_count();
    if (K < 1) throw std::invalid_argument("synth_video: clip has no frames");
    if (spec.sprite_size < 2 || spec.sprite_size + 2 * kBounceHeight > spec.height ||
        spec.sprite_size + 2 * kSwayAmplitude > spec.width) {
        throw std::invalid_argument("synth_video: sprite does not fit in the frame");
    }
    const double r = spec.sprite_size / 2.0;
    const auto beats = beat_frames_through(spec.bpm, spec.fps, K);

    RenderedClip clip;
    for (int k = 0; k < K; ++k) {
        std::size_t n = 0;
        while (n + 1 < beats.size() && beats[n + 1] <= k) ++n;
        const double phase = static_cast<double>(k - beats[n]) / (beats[n + 1] - beats[n]);
        const double sign = (n % 2 == 0) ? 1.0 : -1.0;

        double cx = spec.width / 2.0, cy = spec.height / 2.0, angle = 0.0;
        switch (spec.motion) {
            case MotionType::bounce:
                cy = bounce_baseline(spec) - r - kBounceHeight * 4.0 * phase * (1.0 - phase);
                break;
            case MotionType::sway:
                cy = spec.height / 2.0 + 4.0;
                cx = spec.width / 2.0 + kSwayAmplitude * sign * (1.0 - 2.0 * warp(phase));
                break;
            case MotionType::spin:
                angle = 2.0 * kPi * warp(phase);
                break;
        }
        const double ca = std::cos(angle), sa = std::sin(angle);

        Image frame(spec.height, spec.width, 3);
        Image mask(spec.height, spec.width, 1);
        for (int y = 0; y < spec.height; ++y) {
            const float t = spec.height > 1 ? static_cast<float>(y) / (spec.height - 1) : 0.0f;
            const Rgb bg = quantized({spec.background_top.r + t * (spec.background_bottom.r - spec.background_top.r),
                                      spec.background_top.g + t * (spec.background_bottom.g - spec.background_top.g),
                                      spec.background_top.b + t * (spec.background_bottom.b - spec.background_top.b)});
            for (int x = 0; x < spec.width; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = ca * dx + sa * dy;
                const double v = -sa * dx + ca * dy;
                const bool on = inside(spec.shape, u, v, r);
                const Rgb c = on ? quantized(spec.color) : bg;
                frame.at(y, x, 0) = c.r;
                frame.at(y, x, 1) = c.g;
                frame.at(y, x, 2) = c.b;
                mask.at(y, x, 0) = on ? 1.0f : 0.0f;
            }
        }
        clip.frames.push_back(std::move(frame));
        clip.masks.push_back(std::move(mask));
    }
    return clip;
}

std::vector<std::string> make_caption(const ClipSpec& spec) {
    switch (spec.motion) {
        case MotionType::bounce:
            return split_tokens("the figure bounces up and down in rhythm");
        case MotionType::sway:
            return split_tokens("the figure sways from side to side with the beat");
        case MotionType::spin:
            return split_tokens("the figure spins around in place to the music");
    }
    return {};
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

const std::vector<std::string>& appearance_vocabulary() {
    static const std::vector<std::string> words = {
        "red",    "green", "blue",     "yellow",   "orange", "purple", "pink",       "white", "black",
        "grey",   "gray",  "cyan",     "magenta",  "brown",  "disc",   "circle",     "round", "square",
        "diamond", "triangle", "arrow", "background", "gradient", "bright", "dark", "colour", "color",
        "small",  "large", "big",
    };
    return words;
}

ClipSpec sample_clip_spec(int index, std::uint64_t dataset_seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(dataset_seed), static_cast<std::uint32_t>(dataset_seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    ClipSpec s;
    s.motion = static_cast<MotionType>(index % 3);
    s.bpm = kBpmChoices[std::uniform_int_distribution<int>(0, std::size(kBpmChoices) - 1)(rng)];
    if (s.motion == MotionType::spin) {
        s.shape = u01(rng) < 0.5f ? SpriteShape::triangle : SpriteShape::arrow;
    } else {
        s.shape = static_cast<SpriteShape>(std::uniform_int_distribution<int>(0, 4)(rng));
    }
    s.sprite_size = std::uniform_int_distribution<int>(16, 20)(rng);
    // Bright sprite over a dark background so every sprite pixel differs from the background.
    Rgb c{-0.2f + 1.2f * u01(rng), -0.2f + 1.2f * u01(rng), -0.2f + 1.2f * u01(rng)};
    float* channels[] = {&c.r, &c.g, &c.b};
    *channels[std::uniform_int_distribution<int>(0, 2)(rng)] = 0.6f + 0.4f * u01(rng);
    s.color = quantized(c);
    auto dark = [&] { return Rgb{-1.0f + 0.6f * u01(rng), -1.0f + 0.6f * u01(rng), -1.0f + 0.6f * u01(rng)}; };
    s.background_top = quantized(dark());
    s.background_bottom = u01(rng) < 0.5f ? s.background_top : quantized(dark());
    s.seed = rng();
    return s;
}

VideoClip make_clip(const ClipSpec& spec) {
    auto rendered = synth_video(spec);
    VideoClip clip;
    clip.frames = std::move(rendered.frames);
    clip.masks = std::move(rendered.masks);
    clip.waveform = synth_audio(spec.bpm, spec.duration_s, spec.motion, spec.seed);
    clip.caption = make_caption(spec);
    clip.fps = spec.fps;
    clip.bpm = spec.bpm;
    return clip;
}

void write_manifest(const std::filesystem::path& path, const TripletManifest& manifest) {
    nlohmann::json j;
    j["format_version"] = manifest.format_version;
    j["dataset_seed"] = manifest.dataset_seed;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        j["entries"].push_back({{"clip_id", e.clip_id},
                                {"frame_dir", e.frame_dir},
                                {"audio_path", e.audio_path},
                                {"caption", e.caption},
                                {"bpm", e.bpm},
                                {"motion_type", e.motion_type},
                                {"fps", e.fps},
                                {"frame_count", e.frame_count},
                                {"seed", e.seed}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write_manifest: write failed for " + path.string());
}

TripletManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    TripletManifest m;
    try {
        const auto j = nlohmann::json::parse(in);
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != 1) throw std::runtime_error("unsupported format_version");
        m.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.clip_id = e.at("clip_id").get<std::string>();
            entry.frame_dir = e.at("frame_dir").get<std::string>();
            entry.audio_path = e.at("audio_path").get<std::string>();
            entry.caption = e.at("caption").get<std::string>();
            entry.bpm = e.at("bpm").get<double>();
            entry.motion_type = e.at("motion_type").get<std::string>();
            entry.fps = e.at("fps").get<double>();
            entry.frame_count = e.at("frame_count").get<int>();
            entry.seed = e.at("seed").get<std::uint64_t>();
            m.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error("read_manifest: " + path.string() + ": " + ex.what());
    }
    return m;
}

TripletManifest build_dataset(int n_clips, std::uint64_t dataset_seed, const std::filesystem::path& out_dir) {
    if (n_clips < 1) throw std::invalid_argument("build_dataset: need at least one clip");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("build_dataset: cannot create " + out_dir.string() + ": " + ec.message());

    TripletManifest manifest;
    manifest.dataset_seed = dataset_seed;
    for (int i = 0; i < n_clips; ++i) {
        const ClipSpec spec = sample_clip_spec(i, dataset_seed);
        char id[32];
        std::snprintf(id, sizeof(id), "clip_%03d", i);
        const std::filesystem::path dir = out_dir / id;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw std::runtime_error("build_dataset: cannot create " + dir.string() + ": " + ec.message());

        const VideoClip clip = make_clip(spec);
        for (std::size_t k = 0; k < clip.frames.size(); ++k) {
            write_png(dir / frame_name("frame", static_cast<int>(k)), clip.frames[k]);
            write_png(dir / frame_name("mask", static_cast<int>(k)), clip.masks[k]);
        }
        write_wav(dir / "audio.wav", clip.waveform);

        ManifestEntry e;
        e.clip_id = id;
        e.frame_dir = id;
        e.audio_path = std::string(id) + "/audio.wav";
        e.caption = join_tokens(clip.caption);
        e.bpm = spec.bpm;
        e.motion_type = std::string(motion_name(spec.motion));
        e.fps = spec.fps;
        e.frame_count = spec.frame_count();
        e.seed = spec.seed;
        manifest.entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.json", manifest);

    for (const auto& e : manifest.entries) {
        if (!std::filesystem::exists(out_dir / e.frame_dir) || !std::filesystem::exists(out_dir / e.audio_path)) {
            throw std::runtime_error("build_dataset: missing output for " + e.clip_id);
        }
    }
    return manifest;
}

VideoClip load_clip(const std::filesystem::path& dataset_dir, const ManifestEntry& entry) {
    VideoClip clip;
    const auto dir = dataset_dir / entry.frame_dir;
    for (int k = 0; k < entry.frame_count; ++k) {
        clip.frames.push_back(read_png(dir / frame_name("frame", k)));
        if (clip.frames.back().channels != 3) throw std::runtime_error("load_clip: frame is not RGB in " + dir.string());
        clip.masks.push_back(read_png(dir / frame_name("mask", k)));
        if (clip.masks.back().channels != 1) throw std::runtime_error("load_clip: mask is not grey in " + dir.string());
    }
    clip.waveform = read_wav(dataset_dir / entry.audio_path);
    clip.caption = split_tokens(entry.caption);
    clip.fps = entry.fps;
    clip.bpm = entry.bpm;
    return clip;
}

std::vector<VideoClip> load_dataset(const std::filesystem::path& dataset_dir) {
    const auto manifest = read_manifest(dataset_dir / "manifest.json");
    std::vector<VideoClip> clips;
    for (const auto& e : manifest.entries) clips.push_back(load_clip(dataset_dir, e));
    if (clips.empty()) throw std::runtime_error("load_dataset: manifest has no entries: " + dataset_dir.string());
    return clips;
}

}  // namespace musedance
