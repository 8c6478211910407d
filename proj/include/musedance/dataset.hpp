// Procedural (video, music, caption) triplets with beat-locked motion.
#pragma once

#include "musedance/audio.hpp"
#include "musedance/codec.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace musedance {

enum class MotionType { bounce, sway, spin };
enum class SpriteShape { disc, square, diamond, triangle, arrow };

std::string_view motion_name(MotionType m);
MotionType parse_motion(std::string_view name);

struct Rgb {
    float r = 0, g = 0, b = 0;
};

struct ClipSpec {
    double bpm = 120.0;
    MotionType motion = MotionType::bounce;
    SpriteShape shape = SpriteShape::disc;
    Rgb color{0.9f, 0.6f, 0.1f};
    int sprite_size = 18;
    Rgb background_top{-0.8f, -0.8f, -0.6f};
    Rgb background_bottom{-0.8f, -0.8f, -0.6f};  // equal to the top colour for a solid background
    double duration_s = 4.0;
    double fps = 12.0;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;

    int frame_count() const;
};

/// Click train at k*60/bpm plus a quiet tone whose pitch encodes the motion type.
Waveform synth_audio(double bpm, double duration_s, MotionType motion = MotionType::bounce, std::uint64_t seed = 0);

/// Sample index of the k-th click.
long click_sample(double bpm, int k);

/// Analytic beat vector of a synthesized clip: click times quantized to frames.
BeatVector beat_grid(double bpm, double fps, int K);

struct RenderedClip {
    std::vector<Image> frames;  // 3 channels in [-1, 1]
    std::vector<Image> masks;   // 1 channel, exactly 0 or 1
};

RenderedClip synth_video(const ClipSpec& spec);

/// Vertical baseline (first row below the sprite at rest) used for bounce clips.
int bounce_baseline(const ClipSpec& spec);

std::vector<std::string> make_caption(const ClipSpec& spec);
std::string join_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> split_tokens(std::string_view text);

/// Words that describe sprite appearance or background; captions never use them.
const std::vector<std::string>& appearance_vocabulary();

/// Deterministic spec for clip `index` of a dataset.
ClipSpec sample_clip_spec(int index, std::uint64_t dataset_seed);

struct ManifestEntry {
    std::string clip_id;
    std::string frame_dir;
    std::string audio_path;
    std::string caption;
    double bpm = 0;
    std::string motion_type;
    double fps = 0;
    int frame_count = 0;
    std::uint64_t seed = 0;
};

struct TripletManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t dataset_seed = 0;
    int format_version = 1;
};

TripletManifest build_dataset(int n_clips, std::uint64_t dataset_seed, const std::filesystem::path& out_dir);
void write_manifest(const std::filesystem::path& path, const TripletManifest& manifest);
TripletManifest read_manifest(const std::filesystem::path& path);

/// In-memory clip: frames, masks, audio and caption tokens.
struct VideoClip {
    std::vector<Image> frames;
    std::vector<Image> masks;
    Waveform waveform;
    std::vector<std::string> caption;
    double fps = 12.0;
    double bpm = 0.0;
};

VideoClip make_clip(const ClipSpec& spec);
VideoClip load_clip(const std::filesystem::path& dataset_dir, const ManifestEntry& entry);
std::vector<VideoClip> load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace musedance
