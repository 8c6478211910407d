#include "musedance/dataset.hpp"
#include "musedance/image_io.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace musedance;

namespace {

std::vector<int> beat_frames(double bpm, double fps, int K) {
    std::vector<int> idx;
    auto bits = beat_grid(bpm, fps, K);
    for (int i = 0; i < K; ++i) {
        if (bits[i]) idx.push_back(i);
    }
    return idx;
}

// Lowest mask row with a sprite pixel.
int bottom_row(const Image& mask) {
    int bottom = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x, 0) > 0.5f) bottom = y;
        }
    }
    return bottom;
}

double centroid_x(const Image& mask) {
    double sx = 0, n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x, 0) > 0.5f) {
                sx += x;
                n += 1;
            }
        }
    }
    return sx / n;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("bounce touches the baseline exactly on beat frames") {
    ClipSpec spec;
    spec.motion = MotionType::bounce;
    auto clip = synth_video(spec);
    REQUIRE(clip.frames.size() == 48);
    const int contact = bounce_baseline(spec) - 1;
    std::vector<int> touching;
    for (int k = 0; k < 48; ++k) {
        const int b = bottom_row(clip.masks[k]);
        CHECK(b <= contact);
        if (b == contact) touching.push_back(k);
    }
    CHECK(touching == std::vector<int>{0, 6, 12, 18, 24, 30, 36, 42});
}

TEST_CASE("motion extrema land on beat frames for every dataset tempo") {
    for (double bpm : {60.0, 72.0, 80.0, 90.0, 120.0, 144.0, 150.0, 180.0}) {
        INFO("bpm " << bpm);
        const auto beats = beat_frames(bpm, 12, 48);

        ClipSpec bounce;
        bounce.bpm = bpm;
        auto b = synth_video(bounce);
        std::vector<int> contact;
        for (int k = 0; k < 48; ++k) {
            if (bottom_row(b.masks[k]) == bounce_baseline(bounce) - 1) contact.push_back(k);
        }
        CHECK(contact == beats);

        ClipSpec sway;
        sway.bpm = bpm;
        sway.motion = MotionType::sway;
        auto s = synth_video(sway);
        std::vector<double> cx;
        for (const auto& m : s.masks) cx.push_back(centroid_x(m));
        const double lo = *std::min_element(cx.begin(), cx.end());
        const double hi = *std::max_element(cx.begin(), cx.end());
        std::vector<int> extreme;
        for (int k = 0; k < 48; ++k) {
            if (std::abs(cx[k] - lo) < 1e-9 || std::abs(cx[k] - hi) < 1e-9) extreme.push_back(k);
        }
        CHECK(extreme == beats);

        ClipSpec spin;
        spin.bpm = bpm;
        spin.motion = MotionType::spin;
        spin.shape = SpriteShape::arrow;
        auto p = synth_video(spin);
        std::vector<int> rest;
        for (int k = 0; k < 48; ++k) {
            if (p.masks[k].pixels == p.masks[0].pixels) rest.push_back(k);
        }
        CHECK(rest == beats);
    }
}

TEST_CASE("masks mark exactly the pixels that differ from the background") {
    for (int i = 0; i < 6; ++i) {
        const ClipSpec spec = sample_clip_spec(i, 42);
        auto clip = synth_video(spec);
        for (std::size_t k = 0; k < clip.frames.size(); k += 7) {
            const auto& f = clip.frames[k];
            const auto& m = clip.masks[k];
            int mismatches = 0;
            // sprite colours have a channel >= 0.6, backgrounds stay <= -0.4
            for (int y = 0; y < f.height; ++y) {
                for (int x = 0; x < f.width; ++x) {
                    const bool bright = std::max({f.at(y, x, 0), f.at(y, x, 1), f.at(y, x, 2)}) >= 0.6f - 1e-6f;
                    const bool on = m.at(y, x, 0) == 1.0f;
                    if (m.at(y, x, 0) != 0.0f && !on) ++mismatches;
                    if (bright != on) ++mismatches;
                }
            }
            CHECK(mismatches == 0);
        }
    }
}

TEST_CASE("synth_video rejects sprites that do not fit") {
    ClipSpec spec;
    spec.sprite_size = 60;
    CHECK_THROWS_AS(synth_video(spec), std::invalid_argument);
    spec = ClipSpec{};
    spec.duration_s = 0.0;
    CHECK_THROWS_AS(synth_video(spec), std::invalid_argument);
}

TEST_CASE("captions describe motion only") {
    std::set<std::string> captions;
    const auto& banned = appearance_vocabulary();
    for (int i = 0; i < 30; ++i) {
        const ClipSpec spec = sample_clip_spec(i, 7);
        const auto cap = make_caption(spec);
        CHECK(cap == make_caption(spec));
        captions.insert(join_tokens(cap));
        for (const auto& tok : cap) CHECK(std::find(banned.begin(), banned.end(), tok) == banned.end());
    }
    CHECK(captions.size() == 3);
    ClipSpec spin;
    spin.motion = MotionType::spin;
    const auto cap = make_caption(spin);
    CHECK(std::find(cap.begin(), cap.end(), "spins") != cap.end());
    CHECK(split_tokens("  a  b c ") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("clip specs are deterministic and span motions and tempos") {
    std::set<double> bpms;
    std::set<int> motions;
    for (int i = 0; i < 24; ++i) {
        const auto a = sample_clip_spec(i, 11);
        const auto b = sample_clip_spec(i, 11);
        CHECK(a.bpm == b.bpm);
        CHECK(a.seed == b.seed);
        CHECK(a.color.r == b.color.r);
        CHECK(a.bpm >= 60.0);
        CHECK(a.bpm <= 180.0);
        CHECK(a.frame_count() == 48);
        bpms.insert(a.bpm);
        motions.insert(static_cast<int>(a.motion));
        if (a.motion == MotionType::spin) CHECK((a.shape == SpriteShape::triangle || a.shape == SpriteShape::arrow));
    }
    CHECK(motions.size() == 3);
    CHECK(bpms.size() >= 4);
    CHECK(parse_motion("sway") == MotionType::sway);
    CHECK_THROWS_AS(parse_motion("jump"), std::invalid_argument);
}

TEST_CASE("build_dataset writes a deterministic validated manifest") {
    const auto root = std::filesystem::temp_directory_path() / "musedance_dataset_test";
    std::filesystem::remove_all(root);
    auto m1 = build_dataset(4, 99, root / "a");
    auto m2 = build_dataset(4, 99, root / "b");
    CHECK(slurp(root / "a" / "manifest.json") == slurp(root / "b" / "manifest.json"));
    CHECK(slurp(root / "a" / "clip_002" / "frame_00017.png") == slurp(root / "b" / "clip_002" / "frame_00017.png"));
    std::set<std::string> ids;
    for (const auto& e : m1.entries) {
        ids.insert(e.clip_id);
        CHECK(e.frame_count == 48);
        CHECK(std::filesystem::exists(root / "a" / e.frame_dir / "frame_00000.png"));
        CHECK(std::filesystem::exists(root / "a" / e.frame_dir / "frame_00047.png"));
        CHECK(std::filesystem::exists(root / "a" / e.audio_path));
    }
    CHECK(ids.size() == 4);

    auto back = read_manifest(root / "a" / "manifest.json");
    REQUIRE(back.entries.size() == 4);
    CHECK(back.format_version == 1);
    CHECK(back.entries[3].caption == m1.entries[3].caption);

    // Round trip through disk: frames are exact, beats come back from the audio.
    auto clips = load_dataset(root / "a");
    REQUIRE(clips.size() == 4);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto spec = sample_clip_spec(static_cast<int>(i), 99);
        const auto direct = make_clip(spec);
        CHECK(clips[i].frames[5].pixels == direct.frames[5].pixels);
        CHECK(clips[i].masks[5].pixels == direct.masks[5].pixels);
        CHECK(extract_beats(clips[i].waveform, 12, 48) == beat_grid(spec.bpm, 12, 48));
    }

    std::filesystem::remove_all(root);
    CHECK_THROWS_AS(read_manifest(root / "missing.json"), std::runtime_error);
    CHECK_THROWS_AS(build_dataset(0, 1, root), std::invalid_argument);
}
