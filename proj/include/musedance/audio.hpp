// Waveform I/O, log-mel features and the beat tracker.
#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <vector>

namespace musedance {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFftSize = 1024;
inline constexpr int kHop = 256;
inline constexpr int kMelBins = 64;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// PCM16 mono 16 kHz little-endian. Reading anything else throws std::runtime_error.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

using BeatVector = std::vector<int>;

/// (frames, n_mels) power spectrogram in dB (ref 1, amin 1e-10). With
/// `centered` the signal is zero-padded by n_fft/2 on both sides;
/// otherwise frames start at 0 and only full windows are used.
Eigen::MatrixXd log_mel_db(std::span<const float> samples, bool centered);

/// Slaney-style mel filterbank, (n_mels, n_fft/2 + 1).
Eigen::MatrixXd mel_filterbank(int n_mels = kMelBins, int n_fft = kFftSize, int sample_rate = kSampleRate);

/// Music encoder input: non-overlapping patches of 8 centred log-mel frames,
/// each flattened to 512 features and scaled to roughly [-1, 1]. The last
/// patch is padded with the silence value.
Eigen::MatrixXf music_patches(std::span<const float> samples);

inline constexpr int kMusicPatchFrames = 8;
int music_token_count(std::size_t samples);

/// Positive spectral flux of the centred, 80 dB-limited log-mel; one value per hop.
std::vector<double> onset_envelope(std::span<const float> samples);

/// Beat period in envelope frames (60 to 180 BPM). Returns 0 for a silent envelope.
double estimate_period(const std::vector<double>& envelope);

/// Beat times in seconds, refined to 16-sample resolution.
std::vector<double> detect_beat_times(const Waveform& w);

/// Frame index for a time in seconds; exact half-frame ties go to the earlier frame.
int quantize_to_frame(double seconds, double fps);

BeatVector extract_beats(const Waveform& w, double fps, int K);

}  // namespace musedance
